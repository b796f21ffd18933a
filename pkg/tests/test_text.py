import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memefx.errors import FormatError
from memefx.text import (OOV_ID, PAD_ID, STOPWORDS, Vocabulary, build_vocab, encode_and_pad,
                         load_embeddings, preprocess_text, stem)


class TestPreprocess:
    def test_example_sentence(self):
        assert preprocess_text("The CAT sat on mats!!") == ["cat", "sat", "mat"]

    @pytest.mark.parametrize("raw", ["", "...!!!", "   ", "the of on"])
    def test_nothing_survives(self, raw):
        assert preprocess_text(raw) == []

    def test_determiners_and_prepositions_are_stopwords(self):
        for w in ["the", "a", "an", "this", "those", "of", "in", "on", "at", "under", "between", "with"]:
            assert w in STOPWORDS

    def test_stopword_list_size(self):
        assert 150 <= len(STOPWORDS) <= 250

    def test_punctuation_splits_tokens(self):
        assert preprocess_text("cats,dogs;birds") == ["cat", "dog", "bird"]

    @settings(max_examples=300, deadline=None)
    @given(st.text(alphabet=st.characters(codec="utf-8"), max_size=60))
    def test_idempotent(self, raw):
        once = preprocess_text(raw)
        assert preprocess_text(" ".join(once)) == once

    @settings(max_examples=300, deadline=None)
    @given(st.from_regex(r"[a-z]{1,15}", fullmatch=True))
    def test_stemming_never_lengthens(self, word):
        assert len(stem(word)) <= len(word)


class TestVocabulary:
    def test_min_count(self):
        assert build_vocab([["a", "b"], ["a"]], min_count=2).token_to_id == {"a": 2}

    def test_empty_corpus(self):
        v = build_vocab([], min_count=3)
        assert v.token_to_id == {} and len(v) == 2

    def test_first_seen_order(self):
        assert build_vocab([["x", "y"]], 1).token_to_id == {"x": 2, "y": 3}

    def test_round_trip(self, tmp_path):
        v = build_vocab([["b", "a", "c"], ["a"]])
        v.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt").token_to_id == v.token_to_id


class TestEncode:
    vocab = Vocabulary({"cat": 2, "sat": 3})

    def test_pad_fill(self):
        assert encode_and_pad(["cat", "sat"], self.vocab, 4) == [2, 3, 0, 0]

    def test_oov(self):
        assert encode_and_pad(["zebra"], self.vocab, 2) == [OOV_ID, PAD_ID]

    def test_truncation(self):
        toks = ["cat", "sat"] * 5
        assert encode_and_pad(toks, self.vocab, 4) == [2, 3, 2, 3]

    @given(st.lists(st.sampled_from(["cat", "sat", "dog", "x"]), max_size=20), st.integers(1, 12))
    def test_length_and_trailing_pads(self, toks, length):
        ids = encode_and_pad(toks, self.vocab, length)
        assert len(ids) == length
        first_pad = ids.index(PAD_ID) if PAD_ID in ids else length
        assert all(i == PAD_ID for i in ids[first_pad:])
        assert all(i != PAD_ID for i in ids[:first_pad])


class TestEmbeddings:
    def write(self, tmp_path, text):
        path = tmp_path / "vec.txt"
        path.write_text(text, encoding="utf-8")
        return path

    def test_direct_hit(self, tmp_path):
        table = load_embeddings(self.write(tmp_path, "cat 1.0 2.0\n"), Vocabulary({"cat": 2}), 2)
        assert table.matrix[2].tolist() == [1.0, 2.0]
        assert table.sources == {"cat": "raw"}

    def test_oov_zero(self, tmp_path):
        table = load_embeddings(self.write(tmp_path, "cat 1.0 2.0\n"), Vocabulary({"zebra": 2}), 2)
        assert table.matrix[2].tolist() == [0.0, 0.0]
        assert table.sources == {"zebra": "oov"}

    def test_oov_mean(self, tmp_path):
        path = self.write(tmp_path, "cat 1.0 2.0\ndog 3.0 4.0\n")
        table = load_embeddings(path, Vocabulary({"zebra": 2}), 2, oov_policy="mean_vector")
        assert table.matrix[2].tolist() == [2.0, 3.0]
        assert table.matrix[OOV_ID].tolist() == [2.0, 3.0]

    def test_stem_fallback(self, tmp_path):
        # vocabulary holds stems; the file holds the inflected word
        table = load_embeddings(self.write(tmp_path, "running 5.0 6.0\n"), Vocabulary({"run": 2}), 2)
        assert table.matrix[2].tolist() == [5.0, 6.0]
        assert table.sources == {"run": "stem"}

    def test_pad_row_zero_even_if_file_has_it(self, tmp_path):
        table = load_embeddings(self.write(tmp_path, "<pad> 1 1\n"), Vocabulary({}), 2, "mean_vector")
        assert table.matrix[PAD_ID].tolist() == [0.0, 0.0]
        assert table.matrix.shape == (2, 2)

    def test_malformed_line(self, tmp_path):
        with pytest.raises(FormatError, match="line 1"):
            load_embeddings(self.write(tmp_path, "cat 1.0\n"), Vocabulary({"cat": 2}), 2)

    def test_non_numeric(self, tmp_path):
        with pytest.raises(FormatError, match="line 2"):
            load_embeddings(self.write(tmp_path, "cat 1 2\ndog x 2\n"), Vocabulary({"cat": 2}), 2)

    def test_rows_match_vocab(self, tmp_path, rng):
        words = [f"w{i}" for i in range(10)]
        text = "".join(f"{w} " + " ".join(map(str, rng.normal(size=3))) + "\n" for w in words)
        vocab = build_vocab([words[:7] + ["unknown"]])
        table = load_embeddings(self.write(tmp_path, text), vocab, 3)
        assert table.matrix.shape == (len(vocab), 3)
        assert np.all(table.matrix[PAD_ID] == 0)
