"""Caption preprocessing, vocabulary building and word-vector loading."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from nltk.stem.porter import PorterStemmer

from .errors import ConfigError, FormatError

PAD_ID = 0
OOV_ID = 1

_TOKEN = re.compile(r"[^\W_]+")
_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def _load_stopwords():
    text = resources.files("memefx").joinpath("stopwords.txt").read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.update(line.split())
    return frozenset(words)


STOPWORDS = _load_stopwords()


@dataclass(frozen=True)
class PreprocConfig:
    lowercase: bool = True
    remove_stopwords: bool = True
    stem: bool = True
    stopwords: frozenset = STOPWORDS


@lru_cache(maxsize=65536)
def stem(token):
    """Porter stem, re-applied until it stops changing."""
    prev, cur = None, token
    while cur != prev:
        prev, cur = cur, _stemmer.stem(cur)
    return cur


def tokenize(raw):
    return _TOKEN.findall(raw)


def preprocess_text(raw, config=PreprocConfig()):
    """Tokenize, lowercase, drop stopwords and stem a caption.

    >>> preprocess_text("The CAT sat on mats!!")
    ['cat', 'sat', 'mat']
    """
    # lowercasing first keeps tokenization stable for case mappings that
    # change character classes; stopword matching is case-insensitive anyway
    text = raw.lower() if config.lowercase else raw
    tokens = tokenize(text)
    if config.remove_stopwords:
        tokens = [t for t in tokens if t not in config.stopwords]
    if config.stem:
        tokens = [stem(t) for t in tokens]
        if config.remove_stopwords:
            tokens = [t for t in tokens if t not in config.stopwords]
    return tokens


@dataclass
class Vocabulary:
    """Token-to-id map with PAD=0 and OOV=1 reserved."""

    token_to_id: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.token_to_id) + 2

    def __contains__(self, token):
        return token in self.token_to_id

    def __getitem__(self, token):
        return self.token_to_id.get(token, OOV_ID)

    @property
    def tokens(self):
        """Corpus tokens in id order (ids 2, 3, ...)."""
        return list(self.token_to_id)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.token_to_id:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls({t: i + 2 for i, t in enumerate(toks)})


def build_vocab(corpus, min_count=1):
    if min_count < 1:
        raise ConfigError("min_count must be at least 1")
    counts = Counter(tok for doc in corpus for tok in doc)
    vocab = {}
    for doc in corpus:
        for tok in doc:
            if tok not in vocab and counts[tok] >= min_count:
                vocab[tok] = len(vocab) + 2
    return Vocabulary(vocab)


def encode_and_pad(tokens, vocab, length):
    if length < 1:
        raise ConfigError("pad length must be at least 1")
    ids = [vocab[t] for t in tokens[:length]]
    return ids + [PAD_ID] * (length - len(ids))


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    oov_policy: str = "zero_vector"
    # per corpus token: "raw", "stem" or "oov"
    sources: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def read_vectors(path, dim):
    """Parse a ``word v1 ... vdim`` text file into an ordered dict."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != dim + 1:
                raise FormatError(f"expected {dim + 1} fields, found {len(fields)}", line=lineno)
            try:
                values = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from None
            vectors.setdefault(fields[0], values)
    return vectors


def load_embeddings(path, vocab, dim, oov_policy="zero_vector"):
    """Build an embedding matrix for ``vocab`` from a word-vector text file.

    A vocabulary token is matched against the file's words verbatim first,
    then against the stems of the file's words (vocabulary tokens are
    already stemmed, pretrained files are not). Misses get the OOV policy
    vector; the PAD row is always zero.
    """
    if oov_policy not in ("zero_vector", "mean_vector"):
        raise ConfigError(f"unknown oov_policy {oov_policy!r}")
    vectors = read_vectors(path, dim)
    by_stem = {}
    for word, vec in vectors.items():
        by_stem.setdefault(stem(word.lower()), vec)

    if oov_policy == "mean_vector" and vectors:
        fallback = np.mean(np.array(list(vectors.values())), axis=0)
    else:
        fallback = np.zeros(dim)

    matrix = np.zeros((len(vocab), dim))
    matrix[OOV_ID] = fallback
    sources = {}
    for tok, idx in vocab.token_to_id.items():
        if tok in vectors:
            matrix[idx] = vectors[tok]
            sources[tok] = "raw"
        elif tok in by_stem:
            matrix[idx] = by_stem[tok]
            sources[tok] = "stem"
        else:
            matrix[idx] = fallback
            sources[tok] = "oov"
    matrix[PAD_ID] = 0.0
    return EmbeddingTable(matrix, oov_policy, sources)
