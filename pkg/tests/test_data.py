import filecmp
import os

import numpy as np
import pytest

from memefx.classifiers import ClassifierSpec
from memefx.data import FeatureMatrix, LABELS, generate_synthetic, load_features, load_manifest, save_features
from memefx.errors import ConfigError, ContractError, FormatError, IntegrityError, ParseError
from memefx.evaluation import cross_validate
from memefx.image import read_ppm, write_ppm
from memefx.text import preprocess_text


def write_manifest(tmp_path, rows, header="id,image_path,text,label"):
    write_ppm(tmp_path / "img.ppm", np.full((4, 4, 3), 100.0))
    path = tmp_path / "manifest.csv"
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


class TestManifest:
    def test_happy_path_keeps_order(self, tmp_path):
        path = write_manifest(tmp_path, ['m1,img.ppm,"Hello, world",negative',
                                         "m2,img.ppm,so so,neutral",
                                         "m3,img.ppm,great,positive"])
        ds = load_manifest(path, (8, 8))
        assert ds.ids == ["m1", "m2", "m3"]
        assert ds.labels.tolist() == [0, 1, 2]
        assert ds[0].text == "Hello, world"
        assert ds[0]._image is None  # decoded lazily
        assert ds[0].image.shape == (8, 8, 3)

    def test_unknown_label_names_row(self, tmp_path):
        path = write_manifest(tmp_path, ["m1,img.ppm,a,negative", "m2,img.ppm,b,meh"])
        with pytest.raises(ParseError, match="row 2"):
            load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = write_manifest(tmp_path, ["m1,img.ppm,a,negative", "m1,img.ppm,b,positive"])
        with pytest.raises(IntegrityError, match="m1"):
            load_manifest(path)

    def test_missing_image_lists_path(self, tmp_path):
        path = write_manifest(tmp_path, ["m1,nope.ppm,a,negative"])
        with pytest.raises(IntegrityError, match="nope.ppm"):
            load_manifest(path)

    def test_missing_column(self, tmp_path):
        path = write_manifest(tmp_path, ["m1,img.ppm,negative"], header="id,image_path,label")
        with pytest.raises(ParseError):
            load_manifest(path)

    def test_column_mapping(self, tmp_path):
        path = write_manifest(tmp_path, ["m1,img.ppm,a,very_positive"],
                              header="image_name,file,text_corrected,overall_sentiment")
        ds = load_manifest(path, columns={"id": "image_name", "image_path": "file", "text": "text_corrected",
                                          "label": "overall_sentiment"},
                           label_map={"very_positive": 2})
        assert ds.labels.tolist() == [2]


class TestFeatures:
    def test_round_trip_is_exact(self, tmp_path, rng):
        fm = FeatureMatrix(rng.normal(size=(6, 4)) * 10.0 ** rng.integers(-300, 300, size=(6, 4)),
                           [0, 1, 2, 0, 1, 2], [f"id,{i}" for i in range(6)])
        save_features(fm, tmp_path / "f.csv")
        back = load_features(tmp_path / "f.csv")
        assert back.values.tobytes() == fm.values.tobytes()
        assert back.labels.tolist() == fm.labels.tolist() and back.ids == fm.ids

    def test_header(self, tmp_path):
        save_features(FeatureMatrix(np.zeros((1, 3)), [1], ["a"]), tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "id,label,f0,f1,f2"

    def test_hand_written(self, tmp_path):
        (tmp_path / "f.csv").write_text("id,label,f0,f1\na,0,1,2\nb,2,3,4\n")
        fm = load_features(tmp_path / "f.csv")
        assert fm.values.tolist() == [[1.0, 2.0], [3.0, 4.0]] and fm.labels.tolist() == [0, 2]

    def test_short_row(self, tmp_path):
        (tmp_path / "f.csv").write_text("id,label,f0,f1\na,0,1,2\nb,2,3\n")
        with pytest.raises(FormatError, match="line 3"):
            load_features(tmp_path / "f.csv")

    def test_misaligned_matrix(self):
        with pytest.raises(ContractError):
            FeatureMatrix(np.zeros((2, 2)), [0], ["a", "b"])

    def test_non_finite(self):
        with pytest.raises(ContractError):
            FeatureMatrix(np.array([[np.inf]]), [0], ["a"])


def bag_and_colour(out_dir):
    """Independent featurisation: token counts plus mean raw pixel colour."""
    ds = load_manifest(os.path.join(out_dir, "manifest.csv"))
    docs = [preprocess_text(s.text) for s in ds]
    vocab = sorted({t for d in docs for t in d})
    index = {t: j for j, t in enumerate(vocab)}
    bags = np.zeros((len(ds), len(vocab)))
    for i, d in enumerate(docs):
        for t in d:
            bags[i, index[t]] += 1
    colours = np.array([read_ppm(s.image_path).mean(axis=(0, 1)) / 255.0 for s in ds])
    return np.hstack([bags, colours]), ds.labels


class TestSynthetic:
    def test_layout(self, tmp_path):
        manifest, glove, fasttext = generate_synthetic(tmp_path, 4, 0.5, seed=1, image_size=8)
        ds = load_manifest(manifest, (8, 8))
        assert len(ds) == 12 and sorted(np.bincount(ds.labels).tolist()) == [4, 4, 4]
        assert read_ppm(ds[0].image_path).shape == (8, 8, 3)
        assert open(glove).read() != open(fasttext).read()

    def test_same_seed_same_bytes(self, tmp_path):
        a = generate_synthetic(tmp_path / "a", 5, 0.7, seed=3, image_size=8)
        b = generate_synthetic(tmp_path / "b", 5, 0.7, seed=3, image_size=8)
        for x, y in zip(a, b):
            assert filecmp.cmp(x, y, shallow=False)
        for name in os.listdir(tmp_path / "a" / "images"):
            assert filecmp.cmp(tmp_path / "a" / "images" / name, tmp_path / "b" / "images" / name, shallow=False)

    def test_different_seed_differs(self, tmp_path):
        a = generate_synthetic(tmp_path / "a", 5, 0.7, seed=3, image_size=8)[0]
        b = generate_synthetic(tmp_path / "b", 5, 0.7, seed=4, image_size=8)[0]
        assert open(a).read() != open(b).read()

    def test_fully_separable(self, tmp_path):
        generate_synthetic(tmp_path, 20, 1.0, seed=0, image_size=16)
        X, y = bag_and_colour(tmp_path)
        # oracle: nearest class centroid classifies every sample correctly
        centroids = np.stack([X[y == c].mean(axis=0) for c in range(3)])
        nearest = np.argmin(((X[:, None, :] - centroids[None]) ** 2).sum(axis=2), axis=1)
        assert np.array_equal(nearest, y)
        rep = cross_validate(ClassifierSpec("knn"), FeatureMatrix(X, y, [str(i) for i in range(len(y))]))
        assert rep.mean == 1.0

    def test_no_signal(self, tmp_path):
        generate_synthetic(tmp_path, 40, 0.0, seed=0, image_size=16)
        X, y = bag_and_colour(tmp_path)
        rep = cross_validate(ClassifierSpec("knn"), FeatureMatrix(X, y, [str(i) for i in range(len(y))]))
        assert rep.mean < 0.5

    def test_class_pools_cover_embeddings(self, tmp_path):
        manifest, glove, _ = generate_synthetic(tmp_path, 3, 1.0, seed=0, image_size=8)
        words = {line.split()[0] for line in open(glove)}
        ds = load_manifest(manifest)
        content = {w.lower().strip(".!") for s in ds for w in s.text.split()} - {"the", "a", "when", "is", "my",
                                                                                  "of", "on"}
        assert content <= words

    @pytest.mark.parametrize("kw", [{"n_per_class": 0}, {"separability": 1.5}])
    def test_bad_arguments(self, tmp_path, kw):
        args = dict(n_per_class=2, separability=0.5, seed=0)
        args.update(kw)
        with pytest.raises(ConfigError):
            generate_synthetic(tmp_path, **args)


def test_label_names():
    assert LABELS == ("negative", "neutral", "positive")
