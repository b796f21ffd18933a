"""Datasets, manifests, synthetic memes and feature files."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, FormatError, IntegrityError, ParseError
from .image import load_image, write_ppm
from .text import PAD_ID, PreprocConfig, encode_and_pad, preprocess_text

LABELS = ("negative", "neutral", "positive")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}


@dataclass
class MultimodalInput:
    """Aligned batch of padded token ids ``(n, L)`` and images ``(n, H, W, 3)``."""

    token_ids: np.ndarray
    images: np.ndarray = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.token_ids.ndim != 2:
            raise ContractError(f"token_ids must be 2-D, got shape {self.token_ids.shape}")
        if self.images is not None:
            self.images = np.asarray(self.images, dtype=np.float64)
            if self.images.ndim != 4 or len(self.images) != len(self.token_ids):
                raise ContractError(
                    f"images {self.images.shape} do not align with token ids {self.token_ids.shape}")

    def __len__(self):
        return len(self.token_ids)

    def __getitem__(self, idx):
        return MultimodalInput(self.token_ids[idx], None if self.images is None else self.images[idx])

    @property
    def mask(self):
        return self.token_ids != PAD_ID

    @property
    def seq_len(self):
        return self.token_ids.shape[1]

    @property
    def image_shape(self):
        if self.images is None:
            raise ContractError("this input carries no images")
        return self.images.shape[1:]


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: np.ndarray
    ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = list(self.ids)
        if self.values.ndim != 2:
            raise ContractError(f"feature values must be 2-D, got {self.values.shape}")
        if not (len(self.values) == len(self.labels) == len(self.ids)):
            raise ContractError("values, labels and ids must have the same number of rows")
        if not np.isfinite(self.values).all():
            raise ContractError("feature matrix contains non-finite values")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_dims(self):
        return self.values.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureMatrix(self.values[idx], self.labels[idx], [self.ids[i] for i in idx])


def save_features(fm, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(fm.n_dims)])
        for sid, label, row in zip(fm.ids, fm.labels, fm.values):
            w.writerow([sid, int(label)] + ["%.17g" % v for v in row])


def load_features(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "label"]:
        raise FormatError(f"{path}: missing 'id,label,f0,...' header", line=1)
    dims = len(rows[0]) - 2
    ids, labels, values = [], [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != dims + 2:
            raise FormatError(f"expected {dims} feature values, found {len(row) - 2}", line=lineno)
        try:
            labels.append(int(row[1]))
            values.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
        ids.append(row[0])
    return FeatureMatrix(np.array(values, dtype=np.float64).reshape(len(ids), dims), labels, ids)


@dataclass
class Sample:
    id: str
    text: str
    label: int
    image_path: str
    image_size: tuple = (224, 224)
    _image: np.ndarray = field(default=None, repr=False)

    @property
    def image(self):
        """Resized, min-max scaled image; decoded on first access."""
        if self._image is None:
            self._image = load_image(self.image_path, *self.image_size)
        return self._image

    def tokens(self, config=PreprocConfig()):
        return preprocess_text(self.text, config)


@dataclass
class Dataset:
    samples: list
    source: str = None

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def ids(self):
        return [s.id for s in self.samples]

    def subset(self, idx):
        return Dataset([self.samples[i] for i in idx], self.source)

    def to_inputs(self, vocab, pad_length, with_images=True, config=PreprocConfig()):
        ids = np.array([encode_and_pad(s.tokens(config), vocab, pad_length) for s in self.samples],
                       dtype=np.int64).reshape(len(self), pad_length)
        images = np.stack([s.image for s in self.samples]) if with_images and self.samples else None
        return MultimodalInput(ids, images)


DEFAULT_COLUMNS = {"id": "id", "image_path": "image_path", "text": "text", "label": "label"}


def load_manifest(path, image_size=(224, 224), columns=None, label_map=None):
    """Read an ``id,image_path,text,label`` CSV; images resolve relative to the file.

    ``columns`` maps the four logical fields to other header names and
    ``label_map`` maps raw label strings to class ids, for manifests with a
    different schema.
    """
    cols = dict(DEFAULT_COLUMNS, **(columns or {}))
    labels = dict(LABEL_IDS) if label_map is None else dict(label_map)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: header lacks column(s) {missing}", line=1)
        samples, seen = [], set()
        for row_no, row in enumerate(reader, 1):
            raw_label = (row[cols["label"]] or "").strip()
            if raw_label not in labels:
                raise ParseError(f"row {row_no} (line {reader.line_num}): unknown label {raw_label!r}")
            sid = row[cols["id"]]
            if sid in seen:
                raise IntegrityError(f"row {row_no}: duplicate id {sid!r}")
            seen.add(sid)
            img = os.path.join(base, row[cols["image_path"]])
            if not os.path.isfile(img):
                raise IntegrityError(f"row {row_no}: image file not found: {img}")
            samples.append(Sample(sid, row[cols["text"]] or "", int(labels[raw_label]), img, tuple(image_size)))
    return Dataset(samples, source=path)


_CONSONANTS = "bdfgklmnprtvz"
_VOWELS = "aeiou"


def _pseudo_words(rng, count, taken):
    from .text import STOPWORDS, stem

    words = []
    stems = {stem(w) for w in taken}
    while len(words) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syll)) + _CONSONANTS[rng.integers(len(_CONSONANTS))]
        s = stem(w)
        if w in taken or s in stems or w in STOPWORDS or s in STOPWORDS:
            continue
        taken.add(w)
        stems.add(s)
        words.append(w)
    return words


_CLASS_COLORS = np.array([[230.0, 40.0, 40.0], [40.0, 230.0, 40.0], [40.0, 40.0, 230.0]])


def _write_vectors(path, words, rng, dim):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in words:
            fh.write(w + " " + " ".join("%.6f" % v for v in rng.normal(0.0, 1.0, dim)) + "\n")


def generate_synthetic(out_dir, n_per_class, separability, seed, image_size=32, text_len=8,
                       pool_size=12, embed_dim=16):
    """Write a synthetic meme corpus: manifest, PPM images and two vector files.

    Class ``c`` captions draw each word from class ``c``'s word pool with
    probability ``separability`` and from the union of all pools otherwise.
    Images blend a class-coloured central patch on a grey background with
    uniform pixel noise, weighted by ``separability``. At 0 the classes are
    indistinguishable.

    Returns the paths of the manifest and the two vector files.
    """
    if n_per_class < 1:
        raise ConfigError("n_per_class must be at least 1")
    if not 0.0 <= separability <= 1.0:
        raise ConfigError("separability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    taken = set()
    pools = [_pseudo_words(rng, pool_size, taken) for _ in LABELS]
    every = [w for pool in pools for w in pool]
    fillers = ["the", "a", "when", "is", "my", "of", "on"]

    lo, hi = image_size // 4, image_size - image_size // 4
    rows = []
    labels = np.repeat(np.arange(len(LABELS)), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    for i, c in enumerate(labels):
        words = []
        for _ in range(text_len):
            if rng.random() < separability:
                words.append(pools[c][rng.integers(pool_size)])
            else:
                words.append(every[rng.integers(len(every))])
            if rng.random() < 0.25:
                words.append(fillers[rng.integers(len(fillers))])
        text = " ".join(words).capitalize() + ("!" if rng.random() < 0.5 else ".")

        pattern = np.full((image_size, image_size, 3), 128.0)
        pattern[lo:hi, lo:hi] = _CLASS_COLORS[c]
        noise = rng.uniform(0.0, 255.0, size=pattern.shape)
        pixels = separability * pattern + (1.0 - separability) * noise
        sid = f"m{i:05d}"
        rel = f"images/{sid}.ppm"
        write_ppm(os.path.join(out_dir, rel), pixels)
        rows.append((sid, rel, text, LABELS[c]))

    manifest = os.path.join(out_dir, "manifest.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "image_path", "text", "label"])
    w.writerows(rows)
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())

    vocab_words = every + ["extra", "words", "meme"]
    glove = os.path.join(out_dir, "glove.txt")
    fasttext = os.path.join(out_dir, "fasttext.txt")
    _write_vectors(glove, vocab_words, np.random.default_rng([seed, 1]), embed_dim)
    _write_vectors(fasttext, vocab_words, np.random.default_rng([seed, 2]), embed_dim)
    return manifest, glove, fasttext
