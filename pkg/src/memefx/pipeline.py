"""File-staged pipeline: preprocess -> train extractor -> extract -> classify -> report.

Each stage reads the previous stage's artifacts from ``cfg.out_dir`` so it
can be rerun on its own.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .classifiers import ClassifierSpec, load_classifier, save_classifier
from .data import MultimodalInput, load_features, load_manifest, save_features
from .errors import ConfigError, IntegrityError
from .evaluation import (REPORT_HEADER, cross_validate, evaluate_test as _test_f1, format_table,
                         parse_report_rows, report_row, stratified_split)
from .extractors import ARCH_TAPS, FeatureTap, MultimodalFeatureExtractor
from .text import PreprocConfig, build_vocab, load_embeddings

log = logging.getLogger(__name__)

PARTS = ("train", "val", "test")


def _out(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


@dataclass
class Prepared:
    inputs: MultimodalInput
    labels: np.ndarray
    ids: list
    parts: dict
    tables: list

    def split(self, part):
        idx = self.parts[part]
        return self.inputs[idx], self.labels[idx], [self.ids[i] for i in idx]


def preprocess(cfg):
    """Split the manifest, build the vocabulary on the training part and encode everything."""
    cfg.check_paths()
    pre = cfg.preprocess
    ds = load_manifest(cfg.manifest, pre.image_size, cfg.columns, cfg.label_map)
    if len(ds) == 0:
        raise IntegrityError(f"{cfg.manifest}: no samples")
    parts = dict(zip(PARTS, stratified_split(ds.labels, cfg.split, cfg.seed)))
    tokens = [s.tokens(PreprocConfig()) for s in ds]
    vocab = build_vocab([tokens[i] for i in parts["train"]], pre.min_count)
    tables = [load_embeddings(p, vocab, pre.embed_dim, pre.oov_policy) for p in cfg.embeddings]
    if len(tables) == 1:
        tables = tables * 2
    inputs = ds.to_inputs(vocab, pre.pad_length)

    vocab.save(_out(cfg, "vocab.txt"))
    with open(_out(cfg, "split.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "part"])
        where = {int(i): part for part, idx in parts.items() for i in idx}
        for i, s in enumerate(ds):
            w.writerow([s.id, s.label, where[i]])
    ag.save_checkpoint(_out(cfg, "inputs.fkt"), {
        "token_ids": inputs.token_ids.astype(np.float64),
        "images": inputs.images,
        "labels": ds.labels.astype(np.float64),
    })
    ag.save_checkpoint(_out(cfg, "embeddings.fkt"), {f"table{i}": t.matrix for i, t in enumerate(tables)})
    with open(_out(cfg, "embedding_sources.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token"] + [f"table{i}" for i in range(len(tables))])
        for tok in vocab.tokens:
            w.writerow([tok] + [t.sources[tok] for t in tables])
    log.info("preprocessed %d samples, vocabulary of %d", len(ds), len(vocab))
    return load_prepared(cfg)


def load_prepared(cfg):
    try:
        arrays = ag.load_checkpoint(_out(cfg, "inputs.fkt"))
        tables = ag.load_checkpoint(_out(cfg, "embeddings.fkt"))
        with open(_out(cfg, "split.csv"), encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"{exc.filename} missing; run `memefx preprocess` first") from None
    inputs = MultimodalInput(arrays["token_ids"].astype(np.int64), arrays["images"])
    parts = {p: np.array([i for i, r in enumerate(rows) if r["part"] == p], dtype=np.intp) for p in PARTS}
    return Prepared(inputs, arrays["labels"].astype(np.int64), [r["id"] for r in rows], parts,
                    [tables[k] for k in sorted(tables)])


def _extractor(cfg, prepared, arch):
    return MultimodalFeatureExtractor(arch=arch, tables=prepared.tables,
                                      model_config=cfg.model, train_config=cfg.train)


def train_extractor(cfg, arch):
    if arch not in ARCH_TAPS:
        raise ConfigError(f"unknown architecture {arch!r}")
    prepared = load_prepared(cfg)
    X_tr, y_tr, _ = prepared.split("train")
    X_va, y_va, _ = prepared.split("val")
    if len(X_va) == 0:
        raise ConfigError("the validation split is empty; early stopping needs one")
    ext = _extractor(cfg, prepared, arch).fit(X_tr, y_tr, eval_set=(X_va, y_va))
    ext.save(_out(cfg, f"extractor-{arch}.fkt"))
    with open(_out(cfg, f"extractor-{arch}.log"), "w", encoding="utf-8") as fh:
        fh.write(ext.train_log_.to_text())
    return ext


def _arch_for(tap):
    tap = FeatureTap(tap)
    return next(a for a, taps in ARCH_TAPS.items() if tap in taps)


def features_path(cfg, tap, part):
    return _out(cfg, f"features-{FeatureTap(tap).value}-{part}.csv")


def extract(cfg, tap, parts=("train", "test")):
    tap = FeatureTap(tap)
    arch = _arch_for(tap)
    prepared = load_prepared(cfg)
    ckpt = _out(cfg, f"extractor-{arch}.fkt")
    if not os.path.isfile(ckpt):
        raise ConfigError(f"{ckpt} missing; run `memefx train-extractor --arch {arch}` first")
    ext = _extractor(cfg, prepared, arch).set_params(tap=tap).load(ckpt, prepared.inputs[:1])
    paths = []
    for part in parts:
        X, y, ids = prepared.split(part)
        fm = ext.extract(X, labels=y, ids=ids)
        path = features_path(cfg, tap, part)
        save_features(fm, path)
        paths.append(path)
    return paths


def _specs(cfg, family=None, k=None):
    if family is None:
        return cfg.classifiers
    hyper = {"k": k} if family == "knn" and k is not None else {}
    return [ClassifierSpec(family, hyper)]


def train_classifiers(cfg, tap, family=None, k=None):
    fm = load_features(features_path(cfg, tap, "train"))
    paths = []
    for spec in _specs(cfg, family, k):
        clf = spec.build(cfg.seed).fit(fm.values, fm.labels)
        path = _out(cfg, f"classifier-{spec.name}-{FeatureTap(tap).value}.fkc")
        save_classifier(clf, path, family=spec.family)
        paths.append(path)
    return paths


def _tap_label(tap):
    return {"me_avg": "ME", "biae_latent": "BiAE", "rb1": "RB1", "rb2": "RB2"}[FeatureTap(tap).value]


def evaluate_cv(cfg, tap, family=None, k=None):
    fm = load_features(features_path(cfg, tap, "train"))
    lines = [REPORT_HEADER]
    reports = {}
    for spec in _specs(cfg, family, k):
        rep = cross_validate(spec, fm, cfg.cv_k, cfg.seed)
        reports[spec.name] = rep
        lines.append(report_row(spec.name, _tap_label(tap), rep))
    with open(_out(cfg, f"cv-{FeatureTap(tap).value}.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return reports


def evaluate_test(cfg, tap, family=None, k=None):
    """Macro-F1 on the test part for every classifier trained on ``tap``."""
    fm = load_features(features_path(cfg, tap, "test"))
    scores = {}
    for spec in _specs(cfg, family, k):
        path = _out(cfg, f"classifier-{spec.name}-{FeatureTap(tap).value}.fkc")
        if not os.path.isfile(path):
            raise ConfigError(f"{path} missing; run `memefx train-classifier` first")
        scores[spec.name] = _test_f1(load_classifier(path), fm, spec.n_classes)
    with open(_out(cfg, f"test-{FeatureTap(tap).value}.csv"), "w", encoding="utf-8") as fh:
        fh.write("model,tap,macro_f1\n")
        for name, score in scores.items():
            fh.write(f"{name},{_tap_label(tap)},{100.0 * score:.4f}\n")
    return scores


def report(cfg):
    """Collect every CV result under ``out_dir`` into one aligned table."""
    rows, tests = [], []
    for tap in FeatureTap:
        path = _out(cfg, f"cv-{tap.value}.csv")
        if os.path.isfile(path):
            with open(path, encoding="utf-8") as fh:
                rows.extend(parse_report_rows(fh.read()))
        path = _out(cfg, f"test-{tap.value}.csv")
        if os.path.isfile(path):
            with open(path, encoding="utf-8") as fh:
                next(fh)
                tests.extend(line.strip().split(",") for line in fh if line.strip())
    text = "Cross-validation macro F1 (%)\n"
    text += format_table([(f"{m}-{t}", *vals) for m, t, *vals in rows])
    if tests:
        width = max(len(f"{m}-{t}") for m, t, _ in tests)
        text += "\nTest macro F1 (%)\n"
        text += "".join(f"{(m + '-' + t).ljust(width)} | {float(v):.2f}\n" for m, t, v in tests)
    with open(_out(cfg, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
