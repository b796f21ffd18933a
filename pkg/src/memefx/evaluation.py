"""Stratified splitting, stratified k-fold CV and macro-F1 reporting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classifiers import ClassifierSpec
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.75
    val: float = 0.10
    test: float = 0.15

    def __post_init__(self):
        parts = (self.train, self.val, self.test)
        if min(parts) < 0 or abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be non-negative and sum to 1, got {parts}")

    def as_tuple(self):
        return self.train, self.val, self.test


def _largest_remainder(count, ratios):
    quotas = [count * r for r in ratios]
    alloc = [math.floor(q) for q in quotas]
    leftover = count - sum(alloc)
    # stable sort: equal remainders go to the earlier part
    order = sorted(range(len(ratios)), key=lambda i: -(quotas[i] - alloc[i]))
    for i in order[:leftover]:
        alloc[i] += 1
    return alloc


def stratified_split(labels, ratios=SplitRatios(), seed=0):
    """Per-class shuffled train/val/test index arrays, sizes by largest remainder."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        if len(members) < 3:
            raise ContractError(f"class {c} has {len(members)} member(s); at least 3 are needed")
        members = members[rng.permutation(len(members))]
        start = 0
        for part, size in zip(parts, _largest_remainder(len(members), ratios.as_tuple())):
            part.extend(members[start:start + size].tolist())
            start += size
    return tuple(np.array(sorted(p), dtype=np.intp) for p in parts)


def stratified_kfold(y, k=10, seed=0):
    """``k`` disjoint test-index folds with per-class counts within one of proportional.

    Each class is shuffled and dealt round-robin; the dealing position
    carries over between classes so fold sizes stay balanced.
    """
    y = np.asarray(y)
    if k < 2:
        raise ConfigError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for c in np.unique(y):
        members = np.nonzero(y == c)[0]
        if len(members) < k:
            raise ContractError(f"class {c} has {len(members)} member(s), fewer than k={k}")
        for i in members[rng.permutation(len(members))]:
            folds[pos % k].append(int(i))
            pos += 1
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


class StratifiedKFold:
    """scikit-learn style splitter yielding ``(train_idx, test_idx)``."""

    def __init__(self, n_splits=10, seed=0):
        self.n_splits = n_splits
        self.seed = seed

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_splits

    def split(self, X, y, groups=None):
        n = len(y)
        for test in stratified_kfold(y, self.n_splits, self.seed):
            mask = np.ones(n, dtype=bool)
            mask[test] = False
            yield np.nonzero(mask)[0], test


def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def macro_f1(y_true, y_pred, n_classes=3):
    """Unweighted mean of per-class F1; a class never predicted nor present scores 0."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"y_true has {y_true.shape} entries but y_pred {y_pred.shape}")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ContractError(f"labels must lie in [0, {n_classes})")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # (tp+fp) + (tp+fn)
    f1 = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1), 0.0)
    return float(f1.sum() / n_classes)


@dataclass
class FoldReport:
    per_fold: list
    mean: float = field(init=False)
    min: float = field(init=False)
    max: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        vals = [float(v) for v in self.per_fold]
        if not vals:
            raise ContractError("a fold report needs at least one fold")
        self.per_fold = vals
        n = len(vals)
        self.mean = math.fsum(vals) / n
        self.min = min(vals)
        self.max = max(vals)
        # population std
        self.std = math.sqrt(math.fsum((v - self.mean) ** 2 for v in vals) / n)


def cross_validate(spec, features, k=10, seed=0, n_classes=None):
    """Stratified k-fold macro-F1 of ``spec`` on ``features``; fold i fits with seed+i."""
    if not isinstance(spec, ClassifierSpec):
        raise ContractError("cross_validate expects a ClassifierSpec")
    n_classes = n_classes or spec.n_classes
    y = features.labels
    folds = stratified_kfold(y, k, seed)
    scores = []
    for i, test in enumerate(folds):
        mask = np.ones(len(y), dtype=bool)
        mask[test] = False
        train = np.nonzero(mask)[0]
        if np.intersect1d(train, test).size:
            raise AssertionError(f"fold {i}: test indices leaked into training")
        clf = spec.build(seed + i).fit(features.values[train], y[train])
        scores.append(macro_f1(y[test], clf.predict(features.values[test]), n_classes))
    return FoldReport(scores)


def evaluate_test(clf, features, n_classes=3):
    return macro_f1(features.labels, clf.predict(features.values), n_classes)


REPORT_HEADER = "model,tap,mean,min,max,std"


def report_row(model, tap, report):
    """Machine-readable row; scores in percent like the published tables."""
    vals = (report.mean, report.min, report.max, report.std)
    return ",".join([model, tap] + ["%.4f" % (100.0 * v) for v in vals])


def format_table(rows):
    """Aligned text table from ``(label, mean, min, max, std)`` rows given in [0, 1]."""
    header = ("", "Mean", "Min", "Max", "Std")
    body = [(label, *("%.2f" % (100.0 * v) for v in vals[:3]), "± %.1f" % (100.0 * vals[3]))
            for label, *vals in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(5)]
    lines = []
    for r in [header] + body:
        lines.append(" | ".join(r[0].ljust(widths[0]) if i == 0 else r[i].rjust(widths[i])
                                for i in range(5)).rstrip())
    return "\n".join(lines) + "\n"


def parse_report_rows(text):
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("model,"):
            continue
        model, tap, *vals = line.split(",")
        rows.append((model, tap, *(float(v) / 100.0 for v in vals)))
    return rows

