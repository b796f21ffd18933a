"""Classical classifiers for tapped features.

All estimators follow the scikit-learn protocol (``fit``/``predict``/
``decision_function``, ``get_params``/``set_params``) and accept either a
plain array or a :class:`~memefx.data.FeatureMatrix`. Ties are always broken
toward the lowest class index, so results are deterministic.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone

from . import autograd
from .data import FeatureMatrix
from .errors import ConfigError, ContractError, DimensionError, FormatError


def _as_array(X):
    if isinstance(X, FeatureMatrix):
        return X.values
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature array, got shape {X.shape}")
    return X


def check_training_data(X, y, n_classes=None):
    """Validate ``X``/``y`` for fitting; returns ``(X, y, classes)``."""
    if y is None and isinstance(X, FeatureMatrix):
        y = X.labels
    X = _as_array(X)
    if X.shape[0] == 0:
        raise ContractError("cannot fit on an empty feature matrix")
    if y is None:
        raise ContractError("labels are required for fitting")
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise DimensionError(f"{X.shape[0]} rows but labels of shape {y.shape}")
    if not np.isfinite(X).all():
        raise ContractError("features contain non-finite values")
    if n_classes is not None:
        classes = np.arange(n_classes)
        missing = sorted(set(classes.tolist()) - set(np.unique(y).tolist()))
        if missing:
            raise ContractError(f"class(es) {missing} absent from the training labels")
        if not np.isin(y, classes).all():
            raise ContractError(f"labels must lie in [0, {n_classes})")
    else:
        classes = np.unique(y)
    if X.shape[0] < len(classes):
        raise ContractError(f"need at least {len(classes)} rows, got {X.shape[0]}")
    return X, y, classes


def _check_predict(est, X):
    if not hasattr(est, "classes_"):
        from sklearn.exceptions import NotFittedError
        raise NotFittedError(f"{type(est).__name__} is not fitted")
    X = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if X.size == 0:
        X = X.reshape(0, est.n_features_in_)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature array, got shape {X.shape}")
    if X.shape[1] != est.n_features_in_:
        raise DimensionError(f"fitted on {est.n_features_in_} features, got {X.shape[1]}")
    return X


def _argmax_lowest(scores):
    # np.argmax already returns the first maximal index
    return np.argmax(scores, axis=1)


# --------------------------------------------------------------------------- trees

class _Tree:
    """Flat binary tree; a node is a leaf when ``left[i] == -1``."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.intp)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.intp)
        self.right = np.asarray(right, dtype=np.intp)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = self.left[node] != -1
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.left[node] != -1
        return node

    def predict_value(self, X):
        return self.value[self.apply(X)]

    def to_arrays(self, prefix=""):
        return {prefix + "feature": self.feature.astype(np.float64),
                prefix + "threshold": self.threshold,
                prefix + "left": self.left.astype(np.float64),
                prefix + "right": self.right.astype(np.float64),
                prefix + "value": self.value}

    @classmethod
    def from_arrays(cls, arrays, prefix=""):
        return cls(*(arrays[prefix + k] for k in ("feature", "threshold", "left", "right", "value")))


def _best_split(X, rows, features, criterion, target, n_classes):
    """Exhaustive scan over midpoints of sorted unique values.

    Returns ``(impurity, feature, threshold)`` of the lowest weighted impurity
    (``n * gini`` or SSE summed over children), scanning features and then
    thresholds in ascending order and keeping only strict improvements.
    """
    best = (np.inf, -1, 0.0)
    t = target[rows]
    m = len(rows)
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        if cut.size == 0:
            continue
        n_left = (cut + 1).astype(np.float64)
        n_right = m - n_left
        if criterion == "gini":
            onehot = np.zeros((m, n_classes))
            onehot[np.arange(m), t[order]] = 1.0
            cum = np.cumsum(onehot, axis=0)[cut]
            right = onehot.sum(axis=0) - cum
            imp = (n_left - (cum * cum).sum(axis=1) / n_left) + (n_right - (right * right).sum(axis=1) / n_right)
        else:
            ts = t[order]
            s = np.cumsum(ts)
            s2 = np.cumsum(ts * ts)
            sl, sl2 = s[cut], s2[cut]
            sr, sr2 = s[-1] - sl, s2[-1] - sl2
            imp = (sl2 - sl * sl / n_left) + (sr2 - sr * sr / n_right)
        j = int(np.argmin(imp))
        if imp[j] < best[0]:
            lo, hi = xs[cut[j]], xs[cut[j] + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(imp[j]), int(f), float(thr))
    return best


def _node_impurity(t, criterion, n_classes):
    m = len(t)
    if criterion == "gini":
        counts = np.bincount(t, minlength=n_classes).astype(np.float64)
        return m - (counts * counts).sum() / m
    return float(((t - t.mean()) ** 2).sum())


def build_tree(X, target, criterion, max_depth=None, n_classes=None, max_features=None, rng=None,
               min_samples_split=2, leaf_value=None):
    """Grow a CART tree depth-first.

    ``criterion`` is ``"gini"`` (integer ``target``) or ``"mse"``. Leaves
    store class frequencies for gini, or ``leaf_value(rows)`` (default:
    mean target) for mse. ``max_features`` < d draws a sorted random subset
    of features at every node from ``rng``.
    """
    n, d = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def make_leaf(rows):
        if criterion == "gini":
            counts = np.bincount(target[rows], minlength=n_classes).astype(np.float64)
            return counts / counts.sum()
        if leaf_value is not None:
            return np.array([leaf_value(rows)])
        return np.array([target[rows].mean()])

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(make_leaf(rows))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        if len(rows) < min_samples_split:
            continue
        parent = _node_impurity(target[rows], criterion, n_classes)
        if parent <= 0.0:
            continue
        if max_features is None or max_features >= d:
            feats = range(d)
        else:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        imp, f, thr = _best_split(X, rows, feats, criterion, target, n_classes)
        if f < 0 or not imp < parent - 1e-12 * max(1.0, abs(parent)):
            continue
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # push right first so the left subtree is numbered first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return _Tree(feature, threshold, left, right, np.array(value))


class DecisionTreeClassifier(ClassifierMixin, BaseEstimator):
    """CART with Gini impurity."""

    def __init__(self, max_depth=10, n_classes=None):
        self.max_depth = max_depth
        self.n_classes = n_classes

    def fit(self, X, y=None):
        X, y, classes = check_training_data(X, y, self.n_classes)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        codes = np.searchsorted(classes, y)
        self.tree_ = build_tree(X, codes, "gini", self.max_depth, len(classes))
        return self

    def decision_function(self, X):
        X = _check_predict(self, X)
        return self.tree_.predict_value(X).reshape(len(X), len(self.classes_))

    def predict(self, X):
        return self.classes_[_argmax_lowest(self.decision_function(X))]


class RandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Bagged CART trees with per-node feature subsampling and majority vote."""

    def __init__(self, n_trees=100, max_depth=None, max_features="sqrt", bootstrap=True,
                 n_classes=None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.n_classes = n_classes
        self.seed = seed

    def _n_features(self, d):
        if self.max_features is None:
            return d
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        k = int(self.max_features)
        if k < 1:
            raise ConfigError("max_features must be positive")
        return min(k, d)

    def fit(self, X, y=None):
        X, y, classes = check_training_data(X, y, self.n_classes)
        if self.n_trees < 1:
            raise ConfigError("n_trees must be positive")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        codes = np.searchsorted(classes, y)
        rng = np.random.default_rng(self.seed)
        k = self._n_features(X.shape[1])
        self.trees_ = []
        for _ in range(self.n_trees):
            if self.bootstrap:
                rows = rng.integers(0, len(X), len(X))
                Xb, yb = X[rows], codes[rows]
            else:
                Xb, yb = X, codes
            self.trees_.append(build_tree(Xb, yb, "gini", self.max_depth, len(classes), k, rng))
        return self

    def decision_function(self, X):
        """Fraction of trees voting for each class."""
        X = _check_predict(self, X)
        votes = np.zeros((len(X), len(self.classes_)))
        rows = np.arange(len(X))
        for tree in self.trees_:
            votes[rows, _argmax_lowest(tree.predict_value(X))] += 1.0
        return votes / len(self.trees_)

    def predict(self, X):
        return self.classes_[_argmax_lowest(self.decision_function(X))]


class KNeighborsClassifier(ClassifierMixin, BaseEstimator):
    """Euclidean k-nearest neighbours; equal distances favour the lower row index."""

    def __init__(self, k=1, n_classes=None, chunk_size=256):
        self.k = k
        self.n_classes = n_classes
        self.chunk_size = chunk_size

    def fit(self, X, y=None):
        X, y, classes = check_training_data(X, y, self.n_classes)
        if not 1 <= self.k <= len(X):
            raise ConfigError(f"k must lie in [1, {len(X)}]")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        self.X_ = X.copy()
        self.codes_ = np.searchsorted(classes, y)
        return self

    def kneighbors(self, X):
        X = _check_predict(self, X)
        out = np.empty((len(X), self.k), dtype=np.intp)
        for start in range(0, len(X), self.chunk_size):
            block = X[start:start + self.chunk_size]
            diff = block[:, None, :] - self.X_[None, :, :]
            dist = np.einsum("ijk,ijk->ij", diff, diff)
            out[start:start + len(block)] = np.argsort(dist, axis=1, kind="stable")[:, :self.k]
        return out

    def decision_function(self, X):
        """Fraction of the k neighbours in each class."""
        nn = self.kneighbors(X)
        votes = np.zeros((len(nn), len(self.classes_)))
        for j in range(self.k):
            votes[np.arange(len(nn)), self.codes_[nn[:, j]]] += 1.0
        return votes / self.k

    def predict(self, X):
        return self.classes_[_argmax_lowest(self.decision_function(X))]


# --------------------------------------------------------------------------- binary learners

def _binary_labels(est, X, y):
    X, y, classes = check_training_data(X, y)
    if len(classes) != 2:
        raise ContractError(f"{type(est).__name__} is a binary learner; got {len(classes)} classes")
    est.classes_ = classes
    est.n_features_in_ = X.shape[1]
    return X, np.where(y == classes[1], 1.0, -1.0)


class PegasosSVC(ClassifierMixin, BaseEstimator):
    """Binary linear SVM: L2-regularised hinge loss by Pegasos subgradient steps.

    The bias is learned as the weight of a constant feature. Step size at
    update ``t`` is ``1 / (lam * t)``, followed by projection onto the ball
    of radius ``1 / sqrt(lam)``.
    """

    def __init__(self, lam=1e-4, epochs=100, seed=0):
        self.lam = lam
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y=None):
        X, s = _binary_labels(self, X, y)
        if self.lam <= 0 or self.epochs < 1:
            raise ConfigError("lam and epochs must be positive")
        Xa = np.hstack([X, np.ones((len(X), 1))])
        w = np.zeros(Xa.shape[1])
        rng = np.random.default_rng(self.seed)
        radius = 1.0 / math.sqrt(self.lam)
        t = 0
        for _ in range(self.epochs):
            for i in rng.permutation(len(Xa)):
                t += 1
                eta = 1.0 / (self.lam * t)
                margin = s[i] * (w @ Xa[i])
                w *= 1.0 - eta * self.lam
                if margin < 1.0:
                    w += eta * s[i] * Xa[i]
                norm = math.sqrt(w @ w)
                if norm > radius:
                    w *= radius / norm
        self.coef_ = w[:-1].copy()
        self.intercept_ = float(w[-1])
        return self

    def decision_function(self, X):
        X = _check_predict(self, X)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(np.intp)]


def _logistic_loss(F, s):
    return np.logaddexp(0.0, -s * F)


class LogitBoostClassifier(ClassifierMixin, BaseEstimator):
    """Binary gradient boosting on the logistic loss.

    Each stage fits a depth-limited regression tree to the residuals
    ``y - p`` and sets leaf values by a Newton step scaled by ``shrinkage``.
    A leaf whose step would raise its own loss is halved until it does not,
    so the training loss never increases from one stage to the next.
    """

    def __init__(self, n_stages=100, shrinkage=0.1, max_depth=3, seed=0):
        self.n_stages = n_stages
        self.shrinkage = shrinkage
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y=None):
        X, s = _binary_labels(self, X, y)
        if self.n_stages < 1 or self.shrinkage <= 0:
            raise ConfigError("n_stages and shrinkage must be positive")
        y01 = (s > 0).astype(np.float64)
        p0 = y01.mean()
        self.init_ = math.log(p0 / (1.0 - p0))
        F = np.full(len(X), self.init_)
        self.trees_ = []
        self.train_loss_ = [float(_logistic_loss(F, s).mean())]
        for _ in range(self.n_stages):
            p = 0.5 * (1.0 + np.tanh(0.5 * F))
            resid = y01 - p
            hess = p * (1.0 - p)

            def newton(rows):
                return resid[rows].sum() / max(hess[rows].sum(), 1e-12)

            tree = build_tree(X, resid, "mse", self.max_depth, leaf_value=newton)
            leaves = tree.apply(X)
            for leaf in np.unique(leaves):
                rows = leaves == leaf
                step = self.shrinkage * tree.value[leaf, 0]
                before = _logistic_loss(F[rows], s[rows]).sum()
                for _ in range(60):
                    if _logistic_loss(F[rows] + step, s[rows]).sum() <= before:
                        break
                    step *= 0.5
                else:
                    step = 0.0
                tree.value[leaf, 0] = step
            F = F + tree.value[leaves, 0]
            self.trees_.append(tree)
            self.train_loss_.append(float(_logistic_loss(F, s).mean()))
        return self

    def decision_function(self, X):
        X = _check_predict(self, X)
        F = np.full(len(X), self.init_)
        for tree in self.trees_:
            F += tree.predict_value(X)[:, 0]
        return F

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(np.intp)]


# --------------------------------------------------------------------------- one-vs-all

def ova_decompose(binary_fitter, X, y, n_classes):
    """Fit one machine per class on ``+1`` (this class) vs ``-1`` (the rest)."""
    if n_classes < 2:
        raise ContractError("one-vs-all needs at least two classes")
    y = np.asarray(y)
    return [binary_fitter(X, np.where(y == c, 1, -1)) for c in range(n_classes)]


def _positive_score(machine, X):
    s = machine.decision_function(X)
    return s[:, list(machine.classes_).index(1)] if s.ndim == 2 else s


class OneVsAllClassifier(ClassifierMixin, BaseEstimator):
    """Multiclass by one binary machine per class; predicts the highest score."""

    def __init__(self, estimator, n_classes=None):
        self.estimator = estimator
        self.n_classes = n_classes

    def fit(self, X, y=None):
        X, y, classes = check_training_data(X, y, self.n_classes)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        codes = np.searchsorted(classes, y)
        self.machines_ = ova_decompose(lambda X_, y_: clone(self.estimator).fit(X_, y_), X, codes, len(classes))
        return self

    def decision_function(self, X):
        X = _check_predict(self, X)
        if len(X) == 0:
            return np.zeros((0, len(self.classes_)))
        return np.column_stack([_positive_score(m, X) for m in self.machines_])

    def predict(self, X):
        return self.classes_[_argmax_lowest(self.decision_function(X))]


# --------------------------------------------------------------------------- specs

FAMILIES = ("linear_svc", "knn", "decision_tree", "random_forest", "gradient_boosting")
_BINARY = ("linear_svc", "gradient_boosting")

DEFAULT_HYPER = {
    "linear_svc": {"lam": 1e-4, "epochs": 100},
    "knn": {"k": 1},
    "decision_tree": {"max_depth": 10},
    "random_forest": {"n_trees": 100, "max_depth": None, "max_features": "sqrt", "bootstrap": True},
    "gradient_boosting": {"n_stages": 100, "shrinkage": 0.1, "max_depth": 3},
}

_SHORT = {"linear_svc": "LinearSVC", "knn": "KNN", "decision_tree": "DT",
          "random_forest": "RF", "gradient_boosting": "GB"}


@dataclass
class ClassifierSpec:
    family: str
    hyper: dict = field(default_factory=dict)
    ova: bool = None
    standardize: bool = False
    n_classes: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown classifier family {self.family!r}; expected one of {FAMILIES}")
        unknown = set(self.hyper) - set(DEFAULT_HYPER[self.family])
        if unknown:
            raise ConfigError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        if self.ova is None:
            self.ova = self.family in _BINARY
        if self.family in _BINARY and not self.ova and self.n_classes > 2:
            raise ConfigError(f"{self.family} is binary; multiclass use requires ova=True")
        if self.family == "knn" and self.params["k"] < 1:
            raise ConfigError("knn k must be positive")

    @property
    def params(self):
        return dict(DEFAULT_HYPER[self.family], **self.hyper)

    @property
    def name(self):
        short = _SHORT[self.family]
        return f"KNN{self.params['k']}" if self.family == "knn" else short

    def build(self, seed=0):
        """A fresh, unfitted estimator for this spec."""
        p = self.params
        if self.family == "linear_svc":
            base = PegasosSVC(seed=seed, **p)
        elif self.family == "gradient_boosting":
            base = LogitBoostClassifier(seed=seed, **p)
        elif self.family == "knn":
            base = KNeighborsClassifier(k=p["k"], n_classes=None if self.ova else self.n_classes)
        elif self.family == "decision_tree":
            base = DecisionTreeClassifier(n_classes=None if self.ova else self.n_classes, **p)
        else:
            base = RandomForestClassifier(n_classes=None if self.ova else self.n_classes, seed=seed, **p)
        clf = OneVsAllClassifier(base, n_classes=self.n_classes) if self.ova else base
        if self.standardize:
            clf = StandardizedClassifier(clf)
        return clf


def fit(spec, X, y=None, seed=0):
    return spec.build(seed).fit(X, y)


def predict(clf, X):
    return clf.predict(X)


class StandardizedClassifier(ClassifierMixin, BaseEstimator):
    """Z-score features with statistics of the training data, then classify."""

    def __init__(self, estimator):
        self.estimator = estimator

    def fit(self, X, y=None):
        if y is None and isinstance(X, FeatureMatrix):
            y = X.labels
        X = _as_array(X)
        self.mean_ = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
        std = X.std(axis=0) if len(X) else np.ones(X.shape[1])
        self.scale_ = np.where(std > 0, std, 1.0)
        self.estimator_ = clone(self.estimator).fit((X - self.mean_) / self.scale_, y)
        self.classes_ = self.estimator_.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        X = _check_predict(self, X)
        return self.estimator_.decision_function((X - self.mean_) / self.scale_)

    def predict(self, X):
        X = _check_predict(self, X)
        return self.estimator_.predict((X - self.mean_) / self.scale_)


# --------------------------------------------------------------------------- persistence

CLASSIFIER_MAGIC = b"FKC1"
FORMAT_VERSION = 1

_REGISTRY = {cls.__name__: cls for cls in (
    DecisionTreeClassifier, RandomForestClassifier, KNeighborsClassifier, PegasosSVC,
    LogitBoostClassifier, OneVsAllClassifier, StandardizedClassifier)}


def _export(est, prefix, arrays):
    name = type(est).__name__
    if name not in _REGISTRY:
        raise ContractError(f"cannot persist {name}")
    params = {k: v for k, v in est.get_params(deep=False).items() if k != "estimator"}
    meta = {"type": name, "params": params, "classes": np.asarray(est.classes_).tolist(),
            "n_features": int(est.n_features_in_)}
    if isinstance(est, DecisionTreeClassifier):
        arrays.update(est.tree_.to_arrays(prefix))
    elif isinstance(est, RandomForestClassifier):
        meta["n_fitted_trees"] = len(est.trees_)
        for i, tree in enumerate(est.trees_):
            arrays.update(tree.to_arrays(f"{prefix}tree{i}/"))
    elif isinstance(est, KNeighborsClassifier):
        arrays[prefix + "X"] = est.X_
        arrays[prefix + "codes"] = est.codes_.astype(np.float64)
    elif isinstance(est, PegasosSVC):
        arrays[prefix + "coef"] = est.coef_
        arrays[prefix + "intercept"] = np.array([est.intercept_])
    elif isinstance(est, LogitBoostClassifier):
        arrays[prefix + "init"] = np.array([est.init_])
        arrays[prefix + "train_loss"] = np.array(est.train_loss_)
        meta["n_fitted_trees"] = len(est.trees_)
        for i, tree in enumerate(est.trees_):
            arrays.update(tree.to_arrays(f"{prefix}tree{i}/"))
    elif isinstance(est, OneVsAllClassifier):
        meta["machines"] = [_export(m, f"{prefix}m{i}/", arrays) for i, m in enumerate(est.machines_)]
        meta["base"] = {"type": type(est.estimator).__name__, "params": est.estimator.get_params(deep=False)}
    elif isinstance(est, StandardizedClassifier):
        arrays[prefix + "mean"] = est.mean_
        arrays[prefix + "scale"] = est.scale_
        meta["inner"] = _export(est.estimator_, prefix + "inner/", arrays)
        meta["base"] = {"type": type(est.estimator).__name__, "params": est.estimator.get_params(deep=False)}
    return meta


def _restore(meta, prefix, arrays):
    cls = _REGISTRY[meta["type"]]
    params = dict(meta["params"])
    if "base" in meta:
        base_cls = _REGISTRY[meta["base"]["type"]]
        base_params = {k: v for k, v in meta["base"]["params"].items() if k != "estimator"}
        params["estimator"] = base_cls(**base_params)
    est = cls(**params)
    est.classes_ = np.asarray(meta["classes"])
    est.n_features_in_ = meta["n_features"]
    if cls is DecisionTreeClassifier:
        est.tree_ = _Tree.from_arrays(arrays, prefix)
    elif cls is RandomForestClassifier:
        est.trees_ = [_Tree.from_arrays(arrays, f"{prefix}tree{i}/") for i in range(meta["n_fitted_trees"])]
    elif cls is KNeighborsClassifier:
        est.X_ = arrays[prefix + "X"]
        est.codes_ = arrays[prefix + "codes"].astype(np.intp)
    elif cls is PegasosSVC:
        est.coef_ = arrays[prefix + "coef"]
        est.intercept_ = float(arrays[prefix + "intercept"][0])
    elif cls is LogitBoostClassifier:
        est.init_ = float(arrays[prefix + "init"][0])
        est.train_loss_ = arrays[prefix + "train_loss"].tolist()
        est.trees_ = [_Tree.from_arrays(arrays, f"{prefix}tree{i}/") for i in range(meta["n_fitted_trees"])]
    elif cls is OneVsAllClassifier:
        est.machines_ = [_restore(m, f"{prefix}m{i}/", arrays) for i, m in enumerate(meta["machines"])]
    elif cls is StandardizedClassifier:
        est.mean_ = arrays[prefix + "mean"]
        est.scale_ = arrays[prefix + "scale"]
        est.estimator_ = _restore(meta["inner"], prefix + "inner/", arrays)
    return est


def save_classifier(clf, path, family=None):
    """Write a fitted classifier: magic, version, JSON header, then FKT1 array records."""
    arrays = {}
    meta = _export(clf, "", arrays)
    header = json.dumps({"version": FORMAT_VERSION, "family": family, "model": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CLASSIFIER_MAGIC)
        fh.write(struct.pack("<QQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        autograd.write_records(fh, arrays)


def load_classifier(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CLASSIFIER_MAGIC:
        raise FormatError(f"{path}: not a classifier file")
    try:
        version, hlen = struct.unpack_from("<QQ", buf, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported classifier format version {version}")
    header = json.loads(buf[20:20 + hlen].decode("utf-8"))
    arrays = autograd.read_records(buf, 20 + hlen)
    return _restore(header["model"], "", arrays)
