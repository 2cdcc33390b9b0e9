"""Random forest of CART trees (Gini impurity, bootstrap rows, sqrt feature subsets)."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _jsonio
from .exceptions import ConfigError, DataError, ShapeMismatch, SingleClass

N_CLASSES = 2


class EmptyCounts(DataError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    seed: int = 42
    max_features: str = "sqrt"
    max_depth: int = None
    min_samples_split: int = 2
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.max_features not in ("sqrt", "all"):
            raise ConfigError(f"max_features must be 'sqrt' or 'all', got {self.max_features!r}")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be non-negative")


def gini_impurity(counts):
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0 or (counts < 0).any():
        raise EmptyCounts(f"gini of counts {counts.tolist()} is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(rows, labels, feature_subset=None, require_positive=True):
    """Exhaustive CART split search.

    Candidate thresholds are midpoints between consecutive distinct values of
    each feature in ``feature_subset``. Returns ``(feature, threshold,
    decrease)`` maximising the weighted Gini decrease, ties going to the lower
    feature index and then the lower threshold, or ``None`` when no candidate
    reduces impurity (or, with ``require_positive=False``, when no feature
    has two distinct values).
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n < 2:
        return None
    if feature_subset is None:
        feature_subset = range(rows.shape[1])
    parent_counts = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    parent = 1.0 - np.sum((parent_counts / n) ** 2)
    if require_positive and parent == 0.0:
        return None
    onehot = np.eye(N_CLASSES)[labels]
    best = None
    for f in sorted(int(f) for f in feature_subset):
        order = np.argsort(rows[:, f], kind="stable")
        xs = rows[order, f]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # cut after position valid[k]
        if valid.size == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[valid]
        n_left = (valid + 1).astype(np.float64)
        n_right = n - n_left
        right = parent_counts - left
        g_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        g_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        decrease = parent - (n_left * g_left + n_right * g_right) / n
        k = int(np.argmax(decrease))  # first maximum = lowest threshold
        if best is None or decrease[k] > best[2]:
            threshold = (xs[valid[k]] + xs[valid[k] + 1]) / 2.0
            if threshold >= xs[valid[k] + 1]:  # midpoint rounded up to the right value
                threshold = xs[valid[k]]
            best = (f, float(threshold), float(decrease[k]))
    if best is None or (require_positive and best[2] <= 0.0):
        return None
    return best


class Tree:
    """Array-backed binary tree; ``feature[i] == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.float64).reshape(-1, N_CLASSES)

    @property
    def node_count(self):
        return self.feature.shape[0]

    def depth(self):
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def predict_proba(self, X):
        counts = self.counts[self.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self, i=0):
        if self.feature[i] < 0:
            return {"counts": self.counts[i].tolist()}
        return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                "left": self.to_dict(self.left[i]), "right": self.to_dict(self.right[i])}

    @classmethod
    def from_dict(cls, d):
        feature, threshold, left, right, counts = [], [], [], [], []

        def add(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append([0.0] * N_CLASSES)
            if "counts" in node:
                counts[i] = [float(c) for c in node["counts"]]
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = add(node["left"])
                right[i] = add(node["right"])
            return i

        add(d)
        return cls(feature, threshold, left, right, counts)


def _n_subset(cfg, n_features):
    return n_features if cfg.max_features == "all" else max(1, math.ceil(math.sqrt(n_features)))


def grow_tree(X, y, cfg, rng):
    """Grow one fully specified CART tree on ``(X, y)`` with feature sampling from ``rng``."""
    n_features = X.shape[1]
    k = _n_subset(cfg, n_features)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=N_CLASSES).astype(np.float64))
        return len(feature) - 1

    root = new_node(np.arange(y.shape[0]))
    stack = [(root, np.arange(y.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (c > 0).sum() < 2 or idx.size < cfg.min_samples_split:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        Xn, yn = X[idx], y[idx]
        perm = rng.permutation(n_features)
        split = best_split(Xn, yn, perm[:k])
        if split is None and k < n_features:
            split = best_split(Xn, yn, perm[k:])
        if split is None:
            # impure node where no single cut lowers impurity (e.g. XOR); still divide it
            split = best_split(Xn, yn, range(n_features), require_positive=False)
        if split is None:
            continue
        f, t, _ = split
        mask = Xn[:, f] <= t
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, t
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(feature, threshold, left, right, counts)


def tree_seed(seed, index):
    """Independent, order-free seed material for tree ``index``."""
    return np.random.SeedSequence([int(seed), int(index)])


def _fit_one(X, y, cfg, index):
    rng = np.random.default_rng(tree_seed(cfg.seed, index))
    if cfg.bootstrap:
        rows = rng.integers(0, X.shape[0], size=X.shape[0])
        return grow_tree(X[rows], y[rows], cfg, rng)
    return grow_tree(X, y, cfg, rng)


@dataclass
class Forest:
    trees: list
    config: ForestConfig
    n_features: int

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(f"rows have shape {X.shape}, forest expects {self.n_features} features")
        total = np.zeros((X.shape[0], N_CLASSES))
        for tree in self.trees:
            total += tree.predict_proba(X)
        return total / len(self.trees)

    def to_dict(self):
        return {"format": "adhd_eeg.forest/1", "n_features": self.n_features,
                "config": asdict(self.config), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "adhd_eeg.forest/1":
            raise DataError(f"unknown forest format {d.get('format')!r}")
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestConfig(**d["config"]), d["n_features"])

    def save(self, path):
        _jsonio.dump(self.to_dict(), path, indent=None)

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.load(path))


def fit_forest(train, cfg=None, n_jobs=1):
    """Fit ``cfg.n_estimators`` trees on bootstrap samples of ``train``.

    Tree ``i`` draws all its randomness from ``SeedSequence([seed, i])``, so
    results do not depend on ``n_jobs``.
    """
    cfg = cfg or ForestConfig()
    X, y = train.features, train.labels
    if len(np.unique(y)) < 2:
        raise SingleClass("random forest needs both classes in the training table")
    if n_jobs == 1:
        trees = [_fit_one(X, y, cfg, i) for i in range(cfg.n_estimators)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda i: _fit_one(X, y, cfg, i), range(cfg.n_estimators)))
    return Forest(trees, cfg, X.shape[1])


def predict(forest, rows):
    """Return ``(labels, probabilities)``; ties in the vote go to class 0."""
    proba = forest.predict_proba(rows)
    labels = (proba[:, 1] > proba[:, 0]).astype(np.int64)
    return labels, proba


class ForestClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, n_estimators=100, random_state=42, max_features="sqrt", max_depth=None,
                 min_samples_split=2, bootstrap=True, n_jobs=1):
        self.n_estimators = n_estimators
        self.random_state = random_state
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.n_jobs = n_jobs

    def fit(self, X, y):
        from .dataset import InstanceTable

        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if not np.isin(self.classes_, (0, 1)).all():
            raise ConfigError("labels must be 0/1")
        cfg = ForestConfig(self.n_estimators, self.random_state, self.max_features, self.max_depth,
                           self.min_samples_split, self.bootstrap)
        table = InstanceTable(X, y, tuple(f"f{i}" for i in range(X.shape[1])))
        self.forest_ = fit_forest(table, cfg, n_jobs=self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        return self.forest_.predict_proba(check_array(X))

    def predict(self, X):
        check_is_fitted(self)
        return predict(self.forest_, check_array(X))[0]
