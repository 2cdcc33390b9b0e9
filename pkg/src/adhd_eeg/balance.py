"""SMOTE oversampling of the minority class."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_X_y

from .dataset import InstanceTable
from .exceptions import ConfigError, DataError


class TooFewMinority(DataError):
    pass


class KTooLarge(ConfigError):
    pass


# above this many minority rows the exact all-pairs search is replaced by a KD-tree
_BRUTE_FORCE_LIMIT = 4096


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0
    target: str = "equalize"

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.target != "equalize":
            raise ConfigError(f"unsupported SMOTE target {self.target!r}")


def minority_neighbors(rows, k):
    """Indices of the ``k`` nearest other rows of each row (Euclidean).

    Ties in distance go to the lower index. Returns an ``(n, k)`` int array.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if k >= n or k < 1:
        raise KTooLarge(f"k={k} needs at least {k + 1} rows, got {n}")
    if n > _BRUTE_FORCE_LIMIT:
        return _kdtree_neighbors(rows, k)
    out = np.empty((n, k), dtype=np.int64)
    chunk = max(1, int(2e7 // max(1, n * rows.shape[1])))
    for lo in range(0, n, chunk):
        block = rows[lo:lo + chunk]
        d = ((block[:, None, :] - rows[None, :, :]) ** 2).sum(axis=-1)
        d[np.arange(block.shape[0]), np.arange(lo, lo + block.shape[0])] = np.inf
        # stable sort keeps lower indices first among equal distances
        out[lo:lo + block.shape[0]] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def _kdtree_neighbors(rows, k):
    tree = cKDTree(rows)
    extra = min(k + 8, rows.shape[0])
    dist, ind = tree.query(rows, k=extra)
    out = np.empty((rows.shape[0], k), dtype=np.int64)
    for r in range(rows.shape[0]):
        keep = ind[r] != r
        order = np.lexsort((ind[r][keep], dist[r][keep]))
        out[r] = ind[r][keep][order][:k]
    return out


def smote_samples(minority, n_new, k, seed):
    """Draw ``n_new`` synthetic rows from ``minority``.

    Returns ``(rows, base, neighbor, delta)``. Base row, neighbour slot and
    interpolation factor come from three independent streams, so asking for
    more rows never changes the earlier ones.
    """
    minority = np.asarray(minority, dtype=np.float64)
    neighbors = minority_neighbors(minority, k)
    base_ss, nn_ss, delta_ss = np.random.SeedSequence(seed).spawn(3)
    base = np.random.default_rng(base_ss).integers(0, minority.shape[0], size=n_new)
    slot = np.random.default_rng(nn_ss).integers(0, k, size=n_new)
    delta = np.random.default_rng(delta_ss).random(n_new)
    nn = neighbors[base, slot]
    rows = minority[base] + delta[:, None] * (minority[nn] - minority[base])
    return rows, base, nn, delta


def _resample_arrays(X, y, k_neighbors, seed):
    counts = {1: int((y == 1).sum()), 0: int((y == 0).sum())}
    if counts[0] == counts[1]:
        return X, y
    minority_label = 1 if counts[1] < counts[0] else 0
    n_min = counts[minority_label]
    if n_min < 2:
        raise TooFewMinority(f"SMOTE needs >= 2 minority rows, class {minority_label} has {n_min}")
    k = min(k_neighbors, n_min - 1)
    minority = X[y == minority_label]
    n_new = counts[1 - minority_label] - n_min
    rows, *_ = smote_samples(minority, n_new, k, seed)
    X_out = np.concatenate([X, rows], axis=0)
    y_out = np.concatenate([y, np.full(n_new, minority_label, dtype=y.dtype)])
    return X_out, y_out


def smote(train, cfg=None):
    """Equalize class counts by appending synthetic minority rows.

    Original rows keep their order and come first; an already balanced table
    is returned unchanged.
    """
    cfg = cfg or SmoteConfig()
    X, y = _resample_arrays(train.features, train.labels, cfg.k_neighbors, cfg.seed)
    if X is train.features:
        return train
    return InstanceTable(X, y, train.feature_names)


class SMOTE(BaseEstimator):
    """Sampler with the ``fit_resample`` interface used by imbalanced-learn."""

    def __init__(self, k_neighbors=5, random_state=0):
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def fit_resample(self, X, y):
        X, y = check_X_y(X, y)
        y = np.asarray(y, dtype=np.int64)
        if not np.isin(y, (0, 1)).all():
            raise DataError("SMOTE expects binary 0/1 labels")
        SmoteConfig(self.k_neighbors, self.random_state)
        return _resample_arrays(X, y, self.k_neighbors, self.random_state)
