"""Label encoding, missing-value handling, standard scaling, band-pass filtering.

Functional forms operate on :class:`~adhd_eeg.dataset.InstanceTable` and
:class:`~adhd_eeg.dataset.Recording`; the estimator classes at the bottom wrap
the same math behind the scikit-learn transformer API.
"""
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _jsonio
from .dataset import InstanceTable
from .exceptions import ConfigError, DataError, EmptyTable, ShapeMismatch

DEFAULT_LABEL_MAP = {"Control": 0, "ADHD": 1}


class UnknownLabel(DataError):
    def __init__(self, value, index):
        super().__init__(f"unknown label {value!r} at index {index}")
        self.value = value
        self.index = index


class AllMissingFeature(DataError):
    pass


class BadBand(ConfigError):
    pass


def encode_labels(raw, mapping=None):
    """Map category strings to integer labels (case-sensitive)."""
    mapping = DEFAULT_LABEL_MAP if mapping is None else mapping
    out = []
    for i, value in enumerate(raw):
        try:
            out.append(mapping[value])
        except KeyError:
            raise UnknownLabel(value, i) from None
    return out


def impute_missing(table, strategy="mean"):
    X = table.features
    missing = np.isnan(X)
    if not missing.any():
        return table
    if strategy == "drop_row":
        return table.take(np.flatnonzero(~missing.any(axis=1)))
    if strategy != "mean":
        raise ConfigError(f"unknown impute strategy {strategy!r}")
    counts = (~missing).sum(axis=0)
    if (counts == 0).any():
        bad = [table.feature_names[j] for j in np.flatnonzero(counts == 0)]
        raise AllMissingFeature(f"features entirely missing: {bad}")
    means = np.nansum(X, axis=0) / counts
    filled = np.where(missing, means, X)
    return table.with_features(filled)


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    @property
    def degenerate(self):
        """Boolean mask of zero-variance features."""
        return self.std == 0

    def to_json(self):
        return _jsonio.dumps({"mean": self.mean, "std": self.std})

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    def save(self, path):
        _jsonio.dump({"mean": self.mean, "std": self.std}, path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.load(path))


def _fit_arrays(X):
    if X.shape[0] == 0:
        raise EmptyTable("cannot fit a scaler on zero rows")
    if np.isnan(X).any():
        raise DataError("scaler input contains NaN; impute first")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    return ScalerParams(mean, std)


def _apply_arrays(X, params):
    if X.shape[1] != params.mean.shape[0]:
        raise ShapeMismatch(f"table has {X.shape[1]} features, scaler expects {params.mean.shape[0]}")
    safe = np.where(params.std == 0, 1.0, params.std)
    out = (X - params.mean) / safe
    out[:, params.std == 0] = 0.0
    return out


def fit_scaler(train):
    """Per-feature mean and population standard deviation of ``train``."""
    return _fit_arrays(train.features)


def apply_scaler(table, params):
    return table.with_features(_apply_arrays(table.features, params))


def bandpass_taps(low_hz, high_hz, taps, sample_rate):
    """Hamming-windowed sinc band-pass, normalised to unit gain at the band centre."""
    nyq = sample_rate / 2.0
    if not 0 < low_hz < high_hz < nyq:
        raise BadBand(f"band {low_hz}-{high_hz} Hz invalid for sample rate {sample_rate} Hz")
    if taps < 3 or taps % 2 == 0:
        raise BadBand(f"taps must be odd and >= 3, got {taps}")
    n = np.arange(taps) - (taps - 1) / 2.0
    lo, hi = low_hz / sample_rate, high_hz / sample_rate
    h = 2 * hi * np.sinc(2 * hi * n) - 2 * lo * np.sinc(2 * lo * n)
    h *= np.hamming(taps)
    centre = (lo + hi) / 2.0
    gain = np.abs(np.sum(h * np.exp(-2j * np.pi * centre * n)))
    return h / gain


def _filter_columns(samples, h):
    half = h.size // 2
    mode = "reflect" if samples.shape[0] > half else "constant"
    padded = np.pad(samples, ((half, half), (0, 0)), mode=mode)
    out = np.empty_like(samples)
    for j in range(samples.shape[1]):
        out[:, j] = np.convolve(padded[:, j], h, mode="valid")
    return out


def fir_bandpass(rec, low_hz=0.5, high_hz=50.0, taps=129):
    """Zero-phase FIR band-pass of every channel; output length equals input."""
    h = bandpass_taps(low_hz, high_hz, taps, rec.sample_rate)
    if rec.samples.shape[0] == 0:
        return rec
    return replace(rec, samples=_filter_columns(rec.samples, h))


class MissingValueImputer(TransformerMixin, BaseEstimator):
    """Replace NaNs by the per-feature mean seen during ``fit``."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan")
        counts = (~np.isnan(X)).sum(axis=0)
        if (counts == 0).any():
            raise AllMissingFeature("a feature is entirely missing")
        self.mean_ = np.nansum(X, axis=0) / counts
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, ensure_all_finite="allow-nan", copy=True)
        return np.where(np.isnan(X), self.mean_, X)


class StandardScaler(TransformerMixin, BaseEstimator):
    """Population-std standard scaler; zero-variance features map to 0."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.params_ = _fit_arrays(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return _apply_arrays(check_array(X), self.params_)

    def inverse_transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        return X * np.where(self.params_.std == 0, 0.0, self.params_.std) + self.params_.mean


class BandpassFilter(TransformerMixin, BaseEstimator):
    """Stateless FIR band-pass over the rows of a time x channel array."""

    def __init__(self, low_hz=0.5, high_hz=50.0, taps=129, sample_rate=128.0):
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.taps = taps
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        X = check_array(X)
        self.taps_ = bandpass_taps(self.low_hz, self.high_hz, self.taps, self.sample_rate)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return _filter_columns(check_array(X), self.taps_)


def preprocess_table(table, strategy="mean"):
    """NaN handling on an assembled table; the pipeline's cleaning step."""
    out = impute_missing(table, strategy)
    if not np.isfinite(out.features).all():
        raise DataError("table contains infinite values")
    return out


__all__ = [
    "UnknownLabel", "AllMissingFeature", "BadBand", "ScalerParams",
    "encode_labels", "impute_missing", "fit_scaler", "apply_scaler",
    "bandpass_taps", "fir_bandpass", "preprocess_table",
    "MissingValueImputer", "StandardScaler", "BandpassFilter", "InstanceTable",
]
