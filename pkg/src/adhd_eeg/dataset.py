"""Recordings, instance tables, stratified splitting and synthetic EEG.

Every time sample of a recording becomes one instance (a row of 19 channel
values); the subject's group becomes the row label (ADHD=1, Control=0).
"""
import csv
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .exceptions import DataError, DegenerateSplit, EmptyTable, ShapeMismatch, SingleClass
from . import matio

CHANNELS = ("Fz", "Cz", "Pz", "C3", "T3", "C4", "T4", "Fp1", "Fp2",
            "F3", "F4", "F7", "F8", "P3", "P4", "T5", "T6", "O1", "O2")
SAMPLE_RATE = 128.0
GROUPS = {"ADHD": 1, "Control": 0}

_CACHE_MAGIC = b"EEGT"
_CACHE_VERSION = 1


class ChannelMismatch(DataError):
    pass


@dataclass(frozen=True)
class Recording:
    subject_id: str
    group: str
    samples: np.ndarray
    channels: tuple = CHANNELS
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ShapeMismatch(f"recording {self.subject_id!r}: samples must be T x C, got {samples.shape}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", tuple(self.channels))
        if samples.shape[1] != len(self.channels):
            raise ChannelMismatch(
                f"recording {self.subject_id!r} has {samples.shape[1]} columns "
                f"but {len(self.channels)} channel names")
        if self.group not in GROUPS:
            raise DataError(f"recording {self.subject_id!r}: unknown group {self.group!r}")
        if not self.sample_rate > 0:
            raise DataError(f"recording {self.subject_id!r}: sample_rate must be positive")

    @property
    def label(self):
        return GROUPS[self.group]


@dataclass(frozen=True)
class InstanceTable:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = CHANNELS

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, ndmin=2)
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if X.size == 0 and X.shape[1:] == (0,) and self.feature_names:
            X = X.reshape(len(y), len(self.feature_names))
        if X.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[1] != len(self.feature_names):
            raise ShapeMismatch(f"{X.shape[1]} feature columns but {len(self.feature_names)} names")
        if y.size and not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def class_counts(self):
        """Return ``{label: count}`` for labels 1 and 0."""
        return {1: int((self.labels == 1).sum()), 0: int((self.labels == 0).sum())}

    def take(self, index):
        index = np.asarray(index, dtype=np.int64)
        return InstanceTable(self.features[index], self.labels[index], self.feature_names)

    def with_features(self, features):
        return InstanceTable(features, self.labels, self.feature_names)

    def equals(self, other):
        return (self.feature_names == other.feature_names
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.features, other.features, equal_nan=True))


@dataclass(frozen=True)
class SplitPair:
    train: InstanceTable
    test: InstanceTable
    seed: int
    train_fraction: float
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)


def empty_table(feature_names=CHANNELS):
    return InstanceTable(np.zeros((0, len(feature_names))), np.zeros(0, dtype=np.int64), feature_names)


def assemble(recordings, feature_names=None):
    """Concatenate recordings row-wise into one labeled table, in input order."""
    recordings = list(recordings)
    if not recordings:
        return empty_table(feature_names or CHANNELS)
    channels = recordings[0].channels
    for rec in recordings[1:]:
        if rec.channels != channels:
            raise ChannelMismatch(
                f"recording {rec.subject_id!r} channels {rec.channels} differ from {channels}")
    X = np.concatenate([rec.samples for rec in recordings], axis=0)
    y = np.concatenate([np.full(rec.samples.shape[0], rec.label, dtype=np.int64) for rec in recordings])
    return InstanceTable(X, y, channels)


def _largest_remainder(quotas, total):
    """Integer allocation of ``total`` closest to real ``quotas``."""
    base = [math.floor(q) for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:max(short, 0)]:
        base[i] += 1
    return base


def split_stratified(table, train_fraction=0.7, seed=0):
    """Shuffle each class with ``seed`` and cut it at ``train_fraction``.

    The total train size is ``round(train_fraction * N)``; per-class train
    counts deviate from their exact quota by less than one row.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train_fraction must lie in (0, 1), got {train_fraction}")
    counts = table.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise SingleClass(f"stratified split needs both classes, got counts {counts}")
    n = len(table)
    n_train = math.floor(train_fraction * n + 0.5)
    classes = (1, 0)
    per_class = _largest_remainder([train_fraction * counts[c] for c in classes], n_train)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c, k in zip(classes, per_class):
        idx = np.flatnonzero(table.labels == c)
        idx = idx[rng.permutation(idx.size)]
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    if train_idx.size == 0 or test_idx.size == 0:
        raise DegenerateSplit(f"split of {n} rows at {train_fraction} leaves an empty side")
    return SplitPair(table.take(train_idx), table.take(test_idx), seed, train_fraction,
                     train_idx, test_idx)


def _ar2_unit_variance(phi1, phi2):
    """Scale AR(2) coefficients into the stationary region and return the
    process standard deviation for unit innovations."""
    scale = 1.0
    while not (abs(phi2 * scale * scale) < 1 and phi1 * scale + phi2 * scale * scale < 1
               and phi2 * scale * scale - phi1 * scale < 1):
        scale *= 0.95
    a1, a2 = phi1 * scale, phi2 * scale * scale
    var = (1 - a2) / ((1 + a2) * ((1 - a2) ** 2 - a1 ** 2))
    return a1, a2, math.sqrt(var)


def synth_recordings(n_per_class, n_features=19, class_separation=4.0, noise=1.0, seed=0,
                     ar_coefficients=(1.5, -0.8), burn_in=200):
    """One synthetic recording per class.

    Each channel is an AR(2) process normalised to standard deviation
    ``noise``. Class means sit at ``+-class_separation / 2`` along a seeded
    random sign pattern, so the per-channel distance between class means is
    ``class_separation``. ``n_per_class`` may be an int or an
    ``(n_adhd, n_control)`` pair.
    """
    if isinstance(n_per_class, (int, np.integer)):
        n_per_class = (int(n_per_class), int(n_per_class))
    n_adhd, n_control = n_per_class
    if n_adhd <= 0 or n_control <= 0 or n_features <= 0:
        raise ValueError("row and feature counts must be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    ss = np.random.SeedSequence(seed)
    sign_ss, adhd_ss, control_ss = ss.spawn(3)
    signs = np.random.default_rng(sign_ss).choice([-1.0, 1.0], size=n_features)
    a1, a2, std = _ar2_unit_variance(*ar_coefficients)
    names = CHANNELS if n_features == len(CHANNELS) else tuple(f"ch{i}" for i in range(n_features))
    recordings = []
    for group, n, child, sign in (("ADHD", n_adhd, adhd_ss, 1.0), ("Control", n_control, control_ss, -1.0)):
        rng = np.random.default_rng(child)
        eps = rng.standard_normal((n + burn_in, n_features))
        x = lfilter([1.0], [1.0, -a1, -a2], eps, axis=0)
        x = x[burn_in:] / std * noise
        x += sign * 0.5 * class_separation * signs
        recordings.append(Recording(f"synth-{group.lower()}", group, x, names))
    return recordings


def synth_generate(n_per_class, n_features=19, class_separation=4.0, noise=1.0, seed=0):
    """Synthetic instance table: ADHD rows first, then Control rows."""
    return assemble(synth_recordings(n_per_class, n_features, class_separation, noise, seed))


def infer_group(name):
    """``"ADHD_part1"`` -> "ADHD", ``"control07"`` -> "Control", else None."""
    lowered = name.lower()
    for group in GROUPS:
        if lowered.startswith(group.lower()):
            return group
    return None


def _lookup_group(label_map, keys):
    for key in keys:
        if key in label_map:
            return label_map[key]
    if not label_map:
        for key in keys:
            group = infer_group(key)
            if group is not None:
                return group
    return None


def recordings_from_mat(path, label_map, channels=CHANNELS, skip_unsupported=True, context=()):
    """Turn every numeric matrix of a MAT file into a :class:`Recording`.

    ``label_map`` maps a variable name, file stem or enclosing directory name
    (``context``) to a group name ("ADHD" / "Control"), most specific key
    first. With an empty map the group is inferred from an "ADHD"/"Control"
    name prefix. Matrices stored channels-first (C x T) are transposed.
    """
    stem = os.path.splitext(os.path.basename(path))[0]
    mat = matio.read_mat(path, skip_unsupported=skip_unsupported)
    out = []
    for m in mat.matrices:
        group = _lookup_group(label_map, (m.name, stem) + tuple(context))
        if group is None:
            raise DataError(f"{path}: no label for variable {m.name!r} or file {stem!r}")
        arr = m.to_array()
        if arr.ndim != 2:
            raise ShapeMismatch(f"{path}:{m.name} is {arr.ndim}-D, expected 2-D")
        if arr.shape[1] != len(channels) and arr.shape[0] == len(channels):
            arr = arr.T
        out.append(Recording(f"{stem}:{m.name}", group, arr, channels))
    return out


def load_mat_dir(directory, label_map=None, channels=CHANNELS):
    """Every ``.mat`` file below ``directory``, visited in sorted path order."""
    label_map = label_map or {}
    found = []
    for root, dirs, files in os.walk(directory):
        dirs.sort()
        rel = os.path.relpath(root, directory)
        context = () if rel == "." else tuple(reversed(rel.split(os.sep)))
        found.extend((os.path.join(root, f), context) for f in sorted(files)
                     if f.lower().endswith(".mat"))
    if not found:
        raise DataError(f"no .mat files in {directory}")
    recordings = []
    for path, context in found:
        recordings.extend(recordings_from_mat(path, label_map, channels, context=context))
    return recordings


# persistence

def write_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(table.feature_names) + ["label"])
        for row, label in zip(table.features, table.labels):
            w.writerow(["%.17g" % v for v in row] + [int(label)])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTable(f"{path} is empty") from None
        if not header or header[-1] != "label":
            raise DataError(f"{path}: last CSV column must be 'label'")
        rows = list(reader)
    names = tuple(header[:-1])
    if not rows:
        return empty_table(names)
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
        y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    return InstanceTable(X, y, names)


def write_cache(table, path):
    """Length-prefixed binary cache: magic, version, N, F, names, f64 rows, u8 labels."""
    n, f = table.features.shape
    parts = [_CACHE_MAGIC, struct.pack("<IQI", _CACHE_VERSION, n, f)]
    for name in table.feature_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(table.features.astype("<f8").tobytes())
    parts.append(table.labels.astype("u1").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_cache(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CACHE_MAGIC:
        raise DataError(f"{path} is not a table cache")
    try:
        version, n, f = struct.unpack_from("<IQI", buf, 4)
        if version != _CACHE_VERSION:
            raise DataError(f"{path}: unsupported cache version {version}")
        pos = 20
        names = []
        for _ in range(f):
            (length,) = struct.unpack_from("<H", buf, pos)
            names.append(buf[pos + 2:pos + 2 + length].decode("utf-8"))
            pos += 2 + length
        X = np.frombuffer(buf, dtype="<f8", count=n * f, offset=pos).reshape(n, f)
        pos += 8 * n * f
        y = np.frombuffer(buf, dtype="u1", count=n, offset=pos)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated cache ({exc})") from None
    return InstanceTable(X.astype(np.float64), y.astype(np.int64), tuple(names))


def load_table(path):
    if path.lower().endswith(".csv"):
        return read_csv(path)
    return read_cache(path)


def save_table(table, path):
    if path.lower().endswith(".csv"):
        write_csv(table, path)
    else:
        write_cache(table, path)
