"""Confusion matrices and support-weighted classification metrics.

Class order everywhere is ``[1 (ADHD), 0 (Control)]``: row 0 of a confusion
matrix holds the true-ADHD instances.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from . import _jsonio
from .exceptions import DataError

CLASS_ORDER = (1, 0)
CLASS_NAMES = ("ADHD", "Control")


class LengthMismatch(DataError):
    pass


class BadLabel(DataError):
    pass


def _validate(y_true, y_pred):
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.size} true labels vs {y_pred.size} predictions")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and not np.isin(y, CLASS_ORDER).all():
            raise BadLabel(f"{name} contains labels other than 0/1")
    return y_true.astype(np.int64), y_pred.astype(np.int64)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    row_pct: np.ndarray
    empty_rows: tuple = ()


def confusion_matrix(y_true, y_pred):
    y_true, y_pred = _validate(y_true, y_pred)
    counts = np.zeros((2, 2), dtype=np.int64)
    for i, t in enumerate(CLASS_ORDER):
        for j, p in enumerate(CLASS_ORDER):
            counts[i, j] = np.count_nonzero((y_true == t) & (y_pred == p))
    sums = counts.sum(axis=1, keepdims=True)
    pct = np.where(sums > 0, 100.0 * counts / np.maximum(sums, 1), 0.0)
    empty = tuple(CLASS_NAMES[i] for i in range(2) if sums[i, 0] == 0)
    return ConfusionMatrix(counts, pct, empty)


@dataclass
class MetricsReport:
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    confusion_counts: np.ndarray
    confusion_row_pct: np.ndarray
    per_class: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def rounded(self):
        """Metric percentages rendered at two decimals."""
        return {k: f"{getattr(self, k):.2f}"
                for k in ("accuracy", "precision_weighted", "recall_weighted", "f1_weighted")}

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "f1_weighted": self.f1_weighted,
            "class_order": list(CLASS_NAMES),
            "confusion_counts": self.confusion_counts.tolist(),
            "confusion_row_pct": self.confusion_row_pct.tolist(),
            "per_class": self.per_class,
            "flags": list(self.flags),
            "display": self.rounded(),
        }

    def to_json(self):
        return _jsonio.dumps(self.to_dict())


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def weighted_report(y_true, y_pred):
    """Accuracy and support-weighted precision/recall/F1, all in percent."""
    y_true, y_pred = _validate(y_true, y_pred)
    n = y_true.size
    if n == 0:
        raise DataError("cannot score an empty prediction set")
    cm = confusion_matrix(y_true, y_pred)
    counts = cm.counts
    flags = [f"empty_true_class:{c}" for c in cm.empty_rows]
    per_class, wp, wr, wf = {}, 0.0, 0.0, 0.0
    for i, name in enumerate(CLASS_NAMES):
        tp = counts[i, i]
        fp = counts[:, i].sum() - tp
        fn = counts[i, :].sum() - tp
        support = counts[i, :].sum()
        precision = _ratio(tp, tp + fp, f"precision_undefined:{name}", flags)
        recall = _ratio(tp, tp + fn, f"recall_undefined:{name}", flags)
        f1 = _ratio(2 * precision * recall, precision + recall, f"f1_undefined:{name}", flags)
        per_class[name] = {"precision": precision, "recall": recall, "f1": f1, "support": int(support)}
        w = support / n
        wp += w * precision
        wr += w * recall
        wf += w * f1
    accuracy = np.trace(counts) / n
    return MetricsReport(100.0 * accuracy, 100.0 * wp, 100.0 * wr, 100.0 * wf,
                         counts, cm.row_pct, per_class, flags)


def write_confusion_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [f"{c}_count" for c in CLASS_NAMES] + [f"{c}_pct" for c in CLASS_NAMES])
        for i, name in enumerate(CLASS_NAMES):
            w.writerow([name] + [int(v) for v in report.confusion_counts[i]]
                       + [f"{v:.2f}" for v in report.confusion_row_pct[i]])


TABLE_HEADER = ["model", "accuracy", "precision", "recall", "f1"]


def table_row(model, report):
    """One comparison-table row: model name and four percentages at two decimals."""
    if isinstance(report, MetricsReport):
        report = report.to_dict()
    return [model] + [f"{float(report[k]):.2f}" for k in
                      ("accuracy", "precision_weighted", "recall_weighted", "f1_weighted")]


def write_table_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        w.writerows(rows)
