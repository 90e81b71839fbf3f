"""Classification report: per-class recall/precision, accuracy, FP rate, confusion matrix."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import InvalidInputError

CONFUSION_CSV_VERSION = "confusion_v1"


@dataclass(frozen=True, eq=False)
class MetricsReport:
    confusion: np.ndarray  # rows truth, columns prediction
    recall: np.ndarray
    precision: np.ndarray
    accuracy: float
    false_positive_rate: float
    support: np.ndarray
    # classes whose recall / precision had a zero denominator (reported as 0)
    undefined_recall: tuple[int, ...] = ()
    undefined_precision: tuple[int, ...] = ()
    class_names: tuple[str, ...] = field(default=())

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def metrics(predictions: Sequence[int], truths: Sequence[int], n_classes: int,
            class_names: Sequence[str] | None = None) -> MetricsReport:
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truths, dtype=np.int64).reshape(-1)
    if len(pred) != len(true):
        raise InvalidInputError(f"{len(pred)} predictions for {len(true)} truths")
    for arr in (pred, true):
        if len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise InvalidInputError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    diag = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(diag, support, out=np.zeros(n_classes), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros(n_classes), where=predicted > 0)
    total = int(cm.sum())
    accuracy = float(diag.sum() / total) if total else 0.0
    negatives = int(support[0])
    fp_rate = float(cm[0, 1:].sum() / negatives) if negatives else 0.0
    names = tuple(class_names) if class_names else tuple(str(i) for i in range(n_classes))
    return MetricsReport(cm, recall, precision, accuracy, fp_rate, support,
                         tuple(int(i) for i in np.flatnonzero(support == 0)),
                         tuple(int(i) for i in np.flatnonzero(predicted == 0)), names)


def format_report(report: MetricsReport) -> str:
    names = report.class_names
    w = max(10, *(len(n) for n in names)) + 2
    lines = [f"{'class':<{w}}{'recall':>10}{'precision':>11}{'support':>9}"]
    for i, name in enumerate(names):
        r = "n/a" if i in report.undefined_recall else f"{report.recall[i]:.4f}"
        p = "n/a" if i in report.undefined_precision else f"{report.precision[i]:.4f}"
        lines.append(f"{name:<{w}}{r:>10}{p:>11}{int(report.support[i]):>9}")
    lines.append("")
    lines.append(f"{'accuracy':<{w}}{report.accuracy:>10.4f}")
    lines.append(f"{'false_pos':<{w}}{report.false_positive_rate:>10.4f}")
    lines.append(f"{'samples':<{w}}{report.total:>10d}")
    lines.append("")
    lines.append("confusion (rows truth, columns prediction)")
    cw = max(10, *(len(n) + 1 for n in names))
    lines.append(" " * w + "".join(f"{n:>{cw}}" for n in names))
    for i, name in enumerate(names):
        lines.append(f"{name:<{w}}" + "".join(f"{v:>{cw}d}" for v in report.confusion[i]))
    return "\n".join(lines) + "\n"


def confusion_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([CONFUSION_CSV_VERSION, *report.class_names])
    for name, row in zip(report.class_names, report.confusion):
        writer.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()
