"""Confusion matrix and one-vs-rest evaluation metrics.

Rates with a zero denominator are reported as None (never silently 0 or
1) and macro averages skip them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


def confusion(labels, preds, num_classes: int) -> np.ndarray:
    """Count matrix: counts[i][j] = examples of true class i predicted j."""
    labels = list(labels)
    preds = list(preds)
    if len(labels) != len(preds):
        raise UsageError(f"label/prediction length mismatch: {len(labels)} "
                         f"vs {len(preds)}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for y, p in zip(labels, preds):
        if not (0 <= y < num_classes and 0 <= p < num_classes):
            raise UsageError(f"class index out of range: true={y} pred={p} "
                             f"(C={num_classes})")
        cm[y, p] += 1
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = int(cm.sum())
    if total == 0:
        raise UsageError("cannot compute accuracy of an empty confusion matrix")
    return float(np.trace(cm)) / total


def per_class_rates(cm: np.ndarray, k: int):
    """One-vs-rest (sensitivity, specificity, precision) for class k.

    TP = cm[k][k], FN = rest of row k, FP = rest of column k, TN = the
    remainder. Undefined rates come back as None.
    """
    tp = int(cm[k, k])
    fn = int(cm[k].sum()) - tp
    fp = int(cm[:, k].sum()) - tp
    tn = int(cm.sum()) - tp - fn - fp
    sens = tp / (tp + fn) if tp + fn > 0 else None
    spec = tn / (tn + fp) if tn + fp > 0 else None
    prec = tp / (tp + fp) if tp + fp > 0 else None
    return sens, spec, prec


def macro_average(values) -> float:
    """Unweighted mean over the defined (non-None) per-class values."""
    defined = [v for v in values if v is not None]
    if not defined:
        raise UsageError("macro average of all-undefined values")
    return sum(defined) / len(defined)


@dataclass
class PerClassRates:
    name: str
    sensitivity: float | None
    specificity: float | None
    precision: float | None


@dataclass
class ClassReport:
    accuracy: float
    per_class: list[PerClassRates]
    macro_sensitivity: float
    macro_specificity: float
    confusion: np.ndarray


def build_report(cm: np.ndarray, names) -> ClassReport:
    per_class = []
    for k, name in enumerate(names):
        sens, spec, prec = per_class_rates(cm, k)
        per_class.append(PerClassRates(name, sens, spec, prec))
    return ClassReport(
        accuracy=accuracy(cm),
        per_class=per_class,
        macro_sensitivity=macro_average(r.sensitivity for r in per_class),
        macro_specificity=macro_average(r.specificity for r in per_class),
        confusion=cm,
    )


def report_to_dict(report: ClassReport) -> dict:
    """JSON-ready form of a report, including the raw confusion matrix."""
    return {
        "accuracy": report.accuracy,
        "per_class": [
            {"class": r.name, "sensitivity": r.sensitivity,
             "specificity": r.specificity, "precision": r.precision}
            for r in report.per_class
        ],
        "macro_sensitivity": report.macro_sensitivity,
        "macro_specificity": report.macro_specificity,
        "confusion": report.confusion.tolist(),
    }


def _fmt(v) -> str:
    return "   n/a" if v is None else f"{100 * v:6.2f}"


def format_report_text(report: ClassReport) -> str:
    """Plain-text table for terminals (rates in percent)."""
    lines = [f"accuracy: {100 * report.accuracy:.2f}%", "",
             f"{'class':<10} {'sens%':>6} {'spec%':>6} {'prec%':>6}"]
    for r in report.per_class:
        lines.append(f"{r.name:<10} {_fmt(r.sensitivity)} "
                     f"{_fmt(r.specificity)} {_fmt(r.precision)}")
    lines.append(f"{'macro':<10} {_fmt(report.macro_sensitivity)} "
                 f"{_fmt(report.macro_specificity)} {'':>6}")
    lines.append("")
    lines.append("confusion matrix (rows = true, cols = predicted):")
    width = max(5, len(str(int(report.confusion.max(initial=1)))) + 2)
    header = " " * 10 + "".join(f"{r.name[:width - 1]:>{width}}"
                                for r in report.per_class)
    lines.append(header)
    for k, r in enumerate(report.per_class):
        row = "".join(f"{int(v):>{width}}" for v in report.confusion[k])
        lines.append(f"{r.name:<10}{row}")
    return "\n".join(lines)
