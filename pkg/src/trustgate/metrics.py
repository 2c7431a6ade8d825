"""Evaluation reports: top-k accuracy, macro accuracy, accuracy histograms.

``evaluate`` turns a labeled logit table into an :class:`EvalReport` with
micro top-1/top-5, macro mean-per-class accuracy (absent classes excluded),
a 10-bin histogram of per-class accuracies over [0, 1] and the fraction of
evaluated classes below 0.80. Micro and macro deliberately disagree under
class imbalance; both are reported.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ClassIndexMap, LogitTable
from .errors import InvalidArgumentError, InvalidInputError, ParseError
from .longtail import SplitAssignment, per_class_accuracy

HISTOGRAM_BINS = 10
WEAK_CLASS_BOUNDARY = 0.80

_REPORT_FORMAT = "trustgate-eval-report"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EvalReport:
    """Summary metrics of one labeled table."""

    top1: float
    top5: float
    mean_per_class: float
    histogram: tuple[int, ...]
    class_count_evaluated: int
    below_80_fraction: float


def histogram(accuracies: Sequence[float] | np.ndarray,
              bins: int = HISTOGRAM_BINS) -> np.ndarray:
    """Counts of per-class accuracies in equal-width bins over [0, 1].

    The final bin is closed at 1.0, so a perfect class lands in the top bin.
    NaN entries (classes without data) are dropped.
    """
    if bins < 1:
        raise InvalidArgumentError(f"bins must be >= 1, got {bins}")
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.ndim != 1:
        raise InvalidInputError(f"accuracies must be a vector, got shape {acc.shape}")
    present = acc[~np.isnan(acc)]
    if present.size and (present.min() < 0.0 or present.max() > 1.0):
        raise InvalidInputError("accuracies must lie in [0, 1]")
    counts, _ = np.histogram(present, bins=bins, range=(0.0, 1.0))
    return counts


def _rank_of_label(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of each row's true label under descending logit order.

    Ties between equal logits are broken by ascending class index, matching
    the deterministic ordering used everywhere else.
    """
    order = np.argsort(-logits, axis=1, kind="stable")
    ranks = np.empty_like(order)
    n, k = logits.shape
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(k)[None, :]
    return ranks[np.arange(n), labels]


def evaluate(table: LogitTable) -> EvalReport:
    """Compute the full report for a non-empty labeled table.

    Top-5 uses ``min(5, K)`` candidates so it is well-defined for small
    label spaces; mean-per-class averages only classes that appear in the
    table.
    """
    if table.labels is None or len(table) == 0:
        raise InvalidInputError("evaluation needs a non-empty labeled table")
    ranks = _rank_of_label(table.logits, table.labels)
    top1 = float(np.mean(ranks < 1))
    top5 = float(np.mean(ranks < min(5, table.class_count)))
    preds = np.argmax(table.logits, axis=1)
    acc = per_class_accuracy(preds, table.labels, table.class_count)
    present = acc[~np.isnan(acc)]
    counts = histogram(acc)
    return EvalReport(
        top1=top1,
        top5=top5,
        mean_per_class=float(np.mean(present)),
        histogram=tuple(int(c) for c in counts),
        class_count_evaluated=int(present.size),
        below_80_fraction=float(np.mean(present < WEAK_CLASS_BOUNDARY)),
    )


def save_report(report: EvalReport, path: str) -> None:
    doc = {
        "format": _REPORT_FORMAT,
        "version": _FORMAT_VERSION,
        "top1": report.top1,
        "top5": report.top5,
        "mean_per_class": report.mean_per_class,
        "histogram": list(report.histogram),
        "class_count_evaluated": report.class_count_evaluated,
        "below_80_fraction": report.below_80_fraction,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> EvalReport:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict) or doc.get("format") != _REPORT_FORMAT:
        raise ParseError("not an eval report document", path=path)
    if doc.get("version") != _FORMAT_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", path=path)
    try:
        return EvalReport(
            top1=float(doc["top1"]), top5=float(doc["top5"]),
            mean_per_class=float(doc["mean_per_class"]),
            histogram=tuple(int(c) for c in doc["histogram"]),
            class_count_evaluated=int(doc["class_count_evaluated"]),
            below_80_fraction=float(doc["below_80_fraction"]),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", path=path) from exc


def write_per_class_csv(path: str, table: LogitTable, *,
                        class_map: ClassIndexMap | None = None,
                        assignment: SplitAssignment | None = None) -> None:
    """Dump per-class rows ``taxon_id,n_test,accuracy,split``.

    Without a class map, the taxon column falls back to the class index.
    Classes absent from the table get an empty accuracy cell. The split
    column is filled from ``assignment`` when given, otherwise left empty.
    """
    if table.labels is None:
        raise InvalidInputError("per-class export needs a labeled table")
    preds = np.argmax(table.logits, axis=1) if len(table) else np.empty(0, dtype=np.int64)
    acc = per_class_accuracy(preds, table.labels, table.class_count)
    totals = np.bincount(table.labels, minlength=table.class_count) if len(table) \
        else np.zeros(table.class_count, dtype=np.int64)
    if class_map is not None and class_map.class_count != table.class_count:
        raise InvalidInputError("class map size does not match table class count")
    if assignment is not None and assignment.class_count != table.class_count:
        raise InvalidInputError("split assignment size does not match table class count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["taxon_id", "n_test", "accuracy", "split"])
        for k in range(table.class_count):
            taxon = class_map.taxon_for(k) if class_map is not None else k
            acc_cell = "" if np.isnan(acc[k]) else repr(float(acc[k]))
            split_cell = assignment.splits[k].value if assignment is not None else ""
            writer.writerow([taxon, int(totals[k]), acc_cell, split_cell])
