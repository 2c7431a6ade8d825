"""Long-tail diagnosis and post-hoc head recomposition.

Classes are bucketed by per-class test accuracy into ``few`` (< 0.80),
``medium`` ([0.80, 0.90]) and ``many`` (> 0.90) splits. For each weak class
the classifier head row is then rewritten as the original row plus a learned
linear combination of its nearest strong rows, fitted by plain gradient
descent on a class-balanced cross-entropy objective. Strong rows and all
biases are never touched, so the surgery is strictly local: improving a few
class cannot silently rewrite the rest of the head.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import _readonly, seeded_rng
from .errors import (
    InsufficientDataError,
    InsufficientDonorsError,
    InvalidArgumentError,
    InvalidInputError,
)

FEW_BOUNDARY = 0.80
MANY_BOUNDARY = 0.90

DEFAULT_K_NEIGHBORS = 5
DEFAULT_STEPS = 200
DEFAULT_STEP_SIZE = 0.05


class Split(enum.Enum):
    FEW = "few"
    MEDIUM = "medium"
    MANY = "many"


@dataclass(frozen=True)
class ClassifierHead:
    """A linear classifier: ``logits = features @ weights.T + bias``.

    ``weights`` has shape (K, d) and ``bias`` shape (K,); both are finite
    float64 and read-only.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise InvalidInputError(f"head weights must be (K, d) with K, d >= 1, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise InvalidInputError(f"bias shape {b.shape} does not match {w.shape[0]} classes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidInputError("head weights and bias must be finite")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "bias", _readonly(b))

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        """Apply the head to one feature vector (d,) or a batch (N, d)."""
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise InvalidInputError(
                f"features of dimension {self.feature_dim} expected, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features must be finite")
        z = x @ self.weights.T + self.bias
        return z[0] if single else z


@dataclass(frozen=True)
class FeatureTable:
    """Immutable batch of penultimate-layer features with labels."""

    item_ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 1:
            raise InvalidInputError(f"features must be (N, d) with d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features must be finite")
        object.__setattr__(self, "item_ids", tuple(str(i) for i in self.item_ids))
        if len(self.item_ids) != x.shape[0]:
            raise InvalidInputError(
                f"{len(self.item_ids)} item ids for {x.shape[0]} feature rows")
        y = np.asarray(self.labels, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise InvalidInputError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if y.size and y.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitAssignment:
    """Which split each class index landed in."""

    splits: tuple[Split, ...]
    boundaries: tuple[float, float] = (FEW_BOUNDARY, MANY_BOUNDARY)

    @property
    def class_count(self) -> int:
        return len(self.splits)

    def classes_in(self, split: Split) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.splits) if s is split)

    @property
    def few(self) -> tuple[int, ...]:
        return self.classes_in(Split.FEW)

    @property
    def medium(self) -> tuple[int, ...]:
        return self.classes_in(Split.MEDIUM)

    @property
    def many(self) -> tuple[int, ...]:
        return self.classes_in(Split.MANY)


def per_class_accuracy(predictions: Sequence[int] | np.ndarray,
                       labels: Sequence[int] | np.ndarray,
                       class_count: int) -> np.ndarray:
    """Per-class accuracy vector of length ``class_count``.

    Classes absent from ``labels`` get NaN so callers can tell "no data"
    apart from "always wrong".
    """
    preds = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if preds.shape != y.shape or preds.ndim != 1:
        raise InvalidInputError(
            f"predictions {preds.shape} and labels {y.shape} must be equal-length vectors")
    if class_count < 1:
        raise InvalidArgumentError(f"class_count must be >= 1, got {class_count}")
    if y.size and (y.min() < 0 or y.max() >= class_count):
        raise InvalidInputError(f"labels must lie in [0, {class_count})")
    if preds.size and (preds.min() < 0 or preds.max() >= class_count):
        raise InvalidInputError(f"predictions must lie in [0, {class_count})")
    totals = np.bincount(y, minlength=class_count).astype(np.float64)
    correct = np.bincount(y[preds == y], minlength=class_count).astype(np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(totals > 0, correct / np.maximum(totals, 1), np.nan)


def assign_splits(accuracies: Sequence[float] | np.ndarray) -> SplitAssignment:
    """Bucket classes by accuracy: few < 0.80 <= medium <= 0.90 < many.

    Both boundary values belong to ``medium``. Classes with NaN accuracy
    (no evaluation data) conservatively land in ``few``.
    """
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.ndim != 1 or acc.size < 1:
        raise InvalidInputError(f"accuracies must be a non-empty vector, got shape {acc.shape}")
    finite = acc[~np.isnan(acc)]
    if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
        raise InvalidInputError("accuracies must lie in [0, 1]")
    out = []
    for a in acc:
        if np.isnan(a) or a < FEW_BOUNDARY:
            out.append(Split.FEW)
        elif a > MANY_BOUNDARY:
            out.append(Split.MANY)
        else:
            out.append(Split.MEDIUM)
    return SplitAssignment(splits=tuple(out))


def diagnose_splits(head: ClassifierHead, table: FeatureTable) -> SplitAssignment:
    """Assign splits from the head's per-class accuracy on ``table``."""
    if len(table) == 0:
        raise InsufficientDataError("diagnosis needs a non-empty table")
    if table.labels.max() >= head.class_count:
        raise InvalidInputError("labels exceed head class count")
    preds = np.argmax(head.logits(table.features), axis=1)
    return assign_splits(per_class_accuracy(preds, table.labels, head.class_count))


def nearest_strong(head: ClassifierHead, class_index: int,
                   assignment: SplitAssignment, k_neighbors: int) -> list[int]:
    """Indices of the ``k_neighbors`` many-split classes whose head rows are
    most cosine-similar to ``class_index``'s row.

    The class itself is never its own donor. Ties are broken by ascending
    class index; zero-norm rows compare with similarity 0.
    """
    if assignment.class_count != head.class_count:
        raise InvalidInputError(
            f"assignment covers {assignment.class_count} classes, head has {head.class_count}")
    if not 0 <= class_index < head.class_count:
        raise InvalidArgumentError(f"class_index {class_index} outside [0, {head.class_count})")
    if k_neighbors < 0:
        raise InvalidArgumentError(f"k_neighbors must be >= 0, got {k_neighbors}")
    donors = np.array([j for j in assignment.many if j != class_index], dtype=np.int64)
    if k_neighbors > donors.size:
        raise InsufficientDonorsError(
            f"{k_neighbors} donors requested but only {donors.size} many-split "
            f"classes are available")
    if k_neighbors == 0:
        return []
    w = head.weights[class_index]
    rows = head.weights[donors]
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(w)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, (rows @ w) / np.maximum(norms, 1e-300), 0.0)
    order = np.lexsort((donors, -sims))
    return [int(donors[i]) for i in order[:k_neighbors]]


def _balanced_resample_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices resampling every present class up to the largest class count."""
    classes, counts = np.unique(labels, return_counts=True)
    target = int(counts.max())
    picks = []
    for c in classes:
        members = np.nonzero(labels == c)[0]
        picks.append(rng.choice(members, size=target, replace=True))
    return np.concatenate(picks)


def recompose_head(head: ClassifierHead, assignment: SplitAssignment,
                   calibration: FeatureTable, *,
                   k_neighbors: int = DEFAULT_K_NEIGHBORS,
                   steps: int = DEFAULT_STEPS,
                   step_size: float = DEFAULT_STEP_SIZE,
                   seed: int = 0) -> ClassifierHead:
    """Rewrite each few-split head row as ``w_f + V.T @ alpha``.

    ``V`` holds the ``k_neighbors`` nearest many-split rows for class ``f``
    and ``alpha`` (initialised to zero) is fitted with ``steps`` rounds of
    plain gradient descent on cross-entropy over a class-balanced resample
    of ``calibration``. The base head is read-only throughout: every few
    class is fitted against the original rows, and rows outside the few
    split are returned bit-identical.

    ``steps=0`` returns the head unchanged; ``k_neighbors=0`` does the same
    but also emits a warning, since asking for a recomposition with no
    donors is almost certainly a mistake.
    """
    if assignment.class_count != head.class_count:
        raise InvalidInputError(
            f"assignment covers {assignment.class_count} classes, head has {head.class_count}")
    if calibration.feature_dim != head.feature_dim:
        raise InvalidInputError(
            f"calibration features have dim {calibration.feature_dim}, head expects "
            f"{head.feature_dim}")
    if len(calibration) == 0:
        raise InsufficientDataError("calibration table is empty")
    if calibration.labels.max() >= head.class_count:
        raise InvalidInputError(
            f"calibration labels exceed head class count {head.class_count}")
    if steps < 0:
        raise InvalidArgumentError(f"steps must be >= 0, got {steps}")
    if step_size <= 0:
        raise InvalidArgumentError(f"step_size must be > 0, got {step_size}")

    if k_neighbors == 0:
        warnings.warn("k_neighbors=0: recomposition is the identity transform",
                      stacklevel=2)
        return head
    if steps == 0 or not assignment.few:
        return head

    missing = [f for f in assignment.few
               if not np.any(calibration.labels == f)]
    if missing:
        raise InsufficientDataError(
            f"calibration has no samples for few classes {missing}")

    rng = seeded_rng(seed)
    idx = _balanced_resample_indices(calibration.labels, rng)
    x = calibration.features[idx]
    y = calibration.labels[idx]
    n = x.shape[0]

    base_logits = x @ head.weights.T + head.bias
    new_weights = head.weights.copy()

    for f in assignment.few:
        donor_idx = nearest_strong(head, f, assignment, k_neighbors)
        v = head.weights[donor_idx]
        g = x @ v.T
        target = (y == f).astype(np.float64)
        # Log-sum-exp of every column except f stays constant while only
        # alpha moves, so each step is O(n * k) instead of O(n * K).
        keep = np.ones(head.class_count)
        keep[f] = 0.0
        rest = logsumexp(base_logits, axis=1, b=keep)
        alpha = np.zeros(len(donor_idx))
        for _ in range(steps):
            z_f = base_logits[:, f] + g @ alpha
            p_f = np.exp(z_f - np.logaddexp(rest, z_f))
            grad = g.T @ (p_f - target) / n
            alpha = alpha - step_size * grad
        new_weights[f] = head.weights[f] + v.T @ alpha

    return ClassifierHead(weights=new_weights, bias=head.bias.copy())


@dataclass(frozen=True)
class DeltaReport:
    """Accuracy movement caused by a head recomposition."""

    few_acc_before: float
    few_acc_after: float
    overall_acc_before: float
    overall_acc_after: float

    @property
    def few_gain(self) -> float:
        return self.few_acc_after - self.few_acc_before

    @property
    def overall_drop(self) -> float:
        return self.overall_acc_before - self.overall_acc_after


def evaluate_delta(before: ClassifierHead, after: ClassifierHead,
                   test: FeatureTable, assignment: SplitAssignment) -> DeltaReport:
    """Compare two heads on the same test set.

    Few-split accuracy is the macro mean over few classes present in
    ``test``; overall accuracy is the plain micro accuracy.
    """
    if before.class_count != after.class_count or before.feature_dim != after.feature_dim:
        raise InvalidInputError("before/after heads must share shape")
    if len(test) == 0:
        raise InsufficientDataError("test table is empty")
    if test.labels.max() >= before.class_count:
        raise InvalidInputError("test labels exceed head class count")

    def _stats(head: ClassifierHead) -> tuple[float, float]:
        preds = np.argmax(head.logits(test.features), axis=1)
        overall = float(np.mean(preds == test.labels))
        acc = per_class_accuracy(preds, test.labels, head.class_count)
        few = [acc[f] for f in assignment.few if not np.isnan(acc[f])]
        few_macro = float(np.mean(few)) if few else float("nan")
        return few_macro, overall

    few_b, overall_b = _stats(before)
    few_a, overall_a = _stats(after)
    return DeltaReport(few_acc_before=few_b, few_acc_after=few_a,
                       overall_acc_before=overall_b, overall_acc_after=overall_a)
