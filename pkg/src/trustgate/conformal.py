"""Split conformal prediction sets on top of softmax scores.

The nonconformity score of a labeled row is one minus the softmax
probability of the true class, so scores live in [0, 1) and larger means
"the model liked the truth less". Calibration takes the k-th smallest score
with ``k = ceil((n + 1) * (1 - alpha))``; when that rank exceeds n (tiny
calibration sets or very small alpha) the threshold clamps to 1.0 and
prediction sets become all of [0, K). At prediction time a class joins the
set when its score ``1 - p`` is strictly below the threshold, and the top-1
class is always included so the set is never empty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from .core import (
    LogitTable,
    ProbVector,
    _readonly,
    seeded_rng,
    softmax_matrix,
)
from .errors import (
    InsufficientDataError,
    InvalidArgumentError,
    InvalidInputError,
    ParseError,
)

DEFAULT_ALPHA = 0.025
SCORE_SCHEME = "one_minus_true_prob"

_CALIBRATION_FORMAT = "trustgate-conformal-calibration"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NonconformityScores:
    """Scores ``1 - p_true`` for a labeled batch; values in [0, 1]."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidInputError(f"scores must be a vector, got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidInputError("scores must be finite and lie in [0, 1]")
        object.__setattr__(self, "scores", _readonly(arr))

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class ConformalCalibration:
    """Frozen result of a calibration run, ready to serialize."""

    alpha: float
    n: int
    qhat: float
    score_scheme: str = SCORE_SCHEME
    split_seed: int | None = None
    created_at: str = ""


def nonconformity_scores(table: LogitTable) -> NonconformityScores:
    """Score every row of a labeled table as ``1 - softmax(z)[label]``."""
    if table.labels is None:
        raise InvalidInputError("nonconformity scores need a labeled table")
    probs = softmax_matrix(table.logits)
    n = len(table)
    p_true = probs[np.arange(n), table.labels] if n else np.empty(0)
    return NonconformityScores(scores=1.0 - p_true)


def calibrate(scores: NonconformityScores | Sequence[float] | np.ndarray,
              alpha: float = DEFAULT_ALPHA, *,
              split_seed: int | None = None) -> ConformalCalibration:
    """Compute the conformal threshold ``qhat`` for miscoverage ``alpha``.

    ``qhat`` is the ``ceil((n + 1) * (1 - alpha))``-th smallest score
    (1-based). If that rank exceeds ``n`` the guarantee cannot be met with
    a finite threshold and ``qhat`` clamps to 1.0, the top of the score
    range.
    """
    if not isinstance(alpha, (int, float)) or not 0.0 < float(alpha) < 1.0:
        raise InvalidArgumentError(f"alpha must lie strictly inside (0, 1), got {alpha!r}")
    arr = scores.scores if isinstance(scores, NonconformityScores) \
        else NonconformityScores(np.asarray(scores, dtype=np.float64)).scores
    n = arr.size
    if n == 0:
        raise InsufficientDataError("calibration needs at least one score")
    rank = math.ceil((n + 1) * (1.0 - float(alpha)))
    if rank <= n:
        qhat = float(np.sort(arr, kind="stable")[rank - 1])
    else:
        qhat = 1.0
    return ConformalCalibration(
        alpha=float(alpha), n=int(n), qhat=qhat, score_scheme=SCORE_SCHEME,
        split_seed=split_seed,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def predict_set(probs: ProbVector, calibration: ConformalCalibration) -> set[int]:
    """Classes whose score ``1 - p`` falls strictly below ``qhat``.

    The argmax class is always added, so the returned set is non-empty even
    when the threshold admits nothing.
    """
    p = probs.probs
    members = np.nonzero((1.0 - p) < calibration.qhat)[0]
    out = {int(i) for i in members}
    out.add(probs.top_index)
    return out


@dataclass(frozen=True)
class CoverageReport:
    """Empirical behaviour of prediction sets on a labeled table."""

    empirical_coverage: float
    mean_set_size: float
    set_size_histogram: tuple[tuple[int, int], ...]
    n: int


def evaluate_coverage(table: LogitTable, calibration: ConformalCalibration) -> CoverageReport:
    """Coverage and set-size statistics of ``calibration`` on a labeled table."""
    if table.labels is None or len(table) == 0:
        raise InvalidInputError("coverage evaluation needs a non-empty labeled table")
    probs = softmax_matrix(table.logits)
    member = (1.0 - probs) < calibration.qhat
    member[np.arange(len(table)), np.argmax(probs, axis=1)] = True
    sizes = member.sum(axis=1)
    covered = member[np.arange(len(table)), table.labels]
    values, counts = np.unique(sizes, return_counts=True)
    return CoverageReport(
        empirical_coverage=float(np.mean(covered)),
        mean_set_size=float(np.mean(sizes)),
        set_size_histogram=tuple((int(v), int(c)) for v, c in zip(values, counts)),
        n=len(table),
    )


def split_half(table: LogitTable, seed: int) -> tuple[LogitTable, LogitTable]:
    """Shuffle a labeled table and split it into calibration and test halves.

    The calibration half gets ``N // 2`` rows, the test half the rest, so an
    odd row lands on the test side. The permutation is a pure function of
    ``seed``.
    """
    if table.labels is None:
        raise InvalidInputError("split_half needs a labeled table")
    if len(table) < 2:
        raise InsufficientDataError("need at least two rows to split")
    perm = seeded_rng(seed).permutation(len(table))
    cut = len(table) // 2
    return table.take(perm[:cut]), table.take(perm[cut:])


def save_calibration(calibration: ConformalCalibration, path: str) -> None:
    doc = {
        "format": _CALIBRATION_FORMAT,
        "version": _FORMAT_VERSION,
        "alpha": calibration.alpha,
        "n": calibration.n,
        "qhat": calibration.qhat,
        "score_scheme": calibration.score_scheme,
        "split_seed": calibration.split_seed,
        "created_at": calibration.created_at,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calibration(path: str) -> ConformalCalibration:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict) or doc.get("format") != _CALIBRATION_FORMAT:
        raise ParseError(f"not a conformal calibration document "
                         f"(format={doc.get('format') if isinstance(doc, dict) else None!r})",
                         path=path)
    if doc.get("version") != _FORMAT_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", path=path)
    try:
        cal = ConformalCalibration(
            alpha=float(doc["alpha"]), n=int(doc["n"]), qhat=float(doc["qhat"]),
            score_scheme=str(doc["score_scheme"]),
            split_seed=None if doc.get("split_seed") is None else int(doc["split_seed"]),
            created_at=str(doc.get("created_at", "")),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", path=path) from exc
    if not 0.0 < cal.alpha < 1.0 or not 0.0 <= cal.qhat <= 1.0 or cal.n < 1:
        raise ParseError("calibration fields outside their valid ranges", path=path)
    return cal
