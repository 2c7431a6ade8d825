"""Energy-based out-of-distribution detection.

The energy of a logit vector is ``-T * logsumexp(z / T)``; in-distribution
inputs produce lower energies than inputs the model has never seen, so a
single scalar threshold turns the score into a detector: ``energy >=
threshold`` means out-of-distribution. The threshold is calibrated by a
fold-wise sweep over candidate cuts (midpoints between adjacent distinct
energies) that maximises balanced accuracy between an in-distribution pool
and a known-outlier pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import as_logit_matrix, as_logit_vector, seeded_rng
from .errors import (
    InsufficientDataError,
    InvalidArgumentError,
    NotCalibratedError,
    ParseError,
)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_FOLDS = 5
OBJECTIVE_BALANCED = "balanced_accuracy"
OBJECTIVE_PLAIN = "plain_accuracy"

_CONFIG_FORMAT = "trustgate-energy-config"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnergyConfig:
    """Detector settings plus, after fitting, the decision threshold."""

    temperature: float = DEFAULT_TEMPERATURE
    threshold: float | None = None
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    objective: str = OBJECTIVE_BALANCED
    id_sample_count: int | None = None
    ood_sample_count: int | None = None

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be > 0, got {self.temperature!r}")
        if self.objective not in (OBJECTIVE_BALANCED, OBJECTIVE_PLAIN):
            raise InvalidArgumentError(f"unknown objective {self.objective!r}")

    @property
    def is_fitted(self) -> bool:
        return self.threshold is not None


@dataclass(frozen=True)
class OodVerdict:
    energy: float
    is_ood: bool
    threshold_used: float


def energy(logits: Sequence[float] | np.ndarray,
           temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Energy score ``-T * logsumexp(z / T)`` of one logit vector.

    Computed through a max-shifted log-sum-exp, so huge logits do not
    overflow. Adding a constant c to every logit subtracts c from the
    energy; as T approaches zero the score tends to ``-max(z)``.
    """
    z = as_logit_vector(logits)
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature!r}")
    return float(-temperature * logsumexp(z / temperature))


def energy_matrix(logits: np.ndarray,
                  temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Row-wise energies of an (N, K) logit matrix."""
    z = as_logit_matrix(logits)
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature!r}")
    if z.shape[0] == 0:
        return np.empty(0)
    return -temperature * logsumexp(z / temperature, axis=1)


def detect(logits: Sequence[float] | np.ndarray, config: EnergyConfig) -> OodVerdict:
    """Score one logit vector and compare against the fitted threshold."""
    if config.threshold is None:
        raise NotCalibratedError("energy config has no threshold; fit it first")
    e = energy(logits, config.temperature)
    return OodVerdict(energy=e, is_ood=bool(e >= config.threshold),
                      threshold_used=config.threshold)


def _candidate_thresholds(pooled: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent distinct pooled energies.

    A pool with a single distinct value has no midpoints; the value itself
    is then the only candidate, which keeps degenerate fixtures decidable.
    """
    distinct = np.unique(pooled)
    if distinct.size == 1:
        return distinct
    return (distinct[:-1] + distinct[1:]) / 2.0


def _sweep(id_energies: np.ndarray, ood_energies: np.ndarray,
           objective: str) -> tuple[float, float]:
    """Best (threshold, accuracy) over all candidate cuts; ties go to the
    smallest threshold."""
    candidates = _candidate_thresholds(np.concatenate([id_energies, ood_energies]))
    id_sorted = np.sort(id_energies)
    ood_sorted = np.sort(ood_energies)
    # An input is kept when energy < t and flagged when energy >= t.
    kept = np.searchsorted(id_sorted, candidates, side="left") / id_sorted.size
    flagged = 1.0 - np.searchsorted(ood_sorted, candidates, side="left") / ood_sorted.size
    if objective == OBJECTIVE_BALANCED:
        score = (kept + flagged) / 2.0
    else:
        total = id_sorted.size + ood_sorted.size
        score = (kept * id_sorted.size + flagged * ood_sorted.size) / total
    best = int(np.argmax(score))  # first maximum = smallest candidate
    return float(candidates[best]), float(score[best])


def calibrate_threshold(id_energies: Sequence[float] | np.ndarray,
                        ood_energies: Sequence[float] | np.ndarray,
                        *, folds: int = DEFAULT_FOLDS, seed: int = 0,
                        objective: str = OBJECTIVE_BALANCED) -> tuple[float, float]:
    """Fold-averaged threshold sweep.

    Both pools are shuffled with ``seed`` and split into ``folds`` parts;
    each round sweeps one in-distribution part against the matching outlier
    part and the per-round best thresholds and accuracies are averaged.
    Returns ``(threshold, accuracy)``.
    """
    id_arr = np.asarray(id_energies, dtype=np.float64)
    ood_arr = np.asarray(ood_energies, dtype=np.float64)
    if id_arr.ndim != 1 or ood_arr.ndim != 1:
        raise InvalidArgumentError("energy pools must be vectors")
    if id_arr.size == 0 or ood_arr.size == 0:
        raise InsufficientDataError("both energy pools must be non-empty")
    if not np.all(np.isfinite(id_arr)) or not np.all(np.isfinite(ood_arr)):
        raise InvalidArgumentError("energies must be finite")
    if objective not in (OBJECTIVE_BALANCED, OBJECTIVE_PLAIN):
        raise InvalidArgumentError(f"unknown objective {objective!r}")
    if folds < 2:
        raise InvalidArgumentError(f"folds must be >= 2, got {folds}")
    smallest = min(id_arr.size, ood_arr.size)
    if folds > smallest:
        raise InvalidArgumentError(
            f"folds={folds} exceeds the smaller pool size {smallest}")

    rng = seeded_rng(seed)
    id_parts = np.array_split(id_arr[rng.permutation(id_arr.size)], folds)
    ood_parts = np.array_split(ood_arr[rng.permutation(ood_arr.size)], folds)
    thresholds = []
    accuracies = []
    for id_part, ood_part in zip(id_parts, ood_parts):
        t, a = _sweep(id_part, ood_part, objective)
        thresholds.append(t)
        accuracies.append(a)
    return float(np.mean(thresholds)), float(np.mean(accuracies))


def fit_config(id_logits: np.ndarray, ood_logits: np.ndarray, *,
               temperature: float = DEFAULT_TEMPERATURE,
               folds: int = DEFAULT_FOLDS, seed: int = 0,
               objective: str = OBJECTIVE_BALANCED) -> tuple[EnergyConfig, float]:
    """Fit a full :class:`EnergyConfig` from two logit matrices.

    Returns the fitted config and the fold-averaged calibration accuracy.
    """
    id_e = energy_matrix(id_logits, temperature)
    ood_e = energy_matrix(ood_logits, temperature)
    threshold, accuracy = calibrate_threshold(
        id_e, ood_e, folds=folds, seed=seed, objective=objective)
    config = EnergyConfig(
        temperature=temperature, threshold=threshold, folds=folds, seed=seed,
        objective=objective, id_sample_count=int(id_e.size),
        ood_sample_count=int(ood_e.size))
    return config, accuracy


def save_config(config: EnergyConfig, path: str) -> None:
    if not config.is_fitted:
        raise NotCalibratedError("refusing to save a config with no fitted threshold")
    doc = {
        "format": _CONFIG_FORMAT,
        "version": _FORMAT_VERSION,
        "temperature": config.temperature,
        "threshold": config.threshold,
        "folds": config.folds,
        "seed": config.seed,
        "objective": config.objective,
        "id_sample_count": config.id_sample_count,
        "ood_sample_count": config.ood_sample_count,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> EnergyConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict) or doc.get("format") != _CONFIG_FORMAT:
        raise ParseError(f"not an energy config document "
                         f"(format={doc.get('format') if isinstance(doc, dict) else None!r})",
                         path=path)
    if doc.get("version") != _FORMAT_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", path=path)
    try:
        return EnergyConfig(
            temperature=float(doc["temperature"]),
            threshold=None if doc.get("threshold") is None else float(doc["threshold"]),
            folds=int(doc["folds"]),
            seed=int(doc["seed"]),
            objective=str(doc["objective"]),
            id_sample_count=None if doc.get("id_sample_count") is None
            else int(doc["id_sample_count"]),
            ood_sample_count=None if doc.get("ood_sample_count") is None
            else int(doc["ood_sample_count"]),
        )
    except (KeyError, InvalidArgumentError) as exc:
        raise ParseError(f"bad energy config: {exc}", path=path) from exc
