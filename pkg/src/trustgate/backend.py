"""Logit producers: file-backed tables and a seeded synthetic generator.

Running a neural network is out of scope for this package. A *backend* is
anything that can yield a :class:`LogitTable`: a logit file, a feature file
paired with a linear head, or the synthetic Gaussian generator used as the
test oracle throughout the suite.

The synthetic generator draws class means as distinct random directions of
a common norm, then samples features as mean plus isotropic Gaussian noise.
The returned head's weight row for class k is the class mean *as estimated
from the generated sample*: the empirical mean direction, rescaled to the
true mean's norm. Pinning the norm keeps the zero-bias argmax geometry fair
(a noisy estimate cannot win extra recall just by having a longer row) and
makes the generator a faithful long-tail testbed: a class with 10 samples
gets a misdirected head row, exactly the failure mode the recomposition
step repairs, while a class with 1000 samples gets a nearly exact one. As
``noise_scale`` approaches zero the estimates collapse onto the true
directions and the head classifies its own sample perfectly.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RNG_ALGORITHM, LogitTable, seeded_rng
from .errors import ConfigError, InvalidArgumentError, InvalidInputError, ParseError
from .formats import read_features, read_head, read_logits
from .longtail import ClassifierHead, FeatureTable

DEFAULT_MEAN_NORM = 3.0

_SPEC_FORMAT = "trustgate-synthetic-spec"
_FORMAT_VERSION = 1


class BackendKind(enum.Enum):
    LOGIT_FILE = "logit_file"
    FEATURE_FILE_PLUS_HEAD = "feature_file_plus_head"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian mixture fixture.

    ``class_means`` may be given explicitly (shape (K, d)); otherwise K
    distinct directions of norm ``mean_norm`` are generated from ``seed``.
    ``counts[k]`` is the number of samples to draw for class k and may be
    zero; such a class keeps its true mean as the head row.
    """

    class_count: int
    feature_dim: int
    counts: tuple[int, ...]
    noise_scale: float = 1.0
    seed: int = 0
    mean_norm: float = DEFAULT_MEAN_NORM
    class_means: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.class_count < 1 or self.feature_dim < 1:
            raise InvalidArgumentError("class_count and feature_dim must be >= 1")
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.class_count:
            raise InvalidArgumentError(
                f"counts has {len(counts)} entries for {self.class_count} classes")
        if any(c < 0 for c in counts):
            raise InvalidArgumentError("counts must be non-negative")
        if not self.noise_scale > 0:
            raise InvalidArgumentError(f"noise_scale must be > 0, got {self.noise_scale!r}")
        if not self.mean_norm > 0:
            raise InvalidArgumentError(f"mean_norm must be > 0, got {self.mean_norm!r}")
        object.__setattr__(self, "counts", counts)
        if self.class_means is not None:
            means = np.asarray(self.class_means, dtype=np.float64)
            if means.shape != (self.class_count, self.feature_dim):
                raise InvalidArgumentError(
                    f"class_means shape {means.shape} does not match "
                    f"({self.class_count}, {self.feature_dim})")
            if not np.all(np.isfinite(means)):
                raise InvalidArgumentError("class_means must be finite")
            means.setflags(write=False)
            object.__setattr__(self, "class_means", means)


def _generated_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(spec.class_count, spec.feature_dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    # A zero draw is measure-zero but cheap to guard against.
    norms[norms == 0] = 1.0
    return spec.mean_norm * raw / norms


def synthetic_means(spec: SyntheticSpec) -> np.ndarray:
    """The exact class means :func:`generate_synthetic` will sample around.

    Useful for drawing fresh evaluation data from the same mixture: pass
    these means explicitly in a new spec with different counts and seed.
    """
    if spec.class_means is not None:
        return spec.class_means
    return _generated_means(spec, seeded_rng(spec.seed))


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureTable, ClassifierHead]:
    """Draw the fixture: labeled features plus the estimated-mean head.

    Deterministic per seed (counter-based generator, platform independent).
    The head's bias is zero; weight row k is the empirical mean of class k's
    sample, rescaled to the true mean's norm (direction estimated, scale
    known). Classes with zero count keep the true mean as their row.
    """
    rng = seeded_rng(spec.seed)
    means = spec.class_means if spec.class_means is not None else _generated_means(spec, rng)
    labels = np.repeat(np.arange(spec.class_count), spec.counts)
    n = labels.size
    noise = rng.normal(scale=spec.noise_scale, size=(n, spec.feature_dim))
    features = means[labels] + noise

    weights = means.copy()
    for k in range(spec.class_count):
        mask = labels == k
        if mask.any():
            estimate = features[mask].mean(axis=0)
            norm = np.linalg.norm(estimate)
            if norm > 0:
                weights[k] = np.linalg.norm(means[k]) * estimate / norm
    head = ClassifierHead(weights=weights, bias=np.zeros(spec.class_count))
    table = FeatureTable(item_ids=tuple(f"syn-{i}" for i in range(n)),
                         features=features, labels=labels)
    return table, head


def logits_from_features(table: FeatureTable, head: ClassifierHead) -> LogitTable:
    """Apply a head to a feature table, keeping ids and labels."""
    if table.feature_dim != head.feature_dim:
        raise InvalidInputError(
            f"features have dim {table.feature_dim}, head expects {head.feature_dim}")
    if len(table) and table.labels.max() >= head.class_count:
        raise InvalidInputError("labels exceed head class count")
    logits = table.features @ head.weights.T + head.bias
    return LogitTable(item_ids=table.item_ids, logits=logits, labels=table.labels.copy())


@dataclass(frozen=True)
class BackendDescriptor:
    """Where logits come from. Exactly one source is configured."""

    kind: BackendKind
    logits_path: str | None = None
    features_path: str | None = None
    head_path: str | None = None
    synthetic: SyntheticSpec | None = None

    def __post_init__(self) -> None:
        if self.kind is BackendKind.LOGIT_FILE and not self.logits_path:
            raise ConfigError("logit_file backend needs logits_path")
        if self.kind is BackendKind.FEATURE_FILE_PLUS_HEAD and not (
                self.features_path and self.head_path):
            raise ConfigError("feature_file_plus_head backend needs features_path and head_path")
        if self.kind is BackendKind.SYNTHETIC and self.synthetic is None:
            raise ConfigError("synthetic backend needs a SyntheticSpec")

    def load_table(self) -> LogitTable:
        if self.kind is BackendKind.LOGIT_FILE:
            return read_logits(self.logits_path)
        if self.kind is BackendKind.FEATURE_FILE_PLUS_HEAD:
            return logits_from_features(read_features(self.features_path),
                                        read_head(self.head_path))
        table, head = generate_synthetic(self.synthetic)
        return logits_from_features(table, head)


def save_synthetic_spec(spec: SyntheticSpec, path: str) -> None:
    doc = {
        "format": _SPEC_FORMAT,
        "version": _FORMAT_VERSION,
        "rng": RNG_ALGORITHM,
        "class_count": spec.class_count,
        "feature_dim": spec.feature_dim,
        "counts": list(spec.counts),
        "noise_scale": spec.noise_scale,
        "seed": spec.seed,
        "mean_norm": spec.mean_norm,
        "class_means": None if spec.class_means is None else spec.class_means.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_synthetic_spec(path: str) -> SyntheticSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict) or doc.get("format") != _SPEC_FORMAT:
        raise ParseError("not a synthetic spec document", path=path)
    if doc.get("version") != _FORMAT_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", path=path)
    if doc.get("rng", RNG_ALGORITHM) != RNG_ALGORITHM:
        raise ParseError(f"spec was generated for RNG {doc.get('rng')!r}, "
                         f"this build uses {RNG_ALGORITHM}", path=path)
    try:
        return SyntheticSpec(
            class_count=int(doc["class_count"]),
            feature_dim=int(doc["feature_dim"]),
            counts=tuple(int(c) for c in doc["counts"]),
            noise_scale=float(doc["noise_scale"]),
            seed=int(doc["seed"]),
            mean_norm=float(doc.get("mean_norm", DEFAULT_MEAN_NORM)),
            class_means=None if doc.get("class_means") is None
            else np.asarray(doc["class_means"], dtype=np.float64),
        )
    except (KeyError, InvalidArgumentError) as exc:
        raise ParseError(f"bad synthetic spec: {exc}", path=path) from exc
