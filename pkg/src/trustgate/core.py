"""Core domain types and numerically stable probability primitives.

Everything downstream (conformal sets, energy scores, head surgery, the
service) builds on the types in this module: logit tables, probability
vectors, taxonomic records, and the class-index-to-taxon mapping.

Arrays held by the frozen dataclasses here are coerced to float64/int64 and
marked read-only, so a table can be shared between calibration and
evaluation code without defensive copies.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError, NotFoundError

RNG_ALGORITHM = "philox4x64"


def seeded_rng(seed: int) -> np.random.Generator:
    """Return the package-wide counter-based generator for ``seed``.

    Every stochastic step in trustgate (splits, folds, resampling, synthetic
    data) draws from this construction so artifacts can record a single
    algorithm name (``philox4x64``) and stay reproducible across platforms.
    """
    return np.random.Generator(np.random.Philox(seed))


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def as_logit_matrix(values: object) -> np.ndarray:
    """Coerce ``values`` to a finite float64 matrix of shape (N, K), K >= 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"logits must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise InvalidInputError("logit matrix needs at least one class column")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits must be finite (no NaN or infinity)")
    return arr


def as_logit_vector(values: object) -> np.ndarray:
    """Coerce ``values`` to a finite float64 vector with K >= 1 entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"expected a 1-dimensional logit vector, got shape {arr.shape}")
    if arr.size < 1:
        raise InvalidInputError("logit vector must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits must be finite (no NaN or infinity)")
    return arr


@dataclass(frozen=True)
class LogitTable:
    """Immutable batch of raw classifier outputs.

    Attributes
    ----------
    item_ids:
        One opaque identifier per row.
    logits:
        Finite float64 matrix of shape (N, K). N may be zero (useful for
        degenerate fixtures); K must be at least 1.
    labels:
        Optional int64 vector of true class indices in ``[0, K)``. Either
        present for every row or absent entirely.
    """

    item_ids: tuple[str, ...]
    logits: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 2:
            raise InvalidInputError(f"logits must be 2-dimensional, got shape {logits.shape}")
        if logits.shape[1] < 1:
            raise InvalidInputError("a logit table needs at least one class column")
        if not np.all(np.isfinite(logits)):
            raise InvalidInputError("logits must be finite (no NaN or infinity)")
        object.__setattr__(self, "item_ids", tuple(str(i) for i in self.item_ids))
        if len(self.item_ids) != logits.shape[0]:
            raise InvalidInputError(
                f"{len(self.item_ids)} item ids for {logits.shape[0]} logit rows")
        object.__setattr__(self, "logits", _readonly(logits))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (logits.shape[0],):
                raise InvalidInputError(
                    f"labels shape {labels.shape} does not match {logits.shape[0]} rows")
            if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
                raise InvalidInputError(
                    f"labels must lie in [0, {logits.shape[1]}), got range "
                    f"[{labels.min()}, {labels.max()}]")
            object.__setattr__(self, "labels", _readonly(labels))

    def __len__(self) -> int:
        return self.logits.shape[0]

    @property
    def class_count(self) -> int:
        return self.logits.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def take(self, indices: Sequence[int] | np.ndarray) -> "LogitTable":
        """Return a new table containing the selected rows, in order."""
        idx = np.asarray(indices, dtype=np.int64)
        return LogitTable(
            item_ids=tuple(self.item_ids[i] for i in idx),
            logits=self.logits[idx].copy(),
            labels=None if self.labels is None else self.labels[idx].copy(),
        )


@dataclass(frozen=True)
class ProbVector:
    """A finite probability vector: entries >= 0 summing to 1 within 1e-9."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise InvalidInputError(f"probability vector must be 1-dimensional and non-empty, "
                                    f"got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise InvalidInputError("probabilities must be finite")
        if probs.min() < 0.0:
            raise InvalidInputError(f"probabilities must be non-negative, min was {probs.min()}")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"probabilities must sum to 1 within 1e-9, got {total!r}")
        object.__setattr__(self, "probs", _readonly(probs))

    def __len__(self) -> int:
        return self.probs.size

    @property
    def top_index(self) -> int:
        """Index of the largest entry (smallest index wins ties)."""
        return int(np.argmax(self.probs))


def softmax(logits: Sequence[float] | np.ndarray) -> ProbVector:
    """Stable softmax of a single logit vector.

    The maximum is subtracted before exponentiation, so inputs like
    ``[1000.0, 1000.0]`` map to ``[0.5, 0.5]`` without overflow.
    """
    z = as_logit_vector(logits)
    shifted = z - z.max()
    e = np.exp(shifted)
    return ProbVector(e / e.sum())


def softmax_matrix(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax for an (N, K) matrix; returns (N, K) floats."""
    z = as_logit_matrix(logits)
    if z.shape[0] == 0:
        return z.copy()
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def top_k(probs: ProbVector | Sequence[float] | np.ndarray, k: int) -> list[tuple[int, float]]:
    """Return the ``k`` most probable classes as (index, probability) pairs.

    Ordered by descending probability; exact ties are broken by ascending
    class index so the output is deterministic.
    """
    p = probs.probs if isinstance(probs, ProbVector) else np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError(f"expected a probability vector, got shape {p.shape}")
    if not isinstance(k, (int, np.integer)) or k < 1 or k > p.size:
        raise InvalidArgumentError(f"k must be an integer in [1, {p.size}], got {k!r}")
    # lexsort sorts by the last key first: descending probability, then
    # ascending index among equals.
    order = np.lexsort((np.arange(p.size), -p))
    return [(int(i), float(p[i])) for i in order[:k]]


class Rank(enum.Enum):
    """Coarse-to-fine taxonomic ranks, in canonical order."""

    KINGDOM = "kingdom"
    PHYLUM = "phylum"
    CLASS = "class"
    ORDER = "order"
    FAMILY = "family"
    GENUS = "genus"
    SPECIES = "species"

    @classmethod
    def parse(cls, text: str) -> "Rank":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidInputError(
                f"unknown rank {text!r}; expected one of "
                f"{[r.value for r in cls]}") from None


@dataclass(frozen=True)
class TaxonRecord:
    """A single node of the taxonomy.

    ``ancestor_ids`` runs root-first down to the immediate parent and must
    not contain the taxon itself, which rules out one-node cycles by
    construction.
    """

    taxon_id: int
    scientific_name: str
    common_name: str
    rank: Rank
    ancestor_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.taxon_id < 0:
            raise InvalidInputError(f"taxon_id must be non-negative, got {self.taxon_id}")
        object.__setattr__(self, "ancestor_ids", tuple(int(a) for a in self.ancestor_ids))
        if self.taxon_id in self.ancestor_ids:
            raise InvalidInputError(
                f"taxon {self.taxon_id} lists itself as an ancestor")
        if len(set(self.ancestor_ids)) != len(self.ancestor_ids):
            raise InvalidInputError(
                f"taxon {self.taxon_id} has duplicate ancestors {self.ancestor_ids}")

    def is_descendant_of(self, taxon_id: int) -> bool:
        """True when ``taxon_id`` is this taxon or one of its ancestors."""
        return taxon_id == self.taxon_id or taxon_id in self.ancestor_ids


class Taxonomy:
    """An id-keyed collection of :class:`TaxonRecord` with unique ids."""

    def __init__(self, records: Iterable[TaxonRecord]) -> None:
        self._by_id: dict[int, TaxonRecord] = {}
        for rec in records:
            if rec.taxon_id in self._by_id:
                raise InvalidInputError(f"duplicate taxon id {rec.taxon_id}")
            self._by_id[rec.taxon_id] = rec

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, taxon_id: int) -> bool:
        return taxon_id in self._by_id

    def __iter__(self) -> Iterator[TaxonRecord]:
        return iter(self._by_id.values())

    def get(self, taxon_id: int) -> TaxonRecord:
        try:
            return self._by_id[taxon_id]
        except KeyError:
            raise NotFoundError(f"unknown taxon id {taxon_id}") from None


@dataclass(frozen=True)
class ClassIndexMap:
    """Total injective mapping from model class index to taxon id.

    ``taxon_ids[i]`` is the taxon for class index ``i``; every index in
    ``[0, class_count)`` is covered and no taxon appears twice.
    """

    taxon_ids: tuple[int, ...]
    _index_by_taxon: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        taxa = tuple(int(t) for t in self.taxon_ids)
        if len(taxa) == 0:
            raise InvalidInputError("class index map must cover at least one class")
        if len(set(taxa)) != len(taxa):
            raise InvalidInputError("class index map must be injective: duplicate taxon id")
        object.__setattr__(self, "taxon_ids", taxa)
        object.__setattr__(self, "_index_by_taxon", {t: i for i, t in enumerate(taxa)})

    @property
    def class_count(self) -> int:
        return len(self.taxon_ids)

    def taxon_for(self, index: int) -> int:
        if not 0 <= index < len(self.taxon_ids):
            raise NotFoundError(f"class index {index} outside [0, {len(self.taxon_ids)})")
        return self.taxon_ids[index]

    def index_for(self, taxon_id: int) -> int:
        try:
            return self._index_by_taxon[int(taxon_id)]
        except KeyError:
            raise NotFoundError(f"taxon id {taxon_id} not in class index map") from None
