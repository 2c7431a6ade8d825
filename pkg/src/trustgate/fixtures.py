"""Synthetic fixtures shared by the test suite, the acceptance checks and
the runnable scripts.

Two families live here:

- a plain Gaussian logit fixture for conformal and OOD experiments, and
- the standard long-tail fixture: 20 classes, 17 data-rich head classes and
  3 tail classes with 10 training samples each. Tail class means sit between
  two head-class directions at slightly reduced norm, so the zero-bias
  empirical-mean head under-recalls them; this is the regime the head
  recomposition is designed to repair.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import SyntheticSpec, generate_synthetic, logits_from_features
from .core import (
    ClassIndexMap,
    LogitTable,
    Rank,
    TaxonRecord,
    Taxonomy,
    seeded_rng,
)
from .longtail import ClassifierHead, FeatureTable

# Long-tail fixture geometry. Head classes are random unit directions of
# norm TAIL_RHO; tail means are the normalized sum of two anchor directions,
# shrunk by TAIL_GAMMA so the zero-bias head systematically under-scores
# them even before estimation noise is added.
LONGTAIL_CLASS_COUNT = 20
LONGTAIL_TAIL_CLASSES = (17, 18, 19)
LONGTAIL_ANCHORS = ((0, 1), (2, 3), (4, 5))
LONGTAIL_DIM = 16
TAIL_RHO = 4.0
TAIL_GAMMA = 0.8
TAIL_NOISE = 1.0
HEAD_TRAIN_COUNT = 200
TAIL_TRAIN_COUNT = 10
HEAD_CAL_COUNT = 30
TAIL_CAL_COUNT = 10
TEST_COUNT_PER_CLASS = 50


def gaussian_logit_table(n_rows: int, class_count: int = 10, seed: int = 0, *,
                         margin: float = 2.5, noise: float = 1.0) -> LogitTable:
    """Labeled logits: ``margin`` on the true class plus unit Gaussian noise.

    Rows are exchangeable draws from one distribution, which is exactly the
    regime where split conformal calibration carries its coverage guarantee.
    """
    rng = seeded_rng(seed)
    labels = rng.integers(0, class_count, size=n_rows)
    logits = rng.normal(scale=noise, size=(n_rows, class_count))
    logits[np.arange(n_rows), labels] += margin
    return LogitTable(item_ids=tuple(f"g-{i}" for i in range(n_rows)),
                      logits=logits, labels=labels)


@dataclass(frozen=True)
class LongtailFixture:
    """One seeded draw of the standard long-tail testbed."""

    head: ClassifierHead
    train: FeatureTable
    cal: FeatureTable
    test: FeatureTable
    class_means: np.ndarray
    tail_classes: tuple[int, ...]


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return rows / norms


def _longtail_means(seed: int, *, separable_tails: bool) -> np.ndarray:
    head_count = LONGTAIL_CLASS_COUNT - len(LONGTAIL_TAIL_CLASSES)
    rng = seeded_rng(seed)
    dirs = _unit_rows(rng.normal(size=(head_count, LONGTAIL_DIM)))
    if separable_tails:
        tail_dirs = _unit_rows(rng.normal(size=(len(LONGTAIL_TAIL_CLASSES), LONGTAIL_DIM)))
        tails = TAIL_RHO * tail_dirs
    else:
        tails = np.stack([
            TAIL_GAMMA * TAIL_RHO * _unit_rows((dirs[a] + dirs[b])[None, :])[0]
            for a, b in LONGTAIL_ANCHORS
        ])
    return np.vstack([TAIL_RHO * dirs, tails])


def longtail_fixture(seed: int, *, separable_tails: bool = False) -> LongtailFixture:
    """Draw head, calibration and test tables for one fixture seed.

    The head is estimated from a *training* draw in which each tail class
    contributes only ``TAIL_TRAIN_COUNT`` samples; calibration and test are
    independent draws from the same class means. With ``separable_tails``
    the tail means are their own well-separated directions instead of
    between-anchor blends, giving a testbed where recomposition has nothing
    to fix.
    """
    means = _longtail_means(seed * 8 + 0, separable_tails=separable_tails)
    tail = set(LONGTAIL_TAIL_CLASSES)
    train_counts = tuple(TAIL_TRAIN_COUNT if k in tail else HEAD_TRAIN_COUNT
                         for k in range(LONGTAIL_CLASS_COUNT))
    cal_counts = tuple(TAIL_CAL_COUNT if k in tail else HEAD_CAL_COUNT
                       for k in range(LONGTAIL_CLASS_COUNT))
    test_counts = (TEST_COUNT_PER_CLASS,) * LONGTAIL_CLASS_COUNT

    def draw(counts: tuple[int, ...], sub: int) -> tuple[FeatureTable, ClassifierHead]:
        spec = SyntheticSpec(
            class_count=LONGTAIL_CLASS_COUNT, feature_dim=LONGTAIL_DIM,
            counts=counts, noise_scale=TAIL_NOISE, seed=seed * 8 + sub,
            class_means=means)
        return generate_synthetic(spec)

    train, head = draw(train_counts, 1)
    cal, _ = draw(cal_counts, 2)
    test, _ = draw(test_counts, 3)
    return LongtailFixture(head=head, train=train, cal=cal, test=test,
                           class_means=means, tail_classes=LONGTAIL_TAIL_CLASSES)


def demo_taxonomy(class_count: int) -> tuple[Taxonomy, ClassIndexMap]:
    """A miniature insect taxonomy with one species per model class.

    Class index i maps to taxon id ``100 + i``; every species hangs off a
    single kingdom (1) / class (10) / order (20 or 21) spine so clade
    filtering has something to select on.
    """
    records = [
        TaxonRecord(1, "Animalia", "animals", Rank.KINGDOM),
        TaxonRecord(10, "Insecta", "insects", Rank.CLASS, (1,)),
        TaxonRecord(20, "Coleoptera", "beetles", Rank.ORDER, (1, 10)),
        TaxonRecord(21, "Lepidoptera", "butterflies and moths", Rank.ORDER, (1, 10)),
    ]
    for i in range(class_count):
        order = 20 if i % 2 == 0 else 21
        records.append(TaxonRecord(
            100 + i, f"Demogenus species{i}", f"demo insect {i}",
            Rank.SPECIES, (1, 10, order)))
    class_map = ClassIndexMap(taxon_ids=tuple(100 + i for i in range(class_count)))
    return Taxonomy(records), class_map


def build_demo_bundle(bundle_dir: str | Path, seed: int = 0, *,
                      class_count: int = 10, feature_dim: int = 8) -> Path:
    """Write a complete, internally consistent bundle directory.

    The head comes from a balanced synthetic draw; the conformal artifact is
    calibrated on a fresh draw from the same mixture; the energy threshold
    is fitted against a near-zero-norm feature pool, which produces high
    energies under the head and plays the out-of-distribution role.
    """
    from .conformal import calibrate, nonconformity_scores, save_calibration
    from .formats import (
        write_class_map_csv,
        write_head,
        write_taxonomy_csv,
    )
    from .ood import fit_config, save_config

    root = Path(bundle_dir)
    root.mkdir(parents=True, exist_ok=True)

    train_spec = SyntheticSpec(class_count=class_count, feature_dim=feature_dim,
                               counts=(200,) * class_count, noise_scale=1.0,
                               seed=seed * 16 + 1)
    train, head = generate_synthetic(train_spec)
    means = train_spec.class_means
    if means is None:
        from .backend import synthetic_means
        means = synthetic_means(train_spec)

    cal_spec = SyntheticSpec(class_count=class_count, feature_dim=feature_dim,
                             counts=(100,) * class_count, noise_scale=1.0,
                             seed=seed * 16 + 2, class_means=means)
    cal_table, _ = generate_synthetic(cal_spec)
    cal_logits = logits_from_features(cal_table, head)
    calibration = calibrate(nonconformity_scores(cal_logits), split_seed=seed)

    rng = seeded_rng(seed * 16 + 3)
    ood_features = rng.normal(scale=0.3, size=(400, feature_dim))
    ood_logits = ood_features @ head.weights.T + head.bias
    energy_config, _ = fit_config(cal_logits.logits, ood_logits, seed=seed)

    taxonomy, class_map = demo_taxonomy(class_count)

    save_calibration(calibration, str(root / "calibration.json"))
    save_config(energy_config, str(root / "energy.json"))
    write_class_map_csv(class_map, str(root / "class_map.csv"))
    write_taxonomy_csv(taxonomy, str(root / "taxa.csv"))
    write_head(head, str(root / "head.tghd"))
    return root
