from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustgate.errors import (
    InsufficientDataError,
    InvalidArgumentError,
    InvalidInputError,
    NotCalibratedError,
)
from trustgate.ood import (
    OBJECTIVE_PLAIN,
    EnergyConfig,
    calibrate_threshold,
    detect,
    energy,
    energy_matrix,
    fit_config,
    load_config,
    save_config,
)

bounded_logits = st.lists(
    st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=1, max_size=10
)


# ---------------------------------------------------------------- energy


def test_energy_two_zeros():
    assert energy([0.0, 0.0], 1.0) == pytest.approx(-math.log(2), abs=1e-12)


def test_energy_single_logit_is_negation():
    assert energy([3.5], 1.0) == pytest.approx(-3.5, abs=1e-12)


def test_energy_temperature_scales_symmetric_case():
    assert energy([0.0, 0.0], 2.0) == pytest.approx(-2 * math.log(2), abs=1e-12)


def test_energy_confident_logits_are_low():
    e = energy([50.0, 0.0, 0.0], 1.0)
    assert e == pytest.approx(-50.0, abs=1e-6)


def test_energy_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        energy([np.nan, 0.0], 1.0)
    with pytest.raises(InvalidArgumentError):
        energy([0.0], 0.0)


@given(bounded_logits, st.floats(min_value=-100, max_value=100, allow_nan=False))
def test_energy_shift_identity(z, c):
    assert energy(np.asarray(z) + c, 1.0) == pytest.approx(energy(z, 1.0) - c, abs=1e-9)


@given(
    z=bounded_logits,
    delta=st.floats(min_value=0.1, max_value=3.0),
    which=st.integers(min_value=0, max_value=9),
)
def test_energy_strictly_decreases_when_any_logit_grows(z, delta, which):
    i = which % len(z)
    bumped = list(z)
    bumped[i] += delta
    assert energy(bumped, 1.0) < energy(z, 1.0)


@given(bounded_logits)
def test_energy_low_temperature_limit_is_negative_max(z):
    # well separated: make entry 0 the clear max
    z = list(z)
    z[0] = max(z) + 1.0
    assert energy(z, 1e-4) == pytest.approx(-max(z), abs=1e-6)


def test_energy_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(6, 4)) * 5
    e = energy_matrix(z, 1.7)
    for i in range(6):
        assert e[i] == pytest.approx(energy(z[i], 1.7), abs=1e-12)


# ---------------------------------------------------------------- detect


def test_detect_below_threshold_is_id():
    cfg = EnergyConfig(temperature=1.0, threshold=0.0)
    v = detect([5.0], cfg)  # energy -5
    assert v.energy == -5.0 and not v.is_ood


def test_detect_boundary_is_ood():
    cfg = EnergyConfig(temperature=1.0, threshold=0.0)
    v = detect([0.0], cfg)  # energy exactly 0
    assert v.energy == 0.0 and v.is_ood
    assert v.threshold_used == 0.0


def test_detect_requires_fitted_config():
    with pytest.raises(NotCalibratedError):
        detect([1.0], EnergyConfig(temperature=1.0))


@given(bounded_logits, st.floats(min_value=-5, max_value=5, allow_nan=False))
def test_detect_consistent_with_energy(z, tau):
    cfg = EnergyConfig(temperature=1.0, threshold=tau)
    v = detect(z, cfg)
    assert v.energy == energy(z, 1.0)  # bit for bit
    assert v.is_ood == (v.energy >= tau)


# ---------------------------------------------------------------- calibration


def test_separable_pools_split_at_midpoint():
    thr, acc = calibrate_threshold([-10.0] * 20, [10.0] * 20, folds=5, seed=0)
    assert thr == 0.0
    assert acc == 1.0


@given(
    folds=st.integers(min_value=2, max_value=10),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
@settings(max_examples=30)
def test_separable_pools_are_perfect_for_any_folds(folds, seed):
    rng = np.random.default_rng(seed)
    id_e = rng.uniform(-5, -1, size=40)
    ood_e = rng.uniform(1, 5, size=40)
    _, acc = calibrate_threshold(id_e, ood_e, folds=folds, seed=seed)
    assert acc == 1.0


def test_degenerate_identical_pools():
    thr, acc = calibrate_threshold([0.0] * 10, [0.0] * 10, folds=5, seed=0)
    assert acc == 0.5
    assert thr == 0.0  # smallest (only) candidate


def test_calibrate_threshold_validation():
    with pytest.raises(InsufficientDataError):
        calibrate_threshold([], [1.0], folds=2)
    with pytest.raises(InvalidArgumentError):
        calibrate_threshold([1.0], [1.0], folds=1)
    with pytest.raises(InvalidArgumentError):
        calibrate_threshold([1.0, 2.0], [1.0, 2.0], folds=3)  # folds > pool size


def test_overlapping_gaussians_near_bayes_accuracy():
    # means +-2, unit variance: best balanced accuracy is Phi(2)
    rng = np.random.default_rng(7)
    id_e = rng.normal(-2.0, 1.0, size=4000)
    ood_e = rng.normal(2.0, 1.0, size=4000)
    thr, acc = calibrate_threshold(id_e, ood_e, folds=5, seed=0)
    bayes = 0.9772498680518208
    assert acc == pytest.approx(bayes, abs=0.02)
    assert abs(thr) < 0.3  # optimal boundary is 0 by symmetry


def test_plain_objective_tracks_imbalance():
    # with 9:1 ID majority and plain accuracy, flagging nothing scores 0.9;
    # balanced accuracy on the same data cannot dodge the OOD pool that way
    id_e = list(np.linspace(-3, 1, 90))
    ood_e = list(np.linspace(-1, 3, 10))
    _, plain = calibrate_threshold(id_e, ood_e, folds=2, seed=1, objective=OBJECTIVE_PLAIN)
    _, bal = calibrate_threshold(id_e, ood_e, folds=2, seed=1)
    assert plain != bal


def test_tie_break_picks_smallest_candidate():
    # candidates between -1 and 1 all give the same (perfect) accuracy,
    # so every fold must settle on the smallest midpoint
    thr, acc = calibrate_threshold([-3.0, -1.0], [1.0, 3.0], folds=2, seed=0)
    assert acc == 1.0
    assert thr == 0.0


# ---------------------------------------------------------------- config io


def test_fit_config_end_to_end():
    rng = np.random.default_rng(3)
    id_logits = rng.normal(size=(200, 8)) + 6 * np.eye(8)[rng.integers(0, 8, 200)]
    ood_logits = rng.normal(size=(200, 8)) * 0.1
    cfg, acc = fit_config(id_logits, ood_logits, temperature=1.0, folds=5, seed=0)
    assert cfg.is_fitted
    assert cfg.id_sample_count == 200 and cfg.ood_sample_count == 200
    assert 0.5 <= acc <= 1.0
    # fitted threshold separates the training pools decently
    id_flagged = np.mean(energy_matrix(id_logits, 1.0) >= cfg.threshold)
    assert id_flagged < 0.5


def test_config_round_trip(tmp_path):
    cfg = EnergyConfig(temperature=1.5, threshold=-2.25, folds=4, seed=9,
                       id_sample_count=10, ood_sample_count=20)
    p = str(tmp_path / "energy.json")
    save_config(cfg, p)
    assert load_config(p) == cfg


def test_config_rejects_unfitted_save(tmp_path):
    with pytest.raises(NotCalibratedError):
        save_config(EnergyConfig(temperature=1.0), str(tmp_path / "x.json"))
