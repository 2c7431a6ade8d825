from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustgate.errors import (
    InsufficientDataError,
    InsufficientDonorsError,
    InvalidInputError,
)
from trustgate.fixtures import longtail_fixture
from trustgate.longtail import (
    ClassifierHead,
    FeatureTable,
    Split,
    SplitAssignment,
    assign_splits,
    diagnose_splits,
    evaluate_delta,
    nearest_strong,
    per_class_accuracy,
    recompose_head,
)


def head_of(rows, bias=None):
    w = np.asarray(rows, dtype=float)
    return ClassifierHead(weights=w, bias=np.zeros(w.shape[0]) if bias is None else bias)


# ---------------------------------------------------------------- accuracy


def test_per_class_accuracy_identity():
    acc = per_class_accuracy([0, 1, 2], [0, 1, 2], 3)
    assert np.array_equal(acc, [1.0, 1.0, 1.0])


def test_per_class_accuracy_partial():
    acc = per_class_accuracy([0, 1, 1], [0, 0, 1], 2)
    assert np.array_equal(acc, [0.5, 1.0])


def test_per_class_accuracy_absent_class_is_nan():
    acc = per_class_accuracy([0, 0], [0, 0], 3)
    assert acc[0] == 1.0
    assert np.isnan(acc[1]) and np.isnan(acc[2])


def test_per_class_accuracy_length_mismatch():
    with pytest.raises(InvalidInputError):
        per_class_accuracy([0, 1], [0], 2)


# ---------------------------------------------------------------- splits


def test_assign_splits_boundaries():
    a = assign_splits([0.79, 0.80, 0.90, 0.91])
    assert a.splits == (Split.FEW, Split.MEDIUM, Split.MEDIUM, Split.MANY)


def test_assign_splits_boundary_neighborhood():
    a = assign_splits([0.799999, 0.80, 0.90, 0.900001])
    assert a.splits == (Split.FEW, Split.MEDIUM, Split.MEDIUM, Split.MANY)


def test_assign_splits_extremes():
    assert assign_splits([1.0, 1.0]).splits == (Split.MANY, Split.MANY)
    assert assign_splits([0.0]).splits == (Split.FEW,)


def test_assign_splits_absent_class_is_few():
    a = assign_splits([np.nan, 0.95])
    assert a.splits == (Split.FEW, Split.MANY)


def test_split_assignment_accessors():
    a = assign_splits([0.5, 0.85, 0.95, 0.99])
    assert a.few == (0,)
    assert a.medium == (1,)
    assert a.many == (2, 3)
    assert a.boundaries == (0.80, 0.90)


@given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False),
                min_size=1, max_size=30))
def test_assign_splits_matches_bruteforce(accs):
    got = assign_splits(accs).splits
    for acc, split in zip(accs, got):
        if acc < 0.80:
            assert split is Split.FEW
        elif acc <= 0.90:
            assert split is Split.MEDIUM
        else:
            assert split is Split.MANY


# ---------------------------------------------------------------- donors


def donor_assignment():
    return SplitAssignment(splits=(Split.FEW, Split.MANY, Split.MANY))


def test_nearest_strong_picks_aligned_row():
    head = head_of([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    assert nearest_strong(head, 0, donor_assignment(), 1) == [1]


def test_nearest_strong_all_donors_sorted_by_similarity():
    head = head_of([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    assert nearest_strong(head, 0, donor_assignment(), 2) == [1, 2]


def test_nearest_strong_excludes_self():
    head = head_of([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a = SplitAssignment(splits=(Split.MANY, Split.MANY, Split.MANY))
    donors = nearest_strong(head, 0, a, 2)
    assert 0 not in donors
    assert donors == [1, 2]


def test_nearest_strong_insufficient_donors():
    head = head_of([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    with pytest.raises(InsufficientDonorsError):
        nearest_strong(head, 0, donor_assignment(), 3)


def test_nearest_strong_tie_breaks_ascending():
    head = head_of([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert nearest_strong(head, 0, donor_assignment(), 2) == [1, 2]


@given(
    scale=st.floats(min_value=0.01, max_value=100.0),
    row=st.integers(min_value=0, max_value=2),
)
def test_nearest_strong_scale_invariant(scale, row):
    head = head_of([[1.0, 0.2], [0.8, 0.3], [-0.2, 1.0]])
    base = nearest_strong(head, 0, donor_assignment(), 2)
    w = head.weights.copy()
    w[row] = w[row] * scale
    assert nearest_strong(head_of(w), 0, donor_assignment(), 2) == base


# ---------------------------------------------------------------- recompose


def small_problem(seed=0):
    fx = longtail_fixture(seed)
    splits = diagnose_splits(fx.head, fx.train)
    return fx, splits


def test_recompose_steps_zero_is_identity():
    fx, splits = small_problem()
    out = recompose_head(fx.head, splits, fx.cal, steps=0)
    assert out.weights.tobytes() == fx.head.weights.tobytes()
    assert out.bias.tobytes() == fx.head.bias.tobytes()


def test_recompose_k_zero_warns_and_returns_input():
    fx, splits = small_problem()
    with pytest.warns(UserWarning):
        out = recompose_head(fx.head, splits, fx.cal, k_neighbors=0)
    assert out is fx.head


def test_recompose_preserves_non_few_rows_and_bias():
    fx, splits = small_problem()
    out = recompose_head(fx.head, splits, fx.cal, seed=1)
    few = set(splits.few)
    assert few, "fixture must produce a few split"
    for k in range(fx.head.class_count):
        same = out.weights[k].tobytes() == fx.head.weights[k].tobytes()
        assert same == (k not in few)
    assert out.bias.tobytes() == fx.head.bias.tobytes()


def test_recompose_is_deterministic():
    fx, splits = small_problem()
    a = recompose_head(fx.head, splits, fx.cal, seed=5)
    b = recompose_head(fx.head, splits, fx.cal, seed=5)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_recompose_improves_tail_on_fixture():
    fx, splits = small_problem(seed=3)
    out = recompose_head(fx.head, splits, fx.cal, seed=3)
    rep = evaluate_delta(fx.head, out, fx.test, splits)
    assert rep.few_gain > 0.05


def test_recompose_rejects_empty_calibration():
    fx, splits = small_problem()
    empty = FeatureTable(item_ids=(), features=np.zeros((0, fx.head.feature_dim)),
                         labels=np.zeros(0, dtype=int))
    with pytest.raises(InsufficientDataError):
        recompose_head(fx.head, splits, empty)


def test_recompose_requires_samples_for_each_few_class():
    fx, splits = small_problem()
    few = splits.few[0]
    keep = fx.cal.labels != few
    pruned = FeatureTable(
        item_ids=tuple(np.asarray(fx.cal.item_ids)[keep]),
        features=fx.cal.features[keep],
        labels=fx.cal.labels[keep],
    )
    with pytest.raises(InsufficientDataError):
        recompose_head(fx.head, splits, pruned)


# ---------------------------------------------------------------- delta report


def test_delta_zero_when_heads_equal():
    fx, splits = small_problem()
    rep = evaluate_delta(fx.head, fx.head, fx.test, splits)
    assert rep.few_gain == 0.0
    assert rep.overall_drop == 0.0


def test_delta_rejects_empty_test():
    fx, splits = small_problem()
    empty = FeatureTable(item_ids=(), features=np.zeros((0, fx.head.feature_dim)),
                         labels=np.zeros(0, dtype=int))
    with pytest.raises(InsufficientDataError):
        evaluate_delta(fx.head, fx.head, empty, splits)


def test_classifier_head_logits_shapes():
    head = head_of([[1.0, 0.0], [0.0, 2.0]], bias=np.array([0.5, -0.5]))
    x = np.array([2.0, 3.0])
    z = head.logits(x)
    assert z.shape == (2,)
    assert np.allclose(z, [2.5, 5.5])
    batch = head.logits(np.stack([x, x]))
    assert batch.shape == (2, 2)
    assert np.allclose(batch[0], z)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_mean_per_class_matches_mean_of_present(seed):
    rng = np.random.default_rng(seed)
    k = 6
    preds = rng.integers(0, k, size=50)
    labels = rng.integers(0, 4, size=50)  # classes 4,5 absent
    acc = per_class_accuracy(preds, labels, k)
    present = acc[~np.isnan(acc)]
    assert abs(np.nanmean(acc) - present.mean()) <= 1e-12
