from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustgate.core import ClassIndexMap, LogitTable
from trustgate.errors import InvalidInputError
from trustgate.longtail import assign_splits, per_class_accuracy
from trustgate.metrics import (
    evaluate,
    histogram,
    load_report,
    save_report,
    write_per_class_csv,
)


def table_of(logits, labels):
    logits = np.asarray(logits, dtype=float)
    return LogitTable(
        item_ids=tuple(str(i) for i in range(len(logits))),
        logits=logits,
        labels=np.asarray(labels),
    )


def one_hot_rows(labels, k, scale=10.0):
    z = np.zeros((len(labels), k))
    z[np.arange(len(labels)), labels] = scale
    return z


# ---------------------------------------------------------------- evaluate


def test_all_correct():
    labels = [0, 1, 2, 3, 4]
    rep = evaluate(table_of(one_hot_rows(labels, 5), labels))
    assert rep.top1 == rep.top5 == rep.mean_per_class == 1.0
    assert rep.class_count_evaluated == 5
    assert rep.below_80_fraction == 0.0


def test_rank_three_counts_for_top5_only():
    z = np.array([
        [9.0, 1.0, 0.0, 0.0, 0.0],   # true label 0 at rank 1
        [3.0, 2.0, 1.0, 0.0, -1.0],  # true label 2 at rank 3
    ])
    rep = evaluate(table_of(z, [0, 2]))
    assert rep.top1 == 0.5
    assert rep.top5 == 1.0


def test_micro_vs_macro_with_unequal_counts():
    # class 0: 9 rows at acc 1.0; class 1: 1+9 rows... build 9:1 duplication
    # class 0 has 18 rows all correct, class 1 has 2 rows, one correct:
    # micro = 19/20 but macro = (1.0 + 0.5)/2
    labels = [0] * 18 + [1, 1]
    z = one_hot_rows([0] * 18 + [1, 0], 2)
    rep = evaluate(table_of(z, labels))
    assert rep.top1 == 0.95
    assert rep.mean_per_class == 0.75


def test_headline_nine_to_one_example():
    # two classes with per-class accuracies 1.0 and 0.6 and row counts 9:1
    labels = [0] * 90 + [1] * 10
    preds = [0] * 90 + [1] * 6 + [0] * 4
    rep = evaluate(table_of(one_hot_rows(preds, 2), labels))
    assert rep.top1 == pytest.approx(0.96)
    assert rep.mean_per_class == pytest.approx(0.8)


def test_top5_equals_top1_when_k_below_five():
    labels = [0, 1, 1]
    z = one_hot_rows([0, 0, 1], 2)
    rep = evaluate(table_of(z, labels))
    assert rep.top5 == 1.0  # only 2 classes, every label inside top-2
    assert rep.top1 == pytest.approx(2 / 3)


def test_evaluate_rejects_empty_or_unlabeled():
    with pytest.raises(InvalidInputError):
        evaluate(LogitTable(item_ids=(), logits=np.zeros((0, 2)),
                            labels=np.zeros(0, dtype=int)))
    with pytest.raises(InvalidInputError):
        evaluate(LogitTable(item_ids=("a",), logits=np.zeros((1, 2))))


@settings(max_examples=40)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_top1_matches_argmax_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k = rng.integers(1, 40), rng.integers(2, 8)
    z = rng.normal(size=(n, k))
    labels = rng.integers(0, k, size=n)
    rep = evaluate(table_of(z, labels))
    assert rep.top1 == np.mean(np.argmax(z, axis=1) == labels)


@settings(max_examples=25)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_macro_invariant_to_class_duplication(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(30, 4))
    labels = rng.integers(0, 4, size=30)
    base = evaluate(table_of(z, labels))
    dup_rows = labels == 0
    z2 = np.vstack([z, z[dup_rows], z[dup_rows]])
    labels2 = np.concatenate([labels, labels[dup_rows], labels[dup_rows]])
    dup = evaluate(table_of(z2, labels2))
    assert dup.mean_per_class == pytest.approx(base.mean_per_class, abs=1e-12)


# ---------------------------------------------------------------- histogram


def test_histogram_all_perfect():
    h = histogram([1.0, 1.0, 1.0])
    assert list(h) == [0] * 9 + [3]


def test_histogram_spread():
    h = histogram([0.05, 0.15, 0.95])
    assert list(h) == [1, 1, 0, 0, 0, 0, 0, 0, 0, 1]


def test_histogram_empty():
    assert list(histogram([])) == [0] * 10


def test_histogram_drops_absent_classes():
    assert list(histogram([np.nan, 1.0])) == [0] * 9 + [1]


@given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False), max_size=60))
def test_histogram_total_and_below_80(accs):
    h = histogram(accs)
    assert int(np.sum(h)) == len(accs)
    below = sum(1 for a in accs if a < 0.8)
    assert int(np.sum(h[:8])) == below


def test_below_80_fraction_consistent_with_histogram():
    labels = [0] * 10 + [1] * 10
    preds = [0] * 10 + [1] * 7 + [0] * 3  # accs 1.0 and 0.7
    rep = evaluate(table_of(one_hot_rows(preds, 2), labels))
    assert rep.below_80_fraction == 0.5
    assert sum(rep.histogram[:8]) == 1


# ---------------------------------------------------------------- artifacts


def test_report_round_trip(tmp_path):
    labels = [0, 1, 1, 0]
    rep = evaluate(table_of(one_hot_rows([0, 1, 0, 0], 2), labels))
    p = str(tmp_path / "report.json")
    save_report(rep, p)
    assert load_report(p) == rep


def test_per_class_csv(tmp_path):
    labels = np.array([0] * 5 + [1] * 5)
    preds = [0] * 5 + [1] * 3 + [0] * 2
    table = table_of(one_hot_rows(preds, 2), labels)
    acc = per_class_accuracy(np.argmax(table.logits, axis=1), labels, 2)
    splits = assign_splits(acc)
    cmap = ClassIndexMap(taxon_ids=(500, 501))
    p = tmp_path / "per_class.csv"
    write_per_class_csv(str(p), table, class_map=cmap, assignment=splits)
    rows = list(csv.DictReader(p.open()))
    assert rows[0] == {"taxon_id": "500", "n_test": "5", "accuracy": "1.0", "split": "many"}
    assert rows[1]["taxon_id"] == "501" and rows[1]["split"] == "few"
    assert float(rows[1]["accuracy"]) == 0.6
