import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import md_exhaustive_baseline, md_scalar
from slicesort.metrics import (confusion_counts, iou, iou_from_confusion, mean_displacement, predicted_ranks,
                               random_md_baseline)

# Frozen from the permutation oracle / closed form before implementation.
BASELINE_BS16 = 5.3125
BASELINE_BS3 = 8 / 9


def test_perfect_ordering_is_zero():
    assert mean_displacement(np.arange(10.0), list(range(10))).mean_displacement == 0.0


def test_reversed_bs4_is_two():
    assert mean_displacement([3.0, 2.0, 1.0, 0.0], [0, 1, 2, 3]).mean_displacement == 2.0


@pytest.mark.parametrize("bs,expected", [(2, 0.5), (3, BASELINE_BS3), (16, BASELINE_BS16)])
def test_random_baseline_values(bs, expected):
    assert random_md_baseline(bs) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bs", [2, 3, 4, 5, 6, 7])
def test_baseline_matches_exhaustive_enumeration(bs):
    assert random_md_baseline(bs) == pytest.approx(md_exhaustive_baseline(bs), abs=1e-12)


def test_baseline_monte_carlo_bs16():
    rng = np.random.default_rng(0)
    trials = 100_000
    r = np.argsort(rng.random((trials, 16)), axis=1)
    s = rng.random((trials, 16))
    pred = np.argsort(np.argsort(s, axis=1, kind="stable"), axis=1, kind="stable")
    mc = np.abs(r - pred).mean()
    assert abs(mc - BASELINE_BS16) / BASELINE_BS16 < 0.01


def test_baseline_rejects_small_batch():
    with pytest.raises(ValueError):
        random_md_baseline(1)


def test_duplicate_ranks_rejected():
    with pytest.raises(ValueError):
        mean_displacement([0.0, 1.0], [1, 1])


def test_ties_broken_by_index():
    assert predicted_ranks([1.0, 1.0, 0.0]).tolist() == [1, 2, 0]


def test_report_fields():
    rep = mean_displacement([0.1, 0.3, 0.2], [0, 1, 2])
    assert rep.batch_size == 3 and rep.random_baseline == pytest.approx(BASELINE_BS3)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=20), st.randoms(use_true_random=False))
def test_md_matches_scalar_and_bounds(scores, rnd):
    r = rnd.sample(range(len(scores)), len(scores))
    md = mean_displacement(scores, r).mean_displacement
    assert md == pytest.approx(md_scalar(scores, r), abs=1e-12)
    assert 0 <= md <= len(scores) - 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=20, unique=True),
       st.randoms(use_true_random=False))
def test_md_invariant_to_increasing_maps(scores, rnd):
    r = rnd.sample(range(len(scores)), len(scores))
    s = np.array(scores, dtype=np.float64)
    a = mean_displacement(s, r).mean_displacement
    assert mean_displacement(np.exp(s / 10) * 3 + 7, r).mean_displacement == a
    assert (a == 0) == np.array_equal(predicted_ranks(s), np.array(r))


def test_iou_examples():
    pred = np.zeros((10, 10), int)
    truth = np.zeros((10, 10), int)
    pred[0:6] = 1
    truth[3:9] = 1
    rep = iou(pred, truth, {1})
    assert rep.per_class[1] == pytest.approx(1 / 3)
    assert iou(truth, truth, {1}).per_class[1] == 1.0
    disjoint = np.zeros_like(truth)
    disjoint[9] = 1
    truth2 = np.zeros_like(truth)
    truth2[0] = 1
    assert iou(disjoint, truth2, {1}).per_class[1] == 0.0


def test_iou_excludes_empty_union_and_checks_shape():
    a = np.array([[1, 1], [0, 0]])
    rep = iou(a, a, {1, 2})
    assert rep.classes_excluded == frozenset({2}) and rep.mean_iou == 1.0
    with pytest.raises(ValueError):
        iou(a, a[:1], {1})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_confusion_consistent(seed):
    rng = np.random.default_rng(seed)
    p = rng.integers(0, 4, size=(6, 7))
    t = rng.integers(0, 4, size=(6, 7))
    a, b = iou(p, t, range(1, 4)), iou(t, p, range(1, 4))
    assert a.per_class == pytest.approx(b.per_class)
    assert 0.0 <= a.mean_iou <= 1.0
    c = iou_from_confusion(confusion_counts(p, t, 4), range(1, 4))
    assert c.per_class == pytest.approx(a.per_class)
    assert confusion_counts(p, t, 4).sum() == p.size
