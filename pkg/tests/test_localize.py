import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import components_bfs, in_hull_lp
from slicesort.localize import (ConfigurationError, EmptyMaskError, LocalizationConfig, bounding_box,
                                convex_hull_mask, largest_component, localize)
from slicesort.models import EncoderSpec, build_model
from slicesort.phantom import PhantomSpec, generate


@pytest.fixture(scope="module")
def dropout_model():
    torch.manual_seed(0)
    return build_model(EncoderSpec(dropout_between_blocks=0.2), "score_head")


@pytest.fixture(scope="module")
def small_volume():
    return generate(PhantomSpec(shape=(12, 32, 32), seed=3))[0]


def fast(**kw):
    return LocalizationConfig(mc_samples=4, **kw)


def test_largest_component_examples():
    m = np.zeros((6, 6, 6), bool)
    m[0, 0, :5] = True
    m[0, 1, :5] = True  # 10 voxels
    m[4, 4, :6] = True
    m[3, 4, 0] = True  # 7 voxels
    kept = largest_component(m)
    assert kept.sum() == 10 and kept[0, 0, 0]
    one = np.zeros((3, 3, 3), bool)
    one[1, 2, 0] = True
    np.testing.assert_array_equal(largest_component(one), one)


def test_largest_component_tie_break():
    m = np.zeros((5, 5, 5), bool)
    m[3, 0, 0:3] = True
    m[0, 4, 2:5] = True
    kept = largest_component(m)
    assert kept[0, 4, 2] and not kept[3, 0, 0]


def test_largest_component_errors():
    with pytest.raises(EmptyMaskError):
        largest_component(np.zeros((2, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.bool_, (6, 7, 5)), st.sampled_from([6, 26]))
def test_largest_component_matches_flood_fill(m, conn):
    if not m.any():
        return
    labels, sizes = components_bfs(m, conn)
    expected = labels == int(np.argmax(sizes)) + 1
    np.testing.assert_array_equal(largest_component(m, conn), expected)


def test_hull_line_and_box():
    m = np.zeros((9, 9, 9), bool)
    m[1, 1, 1] = m[7, 7, 7] = True
    h = convex_hull_mask(m)
    assert h.sum() == 7 and all(h[i, i, i] for i in range(1, 8))

    box = np.zeros((8, 8, 8), bool)
    box[1:6, 2:7, 3:5] = True
    surface = box.copy()
    surface[2:5, 3:6, :] = False
    surface &= box
    np.testing.assert_array_equal(convex_hull_mask(surface), box)
    with pytest.raises(EmptyMaskError):
        convex_hull_mask(np.zeros((3, 3, 3)))


@pytest.mark.parametrize("seed", range(3))
def test_hull_matches_lp_oracle(seed):
    rng = np.random.default_rng(seed)
    m = np.zeros((8, 8, 8), bool)
    flat = rng.choice(m.size, 50, replace=False)
    m.flat[flat] = True
    h = convex_hull_mask(m)
    pts = np.argwhere(m)
    for q in np.ndindex(m.shape):
        assert h[q] == in_hull_lp(pts, q), q
    np.testing.assert_array_equal(convex_hull_mask(h), h)


def test_top_percent_100_keeps_everything(dropout_model, small_volume):
    r = localize(small_volume, dropout_model, fast(top_percent=100.0))
    assert r.mask.all() and r.removed_fraction == 0.0


def test_seeded_runs_identical(dropout_model, small_volume):
    a = localize(small_volume, dropout_model, fast(seed=4))
    b = localize(small_volume, dropout_model, fast(seed=4))
    np.testing.assert_array_equal(a.uncertainty, b.uncertainty)
    np.testing.assert_array_equal(a.mask, b.mask)


def test_invariants_and_monotone_removal(dropout_model, small_volume):
    last = 1.0
    for pct in (1.0, 3.0, 10.0, 30.0, 100.0):
        r = localize(small_volume, dropout_model, fast(top_percent=pct))
        assert r.uncertainty.shape == small_volume.shape
        assert np.all(r.hull[r.mask])
        box = np.zeros_like(r.hull)
        box[tuple(slice(a, b) for a, b in r.crop_box)] = True
        assert np.all(box[r.hull])
        assert r.crop_box == bounding_box(r.hull)
        assert r.removed_fraction <= last + 1e-12
        last = r.removed_fraction
        thresholded = r.uncertainty >= np.percentile(r.uncertainty, 100 - pct)
        assert abs(thresholded.mean() - pct / 100) < 0.01


def test_requires_dropout(small_volume):
    with pytest.raises(ConfigurationError):
        localize(small_volume, build_model(EncoderSpec(), "score_head"), fast())


def test_config_validation():
    with pytest.raises(ValueError):
        LocalizationConfig(mc_samples=1)
    with pytest.raises(ValueError):
        LocalizationConfig(top_percent=0.0)
