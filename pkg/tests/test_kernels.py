import importlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import slicesort._kernels as kernels
from oracles import components_bfs, hinge_loss_scalar, in_hull_lp


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("compiled", "python")


def test_env_var_forces_fallback(monkeypatch):
    monkeypatch.setenv("SLICESORT_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SLICESORT_PURE_PYTHON")
        importlib.reload(kernels)


def test_pairwise_hinge_matches_scalar(backend, rng):
    for _ in range(50):
        n = int(rng.integers(2, 20))
        s = rng.normal(size=n)
        r = rng.permutation(n).astype(np.int64)
        loss, grad = backend.pairwise_hinge(s, r, 0.2)
        assert loss == pytest.approx(hinge_loss_scalar(s, r), abs=1e-12)
        assert grad.shape == (n,)
        assert grad.sum() == pytest.approx(0.0, abs=1e-12)


def test_pairwise_hinge_gradient_by_differences(backend, rng):
    s = rng.normal(size=8)
    r = rng.permutation(8).astype(np.int64)
    _, grad = backend.pairwise_hinge(s, r, 0.2)
    h = 1e-6
    for i in range(8):
        e = np.zeros(8)
        e[i] = h
        num = (backend.pairwise_hinge(s + e, r, 0.2)[0] - backend.pairwise_hinge(s - e, r, 0.2)[0]) / (2 * h)
        assert grad[i] == pytest.approx(num, abs=1e-6)


@pytest.mark.parametrize("connectivity", [6, 26])
def test_label_components_matches_bfs(backend, rng, connectivity):
    for density in (0.1, 0.3, 0.6):
        mask = rng.random((7, 8, 9)) < density
        labels, sizes = backend.label_components(mask.astype(np.uint8), connectivity)
        ref, ref_sizes = components_bfs(mask, connectivity)
        np.testing.assert_array_equal(labels, ref)
        assert sizes.tolist() == ref_sizes


def test_label_components_empty(backend):
    labels, sizes = backend.label_components(np.zeros((2, 3, 4), np.uint8), 6)
    assert not labels.any() and sizes.size == 0


def test_points_in_halfspaces_cube(backend):
    # unit cube: -x<=0, x-1<=0, ...
    eq = np.array([[-1, 0, 0, 0], [1, 0, 0, -1], [0, -1, 0, 0], [0, 1, 0, -1], [0, 0, -1, 0], [0, 0, 1, -1]],
                  dtype=np.float64)
    pts = np.array([[0.5, 0.5, 0.5], [1.0, 1.0, 1.0], [1.1, 0.5, 0.5], [-0.01, 0, 0]])
    assert backend.points_in_halfspaces(pts, eq, 1e-9).tolist() == [True, True, False, False]


def test_halfspace_kernel_agrees_with_lp(backend, rng):
    from scipy.spatial import ConvexHull

    pts = rng.integers(0, 6, size=(12, 3)).astype(np.float64) + rng.normal(scale=0.01, size=(12, 3))
    hull = ConvexHull(pts)
    queries = rng.uniform(-1, 7, size=(60, 3))
    got = backend.points_in_halfspaces(np.ascontiguousarray(queries), np.ascontiguousarray(hull.equations), 1e-9)
    expected = [in_hull_lp(pts, q) for q in queries]
    assert got.tolist() == expected


def test_glass_swaps_backends_agree(rng):
    if "compiled" != kernels.BACKEND:
        pytest.skip("compiled backend not built")
    from slicesort._kernels import _core, _fallback

    img = rng.random((20, 24)).astype(np.float32)
    d = 3
    n = (20 - 2 * d) * (24 - 2 * d)
    dy, dx = rng.integers(-d, d, size=(2, n)).astype(np.int64)
    a = _core.glass_swaps(img.copy(), d, dy, dx)
    b = _fallback.glass_swaps(img.copy(), d, dy, dx)
    np.testing.assert_array_equal(a, b)


def test_glass_swaps_is_a_permutation(backend, rng):
    img = rng.random((16, 16)).astype(np.float32)
    d = 2
    n = (16 - 2 * d) ** 2
    dy, dx = rng.integers(-d, d, size=(2, n)).astype(np.int64)
    out = backend.glass_swaps(img.copy(), d, dy, dx)
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(img.ravel()))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=12), st.randoms(use_true_random=False))
def test_backends_agree_on_hinge(scores, rnd):
    from slicesort._kernels import _fallback

    s = np.array(scores)
    r = np.array(rnd.sample(range(len(s)), len(s)), dtype=np.int64)
    a = kernels.pairwise_hinge(s, r, 0.2)
    b = _fallback.pairwise_hinge(s, r, 0.2)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)
