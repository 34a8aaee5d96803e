import json

import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import percentile_pipeline_scalar, window_scalar
from slicesort.volio import (MEDAKA, MOSMED, PreprocessSpec, UnsupportedFormatError, Volume, VolumeError,
                             downsample, load_volume, preprocess, preprocess_hounsfield, preprocess_percentile,
                             save_volume, window_to_uint8)

# (-200 + 900) / 1400 * 255 = 127.5 exactly; half-to-even gives 128.
HU_MINUS_200 = 128


def vol(data, **kw):
    return Volume(np.asarray(data), **kw)


def test_volume_invariants():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), ordering_axis=3)
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), axis_direction=0)
    v = Volume(np.arange(24).reshape(2, 3, 4), ordering_axis=2)
    assert v.n_slices == 4 and v.slice(1).shape == (2, 3)
    assert v.slices([0, 3]).shape == (2, 2, 3)


def test_hounsfield_endpoints_and_midpoint():
    v = vol(np.array([-1200, -900, -200, 500, 900], dtype=np.int16).reshape(1, 1, 5))
    out = preprocess_hounsfield(v, MOSMED).data.ravel().tolist()
    assert out == [0, 0, HU_MINUS_200, 255, 255]


def test_hounsfield_matches_scalar_oracle(rng):
    x = rng.uniform(-2000, 2000, size=(4, 5, 6))
    got = preprocess_hounsfield(vol(x)).data
    ref = np.vectorize(lambda t: window_scalar(t, -900, 500))(x)
    np.testing.assert_array_equal(got, ref)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5000, 5000), st.floats(-5000, 5000))
def test_hounsfield_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    out = window_to_uint8(np.array([lo, hi]), -900, 500)
    assert out[0] <= out[1]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4, 5), elements=st.floats(-1e4, 1e4)))
def test_outputs_in_range_and_integral(x):
    for spec in (MOSMED, PreprocessSpec("percentile_window", (1.0, 99.95))):
        out = preprocess(vol(x), spec).data
        assert out.dtype == np.uint8
        assert out.min() >= 0 and out.max() <= 255


def test_output_range_window_is_identity(rng):
    x = rng.integers(0, 256, size=(3, 4, 5)).astype(np.uint8)
    np.testing.assert_array_equal(window_to_uint8(x, 0, 255), x)


def test_percentile_endpoints():
    x = np.arange(1000, dtype=np.float64).reshape(10, 10, 10)
    lo, hi = np.percentile(x, [1, 99.95])
    out = preprocess_percentile(vol(x), PreprocessSpec("percentile_window", (1.0, 99.95))).data
    flat = out.ravel()
    assert flat[x.ravel() <= lo].max() == 0
    assert flat[x.ravel() >= hi].min() == 255


def test_percentile_constant_volume_is_zero():
    out = preprocess_percentile(vol(np.full((3, 3, 3), 7.0)), PreprocessSpec("percentile_window", (1, 99.95)))
    assert not out.data.any()


def test_percentile_ramp_matches_scalar_oracle():
    ramp = np.linspace(-3.7, 812.1, 100).reshape(1, 10, 10)
    out = preprocess_percentile(vol(ramp), PreprocessSpec("percentile_window", (1.0, 99.95))).data
    assert out.ravel().tolist() == percentile_pipeline_scalar(ramp.ravel())


def test_medaka_pipeline_matches_scalar_oracle():
    ramp = np.arange(4 * 6 * 8, dtype=np.float64).reshape(4, 6, 8) ** 1.3
    out = preprocess(vol(ramp), MEDAKA).data
    blocks = ramp.reshape(2, 2, 3, 2, 4, 2).mean(axis=(1, 3, 5))
    assert out.ravel().tolist() == percentile_pipeline_scalar(blocks.ravel())


def test_percentile_is_per_volume():
    a = np.arange(100.0).reshape(1, 10, 10)
    out_a = preprocess_percentile(vol(a), MEDAKA).data
    out_b = preprocess_percentile(vol(a * 10 + 5), MEDAKA).data
    np.testing.assert_array_equal(out_a, out_b)


def test_downsample_examples():
    v = vol(np.arange(8, dtype=np.float64).reshape(2, 2, 2))
    assert downsample(v, 2).data.ravel().tolist() == [3.5]
    assert downsample(v, 1) is v
    assert downsample(vol(np.zeros((7, 5, 4))), 2).shape == (3, 2, 2)
    with pytest.raises(ValueError):
        downsample(v, 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 6, 2), elements=st.floats(-100, 100)))
def test_downsample_conserves_mean(x):
    assert downsample(vol(x), 2).data.mean() == pytest.approx(x.mean(), abs=1e-9)


def test_raw_roundtrip(tmp_path, rng):
    x = rng.integers(0, 4000, size=(3, 4, 5)).astype(np.uint16)
    v = Volume(x, ordering_axis=1, axis_direction=-1, volume_id="abc")
    save_volume(v, tmp_path / "abc")
    w = load_volume(tmp_path / "abc.raw")
    np.testing.assert_array_equal(w.data, x)
    assert (w.ordering_axis, w.axis_direction, w.volume_id) == (1, -1, "abc")
    header = json.loads((tmp_path / "abc.json").read_text())
    assert header["dims"] == [3, 4, 5] and header["dtype"] == "uint16"


def test_raw_single_voxel(tmp_path):
    np.array([42], dtype=np.float32).tofile(tmp_path / "one.raw")
    (tmp_path / "one.json").write_text(json.dumps({"dims": [1, 1, 1], "dtype": "float32"}))
    v = load_volume(tmp_path / "one.raw")
    assert v.shape == (1, 1, 1) and v.data[0, 0, 0] == 42


def test_raw_errors(tmp_path):
    np.zeros(4, dtype=np.uint8).tofile(tmp_path / "bad.raw")
    (tmp_path / "bad.json").write_text(json.dumps({"dims": [2, 2, 2], "dtype": "uint8"}))
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "bad.raw")
    (tmp_path / "bad.json").write_text(json.dumps({"dims": [2, 2, 1], "dtype": "complex64"}))
    with pytest.raises(UnsupportedFormatError):
        load_volume(tmp_path / "bad.raw")
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "missing.raw")


def test_slice_stack_directory(tmp_path, rng):
    imgs = rng.integers(0, 65535, size=(5, 8, 6)).astype(np.uint16)
    for i, im in enumerate(imgs):
        cv2.imwrite(str(tmp_path / f"slice_{i:03d}.png"), im)
    v = load_volume(tmp_path)
    assert v.shape == (5, 8, 6) and v.ordering_axis == 0
    np.testing.assert_array_equal(v.data, imgs)


def test_slice_stack_shape_mismatch_names_file(tmp_path):
    cv2.imwrite(str(tmp_path / "a.png"), np.zeros((64, 64), np.uint8))
    cv2.imwrite(str(tmp_path / "b.png"), np.zeros((32, 32), np.uint8))
    with pytest.raises(VolumeError, match="b.png"):
        load_volume(tmp_path)


def test_preprocess_spec_validation():
    with pytest.raises(ValueError):
        PreprocessSpec("hounsfield_window", (500, -900))
    with pytest.raises(ValueError):
        PreprocessSpec("percentile_window", (1, 101))
    with pytest.raises(ValueError):
        PreprocessSpec("gamma", (0, 1))
