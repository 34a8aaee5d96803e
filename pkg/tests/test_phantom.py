import numpy as np
import pytest
from scipy import ndimage

from slicesort.metrics import mean_displacement
from slicesort.phantom import DEFAULT_ORGANS, LOCALIZATION_SPEC, Organ, PhantomSpec, generate, generate_dataset
from slicesort.sampler import SamplingSpec, sample_batch


def test_default_range_contract():
    vol, lab = generate(PhantomSpec(seed=1))
    assert vol.shape == lab.shape == (64, 64, 64)
    assert vol.data.dtype == np.uint8
    assert set(np.unique(lab.data)) <= set(range(len(DEFAULT_ORGANS) + 1))
    assert set(np.unique(lab.data)) >= {1, 2, 3}


def test_pure_function_of_seed():
    a, _ = generate(PhantomSpec(shape=(16, 24, 24), seed=5))
    b, _ = generate(PhantomSpec(shape=(16, 24, 24), seed=5))
    c, _ = generate(PhantomSpec(shape=(16, 24, 24), seed=6))
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_noise_free_unrotated_slices_are_distinct():
    vol, _ = generate(PhantomSpec(noise_std=0.0, rotate=False, tilt_deg=0.0, seed=2))
    flat = vol.data.reshape(vol.shape[0], -1).astype(np.int32)
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            assert np.any(flat[i] != flat[j]), (i, j)


def test_organs_are_co_directed():
    for vol, lab in generate_dataset(6, PhantomSpec(shape=(48, 48, 48)), seed=3):
        centres = [ndimage.center_of_mass(lab.data == c)[0] for c in (1, 2, 3)]
        assert centres[0] < centres[1] < centres[2]


def test_labels_follow_rotation():
    spec = PhantomSpec(shape=(32, 48, 48), noise_std=0.0, seed=4)
    for vol, lab in generate_dataset(4, spec, seed=4):
        organ = lab.data > 0
        assert np.all(vol.data[organ] == 225)
        assert np.mean(vol.data[~organ] == 225) < 1e-3


def test_body_mask_covers_labels():
    vol, lab, body = generate(PhantomSpec(shape=(32, 32, 32), seed=8), with_body=True)
    assert body[lab.data > 0].all()
    assert np.all(vol.data[~body] <= 30)


def test_localization_preset_has_empty_margins():
    _, _, body = generate(LOCALIZATION_SPEC, with_body=True)
    per_slice = body.reshape(body.shape[0], -1).any(axis=1)
    assert per_slice.any() and not per_slice[0] and not per_slice[-1]


@pytest.mark.parametrize("kwargs", [
    {"organs": (Organ(1, (0.1, 0.5), 0.1), Organ(2, (0.3, 0.7), 0.1))},
    {"organs": (Organ(1, (0.5, 1.2), 0.1),)},
    {"scale_range": (0.0, 1.0)},
    {"noise_std": -1.0},
    {"shape": (1, 8, 8)},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        PhantomSpec(**kwargs)


def test_nearest_neighbour_matching_beats_random():
    """A non-learned oracle orders held-out slices better than chance."""
    spec = PhantomSpec(shape=(32, 32, 32))
    data = generate_dataset(32, spec, seed=10)
    ref = np.concatenate([v.data.reshape(32, -1).astype(np.float32) for v, _ in data[:24]])
    ref_z = np.tile(np.arange(32), 24)
    rng = np.random.default_rng(0)
    mds = []
    k = 16
    for v, _ in data[24:]:
        for _ in range(5):
            b = sample_batch(v, SamplingSpec(k), rng)
            q = np.stack([s.reshape(-1) for s in b.slices]).astype(np.float32)
            d = ((q[:, None, :] - ref[None]) ** 2).sum(-1)
            pred = ref_z[d.argmin(axis=1)] + 1e-3 * np.arange(k)
            mds.append(mean_displacement(pred, b.ranks).mean_displacement)
    baseline = (k * k - 1) / (3 * k)
    assert np.mean(mds) < 0.5 * baseline
