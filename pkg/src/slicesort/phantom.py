"""Synthetic fish-like phantoms whose slice content determines slice order.

Every phantom is an elongated body laid along axis 0 with its head at index 0.
The cross-section flattens toward the head, the two halves either side of the
major axis trade intensity along the body (a dark spine tells them apart), and
a few bright organs sit at fixed relative positions. Slice "mass" is held
roughly constant so that an untrained network cannot read position off total
brightness. Per-volume variation covers rotation about the ordering axis,
small tilts and overall size, so ordering axes stay co-directed across volumes
while absolute positions do not line up.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volio import Volume


@dataclass(frozen=True)
class Organ:
    class_id: int
    z_interval: tuple[float, float]  # relative position along the body, 0 = head
    radius: float  # in-plane radius, in units of the volume half-width
    offset: tuple[float, float] = (0.0, 0.0)  # in-plane centre in the body frame


DEFAULT_ORGANS = (
    Organ(1, (0.14, 0.32), 0.10, (0.07, 0.0)),
    Organ(2, (0.41, 0.59), 0.13, (0.0, 0.04)),
    Organ(3, (0.68, 0.86), 0.10, (-0.06, 0.0)),
)


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 64)
    organs: tuple[Organ, ...] = DEFAULT_ORGANS
    rotate: bool = True
    scale_range: tuple[float, float] = (0.8, 1.2)
    tilt_deg: float = 5.0
    noise_std: float = 4.0
    body_level: float = 128.0
    contrast: float = 60.0  # half-to-half intensity offset at head and tail
    body_scale: float = 1.0  # multiplies the body cross-section radius
    body_half_length: float = 1.3  # canonical units; 1.0 reaches the volume ends at scale 1
    bulge: float = 0.21  # extra mid-body radius on top of BASE_RADIUS
    aspect: tuple[float, float] = (0.3, 1.0)  # minor/major axis ratio, head to tail
    organ_intensity: float = 225.0
    spine_intensity: float = 45.0
    seed: int = 0

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ValueError(f"shape must be three axes of length >= 2, got {self.shape}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale range must be positive and ordered, got {self.scale_range}")
        if self.body_scale <= 0 or self.body_half_length <= 0:
            raise ValueError("body_scale and body_half_length must be positive")
        if self.bulge < 0:
            raise ValueError("bulge must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        intervals = []
        for organ in self.organs:
            a, b = organ.z_interval
            if not 0.0 <= a < b <= 1.0:
                raise ValueError(f"organ {organ.class_id}: z_interval {organ.z_interval} must lie in [0, 1]")
            if organ.radius <= 0:
                raise ValueError(f"organ {organ.class_id}: radius must be positive")
            intervals.append((a, b, organ.class_id))
        intervals.sort()
        for (a0, b0, c0), (a1, b1, c1) in zip(intervals, intervals[1:]):
            if a1 < b0 - 0.02:
                raise ValueError(f"organs {c0} and {c1} overlap along the ordering axis")

    @property
    def n_classes(self) -> int:
        return max((o.class_id for o in self.organs), default=0) + 1


BASE_RADIUS = 0.27


def body_radius(w: np.ndarray, bulge: float = 0.21) -> np.ndarray:
    """Equivalent-circle radius of the body cross-section at canonical position ``w``.

    Widest at mid-body, tapering symmetrically toward head and tail.
    """
    return BASE_RADIUS + bulge * np.exp(-((w / 0.5) ** 2))


# A short, untilted object centred in an otherwise empty field: the setting
# for sample localization, where most of the scanned volume is background.
LOCALIZATION_SPEC = PhantomSpec(body_scale=0.55, body_half_length=0.22, tilt_deg=0.0)


def _rotation(theta: float, tilt_a: float, tilt_b: float) -> np.ndarray:
    # Axis order is (w, v, u): index 0 is the ordering axis.
    c, s = np.cos(theta), np.sin(theta)
    spin = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    ca, sa = np.cos(tilt_a), np.sin(tilt_a)
    tilt_v = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    cb, sb = np.cos(tilt_b), np.sin(tilt_b)
    tilt_u = np.array([[cb, 0, -sb], [0, 1, 0], [sb, 0, cb]])
    return tilt_u @ tilt_v @ spin


def _organ_w(organ: Organ) -> tuple[float, float]:
    # Map relative [0, 1] body position onto the canonical w range [-1, 1].
    a, b = organ.z_interval
    return 2 * a - 1, 2 * b - 1


def generate(spec: PhantomSpec = PhantomSpec(), rng: np.random.Generator | None = None,
             *, volume_id: str = "phantom", with_body: bool = False):
    """Draw one phantom.

    Returns ``(volume, labels)``; with ``with_body=True`` a third element, the
    boolean body (sample foreground) mask, is appended. ``volume`` is uint8,
    ``labels`` holds organ class ids with 0 for everything else.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    theta = rng.uniform(0, 2 * np.pi) if spec.rotate else 0.0
    tilt = np.deg2rad(spec.tilt_deg)
    tilt_a, tilt_b = rng.uniform(-tilt, tilt, size=2) if tilt > 0 else (0.0, 0.0)
    scale = rng.uniform(*spec.scale_range)
    rot = _rotation(theta, tilt_a, tilt_b)

    nz, ny, nx = spec.shape
    grids = np.meshgrid(np.linspace(-1, 1, nz), np.linspace(-1, 1, ny), np.linspace(-1, 1, nx),
                        indexing="ij")
    p = np.stack(grids, axis=-1)
    # Canonical (body-frame) coordinates of every voxel centre.
    q = (p @ rot) / scale
    w, v, u = q[..., 0], q[..., 1], q[..., 2]

    # The default half length runs the body past the field of view, so every
    # slice cuts through it even at the smallest scale.
    half_len = spec.body_half_length
    t = np.clip((w + half_len) / (2 * half_len), 0.0, 1.0)
    radius = spec.body_scale * body_radius(w / half_len * 1.3, spec.bulge)
    aspect = spec.aspect[0] + (spec.aspect[1] - spec.aspect[0]) * t
    a = radius / np.sqrt(aspect)
    b = radius * np.sqrt(aspect)
    body = ((u / a) ** 2 + (v / b) ** 2 <= 1.0) & (np.abs(w) <= half_len)

    # The two halves either side of the major axis trade intensity along the
    # body; the spine marks which half is which. Slice mass stays constant.
    delta = spec.contrast * (2 * t - 1)
    level = spec.body_level + np.where(v >= 0, delta, -delta)
    vol = np.where(body, level, 0.0)

    spine = ((u / (0.3 * a)) ** 2 + ((v - 0.5 * b) / (0.25 * b)) ** 2 <= 1.0) & body
    vol[spine] = spec.spine_intensity

    labels = np.zeros(spec.shape, dtype=np.uint8)
    for organ in spec.organs:
        w0, w1 = _organ_w(organ)
        wc, half = (w0 + w1) / 2, (w1 - w0) / 2
        ou, ov = organ.offset
        inside = ((u - ou) ** 2 + (v - ov) ** 2) / organ.radius ** 2 + ((w - wc) / half) ** 2 <= 1.0
        inside &= body
        labels[inside] = organ.class_id
        vol[inside] = spec.organ_intensity

    if spec.noise_std > 0:
        vol = vol + rng.normal(0.0, spec.noise_std, size=vol.shape)
    vol = np.clip(np.rint(vol), 0, 255).astype(np.uint8)

    volume = Volume(vol, ordering_axis=0, axis_direction=1, volume_id=volume_id, bit_depth="uint8")
    label_volume = Volume(labels, ordering_axis=0, axis_direction=1, volume_id=volume_id + "_labels",
                          bit_depth="uint8")
    if with_body:
        return volume, label_volume, body
    return volume, label_volume


def generate_dataset(n: int, spec: PhantomSpec = PhantomSpec(), seed: int | None = None,
                     with_body: bool = False) -> list:
    """``n`` independent phantoms drawn from one seed."""
    seed = spec.seed if seed is None else seed
    streams = np.random.SeedSequence(seed).spawn(n)
    return [generate(spec, np.random.default_rng(s), volume_id=f"phantom_{i:03d}", with_body=with_body)
            for i, s in enumerate(streams)]
