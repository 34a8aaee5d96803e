"""Declarative augmentation policies applied to 2D slices and optional label masks.

A policy is an ordered list of stages. A stage fires with its probability
and then applies exactly one of its transforms, chosen uniformly. Geometric
transforms warp the mask with nearest-neighbour sampling; photometric ones
leave it untouched. Images are expected on a 0-255 intensity scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import cv2
import numpy as np
import yaml

from . import _kernels

BORDER = cv2.BORDER_REFLECT_101

# Defaults for table rows whose parameters are left implicit.
SHIFT_LIMIT = 0.0625
SCALE_LIMIT = 0.1
ROTATE_LIMIT = 45.0
CLAHE_CLIP_LIMIT = (1.0, 4.0)
CLAHE_TILE_GRID = (8, 8)
GRID_NUM_STEPS = 5
GLASS_SIGMA = 0.7
GLASS_ITERATIONS = 2


# --------------------------------------------------------------------------
# Parameter sampling: turn a transform's limits into one concrete draw.
# --------------------------------------------------------------------------

def _odd_kernel(limit: int, rng) -> int:
    choices = list(range(3, int(limit) + 1, 2))
    return int(choices[rng.integers(len(choices))]) if choices else 3


def _sample_blur(p, rng, shape):
    return {"ksize": _odd_kernel(p["blur_limit"], rng)}


def _sample_motion_blur(p, rng, shape):
    return {"ksize": _odd_kernel(p["blur_limit"], rng), "angle": float(rng.uniform(0.0, 180.0))}


def _sample_clahe(p, rng, shape):
    lo, hi = p.get("clip_limit", CLAHE_CLIP_LIMIT)
    return {"clip_limit": float(rng.uniform(lo, hi)), "tile_grid_size": tuple(p.get("tile_grid_size", CLAHE_TILE_GRID))}


def _sample_none(p, rng, shape):
    return {}


def _sample_brightness_contrast(p, rng, shape):
    b, c = p["brightness_limit"], p["contrast_limit"]
    return {"alpha": 1.0 + float(rng.uniform(-c, c)), "beta": float(rng.uniform(-b, b))}


def _sample_gamma(p, rng, shape):
    lo, hi = p["gamma_limit"]
    return {"gamma": float(rng.uniform(lo, hi)) / 100.0}


def _sample_solarize(p, rng, shape):
    lo, hi = p["threshold"]
    return {"threshold": float(rng.uniform(lo, hi))}


def _sample_grid(p, rng, shape):
    n = int(p.get("num_steps", GRID_NUM_STEPS))
    lim = p["distort_limit"]
    return {"num_steps": n,
            "xsteps": (1.0 + rng.uniform(-lim, lim, size=n + 1)).tolist(),
            "ysteps": (1.0 + rng.uniform(-lim, lim, size=n + 1)).tolist()}


def _sample_ssr(p, rng, shape):
    shift = p.get("shift_limit", SHIFT_LIMIT)
    scale = p.get("scale_limit", SCALE_LIMIT)
    rot = p.get("rotate_limit", ROTATE_LIMIT)
    return {"angle": float(rng.uniform(-rot, rot)), "scale": 1.0 + float(rng.uniform(-scale, scale)),
            "dx": float(rng.uniform(-shift, shift)), "dy": float(rng.uniform(-shift, shift))}


def _sample_glass(p, rng, shape):
    d = int(p["max_delta"])
    iters = int(p.get("iterations", GLASS_ITERATIONS))
    h, w = shape
    n = max(0, h - 2 * d) * max(0, w - 2 * d)
    return {"sigma": float(p.get("sigma", GLASS_SIGMA)), "max_delta": d,
            "offsets": rng.integers(-d, d, size=(iters, 2, n))}


def _sample_noise(p, rng, shape):
    lo, hi = p["var_limit"]
    sigma = math.sqrt(float(rng.uniform(lo, hi)))
    return {"noise": rng.normal(0.0, sigma, size=shape)}


# --------------------------------------------------------------------------
# Deterministic application of a concrete draw. Work in float32 on 0-255.
# --------------------------------------------------------------------------

def _as_u8(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _blur(img, mask, c):
    return cv2.blur(img, (c["ksize"], c["ksize"]), borderType=BORDER), mask


def _median_blur(img, mask, c):
    return cv2.medianBlur(_as_u8(img), c["ksize"]).astype(np.float32), mask


def motion_kernel(ksize: int, angle: float) -> np.ndarray:
    k = np.zeros((ksize, ksize), dtype=np.float32)
    r = (ksize - 1) / 2
    t = math.radians(angle)
    dx, dy = r * math.cos(t), r * math.sin(t)
    cv2.line(k, (int(round(r - dx)), int(round(r - dy))), (int(round(r + dx)), int(round(r + dy))), 1.0, 1)
    return k / k.sum()


def _motion_blur(img, mask, c):
    return cv2.filter2D(img, -1, motion_kernel(c["ksize"], c["angle"]), borderType=BORDER), mask


def _clahe(img, mask, c):
    op = cv2.createCLAHE(clipLimit=c["clip_limit"], tileGridSize=tuple(c["tile_grid_size"]))
    return op.apply(_as_u8(img)).astype(np.float32), mask


def _equalize(img, mask, c):
    return cv2.equalizeHist(_as_u8(img)).astype(np.float32), mask


def _brightness_contrast(img, mask, c):
    return img * c["alpha"] + c["beta"] * 255.0, mask


def _gamma(img, mask, c):
    return 255.0 * np.power(np.clip(img, 0, 255) / 255.0, c["gamma"]), mask


def _solarize(img, mask, c):
    return np.where(img >= c["threshold"], 255.0 - img, img), mask


def grid_maps(shape, c) -> tuple[np.ndarray, np.ndarray]:
    """Sampling maps (map_x, map_y) of a grid distortion draw."""
    h, w = shape

    def axis(size, steps):
        step = max(1, size // c["num_steps"])
        coords = np.zeros(size, dtype=np.float32)
        prev = 0.0
        for i, start in enumerate(range(0, size, step)):
            end = min(start + step, size)
            cur = prev + step * steps[min(i, len(steps) - 1)]
            coords[start:end] = np.linspace(prev, cur, end - start, dtype=np.float32)
            prev = cur
        return coords

    xx = axis(w, c["xsteps"])
    yy = axis(h, c["ysteps"])
    map_x, map_y = np.meshgrid(xx, yy)
    return map_x.astype(np.float32), map_y.astype(np.float32)


def _grid_distortion(img, mask, c):
    map_x, map_y = grid_maps(img.shape, c)
    img = cv2.remap(img, map_x, map_y, cv2.INTER_LINEAR, borderMode=BORDER)
    if mask is not None:
        mask = cv2.remap(mask, map_x, map_y, cv2.INTER_NEAREST, borderMode=BORDER)
    return img, mask


def ssr_matrix(shape, c) -> np.ndarray:
    """2x3 forward affine matrix (source -> destination) of a shift-scale-rotate draw."""
    h, w = shape
    m = cv2.getRotationMatrix2D((w / 2 - 0.5, h / 2 - 0.5), c["angle"], c["scale"])
    m[0, 2] += c["dx"] * w
    m[1, 2] += c["dy"] * h
    return m


def _shift_scale_rotate(img, mask, c):
    h, w = img.shape
    m = ssr_matrix(img.shape, c)
    img = cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=BORDER)
    if mask is not None:
        mask = cv2.warpAffine(mask, m, (w, h), flags=cv2.INTER_NEAREST, borderMode=BORDER)
    return img, mask


def _glass_blur(img, mask, c):
    x = cv2.GaussianBlur(img, (0, 0), c["sigma"], borderType=BORDER)
    x = np.ascontiguousarray(x, dtype=np.float32)
    for dy, dx in c["offsets"]:
        _kernels.glass_swaps(x, c["max_delta"], np.ascontiguousarray(dy, dtype=np.int64),
                             np.ascontiguousarray(dx, dtype=np.int64))
    return cv2.GaussianBlur(x, (0, 0), c["sigma"], borderType=BORDER), mask


def _gauss_noise(img, mask, c):
    return img + c["noise"].astype(np.float32), mask


@dataclass(frozen=True)
class _TransformDef:
    sample: Any
    apply: Any
    geometric: bool = False


TRANSFORMS = {
    "Blur": _TransformDef(_sample_blur, _blur),
    "MedianBlur": _TransformDef(_sample_blur, _median_blur),
    "MotionBlur": _TransformDef(_sample_motion_blur, _motion_blur),
    "CLAHE": _TransformDef(_sample_clahe, _clahe),
    "Equalize": _TransformDef(_sample_none, _equalize),
    "RandomBrightnessContrast": _TransformDef(_sample_brightness_contrast, _brightness_contrast),
    "RandomGamma": _TransformDef(_sample_gamma, _gamma),
    "Solarize": _TransformDef(_sample_solarize, _solarize),
    "GridDistortion": _TransformDef(_sample_grid, _grid_distortion, geometric=True),
    "ShiftScaleRotate": _TransformDef(_sample_ssr, _shift_scale_rotate, geometric=True),
    "GlassBlur": _TransformDef(_sample_glass, _glass_blur),
    "GaussNoise": _TransformDef(_sample_noise, _gauss_noise),
}


def apply_transform(name: str, params: dict, image, mask=None, rng=None, concrete: dict | None = None):
    """Apply one named transform. Pass ``concrete`` to replay a fixed draw."""
    t = TRANSFORMS[name]
    if concrete is None:
        concrete = t.sample(params, rng, image.shape)
    dtype = image.dtype
    out, out_mask = t.apply(np.asarray(image, dtype=np.float32), mask, concrete)
    return _restore(out, dtype), out_mask


def _restore(x, dtype):
    x = np.clip(x, 0, 255)
    if np.issubdtype(dtype, np.integer):
        return np.rint(x).astype(dtype)
    return x.astype(dtype)


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    transforms: tuple  # of (name, params) pairs
    probability: float
    name: str = ""
    selection: str = "pick-one-uniformly"

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"stage probability must lie in [0, 1], got {self.probability}")
        if not self.transforms:
            raise ValueError("a stage needs at least one transform")
        for tname, _ in self.transforms:
            if tname not in TRANSFORMS:
                raise ValueError(f"unknown transform {tname!r}")
        if self.selection != "pick-one-uniformly":
            raise ValueError(f"unsupported selection {self.selection!r}")


@dataclass(frozen=True)
class AugmentationPolicy:
    stages: tuple
    name: str = ""
    seedable: bool = True

    def with_probability(self, p: float) -> "AugmentationPolicy":
        """Copy with every stage probability replaced by ``p``."""
        return AugmentationPolicy(tuple(Stage(s.transforms, p, s.name) for s in self.stages), self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stages": [
                {"name": s.name, "probability": s.probability,
                 "transforms": [{"name": n, "params": _plain(p)} for n, p in s.transforms]}
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        stages = []
        for s in d["stages"]:
            transforms = tuple((t["name"], _tuplify(t.get("params") or {})) for t in s["transforms"])
            stages.append(Stage(transforms, float(s["probability"]), s.get("name", "")))
        return cls(tuple(stages), d.get("name", ""))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "AugmentationPolicy":
        return cls.from_dict(yaml.safe_load(text))


def _plain(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _tuplify(params: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


def _policy(name, blur_limit, bc_limit, gamma_limit, solarize=None) -> AugmentationPolicy:
    intensity = [
        ("RandomBrightnessContrast", {"brightness_limit": bc_limit, "contrast_limit": bc_limit}),
        ("RandomGamma", {"gamma_limit": gamma_limit}),
    ]
    if solarize is not None:
        intensity.append(("Solarize", {"threshold": solarize}))
    stages = (
        Stage((("Blur", {"blur_limit": blur_limit}),
               ("MedianBlur", {"blur_limit": blur_limit}),
               ("MotionBlur", {"blur_limit": blur_limit})), 0.5, "blur"),
        Stage((("CLAHE", {}), ("Equalize", {})), 0.2, "histogram"),
        Stage(tuple(intensity), 0.2, "intensity"),
        Stage((("GridDistortion", {"distort_limit": 0.2}),
               ("ShiftScaleRotate", {}),
               ("GlassBlur", {"max_delta": 5})), 0.5, "geometric"),
        Stage((("GaussNoise", {"var_limit": (20, 50)}),), 0.5, "noise"),
    )
    return AugmentationPolicy(stages, name)


def builtin_policy(name: str) -> AugmentationPolicy:
    """The ``normal`` policy used everywhere, or the ``tougher`` variant."""
    if name == "normal":
        return _policy("normal", 5, 0.2, (90, 110))
    if name == "tougher":
        return _policy("tougher", 15, 0.4, (30, 170), solarize=(64, 192))
    if name == "none":
        return AugmentationPolicy((), "none")
    raise ValueError(f"unknown augmentation policy {name!r}; expected 'normal', 'tougher' or 'none'")


def policy_diff(a: AugmentationPolicy, b: AugmentationPolicy) -> list[tuple]:
    """Every ``(stage, transform, field, value_in_a, value_in_b)`` that differs.

    ``field`` is a parameter name, ``"probability"`` for a stage probability,
    or ``None`` when the whole transform (or stage) is missing on one side.
    """
    out = []
    sa = {s.name: s for s in a.stages}
    sb = {s.name: s for s in b.stages}
    for sname in list(sa) + [n for n in sb if n not in sa]:
        x, y = sa.get(sname), sb.get(sname)
        if x is None or y is None:
            out.append((sname, None, None, x, y))
            continue
        if x.probability != y.probability:
            out.append((sname, None, "probability", x.probability, y.probability))
        ta, tb = dict(x.transforms), dict(y.transforms)
        for tname in list(ta) + [n for n in tb if n not in ta]:
            pa, pb = ta.get(tname), tb.get(tname)
            if pa is None or pb is None:
                out.append((sname, tname, None, pa, pb))
                continue
            for key in list(pa) + [k for k in pb if k not in pa]:
                if pa.get(key) != pb.get(key):
                    out.append((sname, tname, key, pa.get(key), pb.get(key)))
    return out


def apply(policy: AugmentationPolicy, image: np.ndarray, mask: np.ndarray | None = None,
          rng: np.random.Generator | None = None):
    """Run the policy once over ``image`` (and ``mask``); returns ``(image, mask)``."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != image.shape:
            raise ValueError(f"mask shape {mask.shape} does not match image shape {image.shape}")
    if rng is None:
        rng = np.random.default_rng()
    dtype = image.dtype
    out = np.asarray(image, dtype=np.float32)
    out_mask = None if mask is None else np.ascontiguousarray(mask)
    mask_dtype = None if mask is None else mask.dtype
    if out_mask is not None and out_mask.dtype not in (np.uint8, np.uint16, np.int16, np.float32):
        out_mask = out_mask.astype(np.int32).astype(np.float32)
    for stage in policy.stages:
        if rng.random() >= stage.probability:
            continue
        tname, params = stage.transforms[int(rng.integers(len(stage.transforms)))]
        t = TRANSFORMS[tname]
        concrete = t.sample(params, rng, out.shape)
        out, out_mask = t.apply(out, out_mask, concrete)
        out = np.clip(np.asarray(out, dtype=np.float32), 0, 255)
    if out_mask is not None:
        out_mask = out_mask.astype(mask_dtype)
    return _restore(out, dtype), out_mask
