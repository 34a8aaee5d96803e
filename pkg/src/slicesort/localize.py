"""Unsupervised sample localization from inference-dropout feature variance.

Every slice along the ordering axis is pushed through the encoder ``T``
times with dropout active. The per-location standard deviation of the last
(pre-pooling) feature map, averaged over channels and upsampled to slice
resolution, forms an uncertainty volume. Its top percentile, reduced to the
largest connected component and then to its convex hull, outlines the sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial import ConvexHull

from . import _kernels
from .models import enable_inference_dropout, to_tensor
from .volio import Volume


class ConfigurationError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class LocalizationConfig:
    mc_samples: int = 20
    dropout_rate: float = 0.2
    top_percent: float = 3.0
    channel_reduce: str = "mean"
    connectivity: int = 6
    seed: int = 0
    chunk: int = 8  # slices per forward batch (each repeated mc_samples times)

    def __post_init__(self):
        if self.mc_samples < 2:
            raise ValueError(f"mc_samples must be >= 2, got {self.mc_samples}")
        if not 0 < self.top_percent <= 100:
            raise ValueError(f"top_percent must lie in (0, 100], got {self.top_percent}")
        if self.channel_reduce != "mean":
            raise ValueError(f"unsupported channel_reduce {self.channel_reduce!r}")
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")


@dataclass
class LocalizationResult:
    uncertainty: np.ndarray
    mask: np.ndarray
    hull: np.ndarray
    crop_box: tuple  # ((z0, z1), (y0, y1), (x0, x1)), half-open
    removed_fraction: float

    def crop(self, data: np.ndarray) -> np.ndarray:
        return data[tuple(slice(a, b) for a, b in self.crop_box)]


def largest_component(binary: np.ndarray, connectivity: int = 6) -> np.ndarray:
    """Keep only the largest connected component.

    Ties go to the component whose first voxel comes earliest in C order.
    """
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {binary.shape}")
    if not binary.any():
        raise EmptyMaskError("mask has no foreground voxels")
    labels, sizes = _kernels.label_components(np.ascontiguousarray(binary, dtype=np.uint8), connectivity)
    return labels == int(np.argmax(sizes)) + 1


def _affine_basis(points: np.ndarray, tol: float = 1e-9):
    origin = points.mean(axis=0)
    centred = points - origin
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return origin, vt[:rank]


def hull_equations(points: np.ndarray):
    """Half-space description of the hull of ``points`` in its own affine span.

    Returns ``(origin, basis, equations)``: coordinates ``(p - origin) @ basis.T``
    lie in the hull iff ``eq[:, :-1] @ c + eq[:, -1] <= 0`` for every row.
    """
    origin, basis = _affine_basis(points)
    dim = basis.shape[0]
    if dim == 0:
        return origin, basis, np.zeros((0, 1))
    coords = (points - origin) @ basis.T
    if dim == 1:
        lo, hi = coords[:, 0].min(), coords[:, 0].max()
        return origin, basis, np.array([[1.0, -hi], [-1.0, lo]])
    return origin, basis, ConvexHull(coords).equations


def convex_hull_mask(mask: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Rasterise the convex hull of the set voxels (voxel centres at integer coordinates)."""
    mask = np.asarray(mask, dtype=bool)
    points = np.argwhere(mask).astype(np.float64)
    if points.shape[0] == 0:
        raise EmptyMaskError("cannot take the hull of an empty mask")
    lo = points.min(axis=0).astype(int)
    hi = points.max(axis=0).astype(int) + 1
    grid = np.stack(np.meshgrid(*(np.arange(a, b) for a, b in zip(lo, hi)), indexing="ij"), axis=-1)
    cand = grid.reshape(-1, 3).astype(np.float64)

    origin, basis, eq = hull_equations(points)
    rel = cand - origin
    coords = rel @ basis.T
    # Candidates must lie in the affine span first (matters for flat hulls).
    off_span = np.linalg.norm(rel - coords @ basis, axis=1) > tol
    inside = _kernels.points_in_halfspaces(np.ascontiguousarray(coords), np.ascontiguousarray(eq), tol)
    inside &= ~off_span

    out = np.zeros(mask.shape, dtype=bool)
    region = tuple(slice(a, b) for a, b in zip(lo, hi))
    out[region] = inside.reshape(grid.shape[:3])
    return out | mask


def bounding_box(mask: np.ndarray) -> tuple:
    idx = np.argwhere(mask)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    return tuple((int(a), int(b)) for a, b in zip(lo, hi))


def _encoder_of(model):
    encoder = getattr(model, "encoder", model)
    if not getattr(encoder, "has_dropout", False):
        raise ConfigurationError("localization needs an encoder built with dropout_between_blocks")
    return encoder


@torch.no_grad()
def uncertainty_volume(v: Volume, model, cfg: LocalizationConfig = LocalizationConfig()) -> np.ndarray:
    encoder = _encoder_of(model)
    was_training = model.training
    enable_inference_dropout(model)
    t = cfg.mc_samples
    n = v.n_slices
    out = None
    try:
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            for start in range(0, n, cfg.chunk):
                idx = np.arange(start, min(start + cfg.chunk, n))
                x = to_tensor(v.slices(idx))
                h, w = x.shape[-2:]
                feats = encoder.features(x.repeat_interleave(t, dim=0))[-1]
                feats = feats.view(len(idx), t, *feats.shape[1:])
                std = feats.std(dim=1, unbiased=False).mean(dim=1, keepdim=True)
                up = F.interpolate(std, size=(h, w), mode="bilinear", align_corners=False)[:, 0]
                if out is None:
                    out = np.empty((n, h, w), dtype=np.float32)
                out[idx] = up.numpy()
    finally:
        model.train(was_training)
    return np.moveaxis(out, 0, v.ordering_axis)


def localize(v: Volume, model, cfg: LocalizationConfig = LocalizationConfig()) -> LocalizationResult:
    u = uncertainty_volume(v, model, cfg)
    threshold = np.percentile(u, 100.0 - cfg.top_percent)
    mask = largest_component(u >= threshold, cfg.connectivity)
    hull = convex_hull_mask(mask)
    box = bounding_box(hull)
    box_size = np.prod([b - a for a, b in box])
    return LocalizationResult(u, mask, hull, box, float(1.0 - box_size / u.size))
