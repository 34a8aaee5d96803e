"""Pretraining batches: k distinct slices drawn along one volume's ordering axis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volio import Volume


class InsufficientSlicesError(ValueError):
    """The volume has fewer slices along its ordering axis than the batch needs."""


@dataclass(frozen=True)
class SamplingSpec:
    k: int = 16
    distribution: str = "uniform"
    weights: tuple[float, ...] | None = None
    crop: tuple[int, int] | None = None

    def __post_init__(self):
        if int(self.k) < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.distribution not in ("uniform", "custom"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "custom":
            if self.weights is None:
                raise ValueError("custom distribution needs weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if (w < 0).any() or not w.sum() > 0:
                raise ValueError("custom weights must be non-negative and not all zero")
        if self.crop is not None and min(self.crop) < 1:
            raise ValueError(f"crop size must be positive, got {self.crop}")


@dataclass(frozen=True)
class SliceBatch:
    slices: list
    positions: list
    ranks: list
    volume_id: str

    @property
    def bs(self) -> int:
        return len(self.positions)


def ranks_from_positions(positions, direction: int = 1) -> list[int]:
    """Rank of each position after sorting ascending; reversed for ``direction=-1``."""
    p = np.asarray(positions)
    if len(np.unique(p)) != p.size:
        raise ValueError(f"positions must be distinct, got {p.tolist()}")
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    ranks = np.empty(p.size, dtype=np.int64)
    ranks[np.argsort(p, kind="stable")] = np.arange(p.size)
    if direction == -1:
        ranks = p.size - 1 - ranks
    return ranks.tolist()


def _probabilities(spec: SamplingSpec, n: int) -> np.ndarray | None:
    if spec.distribution == "uniform":
        return None
    w = np.asarray(spec.weights, dtype=np.float64)
    if w.size != n:
        raise ValueError(f"{w.size} sampling weights for a volume with {n} slices")
    if np.count_nonzero(w) < spec.k:
        raise InsufficientSlicesError(f"only {np.count_nonzero(w)} slices have non-zero weight, need {spec.k}")
    return w / w.sum()


def draw_positions(n: int, spec: SamplingSpec, rng: np.random.Generator) -> np.ndarray:
    if n < spec.k:
        raise InsufficientSlicesError(f"volume has {n} slices along the ordering axis, need k={spec.k}")
    return rng.choice(n, size=spec.k, replace=False, p=_probabilities(spec, n))


def sample_batch(v: Volume, spec: SamplingSpec, rng: np.random.Generator) -> SliceBatch:
    positions = draw_positions(v.n_slices, spec, rng)
    stack = v.slices(positions)
    if spec.crop is not None:
        ch, cw = spec.crop
        h, w = stack.shape[1:]
        if ch > h or cw > w:
            raise ValueError(f"crop {spec.crop} larger than slice {(h, w)}")
        # One crop window for the whole batch keeps slices comparable.
        y0 = int(rng.integers(0, h - ch + 1))
        x0 = int(rng.integers(0, w - cw + 1))
        stack = stack[:, y0:y0 + ch, x0:x0 + cw]
    positions = positions.tolist()
    return SliceBatch(
        slices=list(stack),
        positions=positions,
        ranks=ranks_from_positions(positions, v.axis_direction),
        volume_id=v.volume_id,
    )
