"""Pairwise margin ranking loss for slice ordering and the NT-Xent contrastive baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import _kernels


@dataclass(frozen=True)
class RankingLossConfig:
    margin: float = 0.2
    pair_set: str = "all_pairs"
    reduction: str = "mean"

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.pair_set != "all_pairs":
            raise ValueError(f"unsupported pair_set {self.pair_set!r}")
        if self.reduction != "mean":
            raise ValueError(f"unsupported reduction {self.reduction!r}")


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    projection_dim: int = 128
    views_per_image: int = 2

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if int(self.projection_dim) < 1:
            raise ValueError("projection_dim must be >= 1")
        if self.views_per_image != 2:
            raise ValueError("views_per_image is fixed to 2")


def check_ranks(ranks, n: int | None = None) -> np.ndarray:
    """Validate that ``ranks`` is a permutation of ``0..len-1``."""
    r = np.asarray(ranks)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need at least two ranks")
    if n is not None and r.size != n:
        raise ValueError(f"{r.size} ranks for {n} scores")
    if not np.array_equal(np.sort(r), np.arange(r.size)):
        raise ValueError(f"ranks must be a permutation of 0..{r.size - 1}, got {r.tolist()}")
    return r.astype(np.int64)


def margin_ranking_loss(scores: torch.Tensor, ranks, cfg: RankingLossConfig = RankingLossConfig()) -> torch.Tensor:
    """Mean hinge ``max(0, margin - (s_i - s_j))`` over all pairs with ``rank_i > rank_j``.

    Differentiable with respect to ``scores``. Zero exactly when every
    pair is ordered correctly with a gap of at least ``margin``.
    """
    r = torch.as_tensor(check_ranks(ranks, len(scores)), device=scores.device)
    diff = scores[:, None] - scores[None, :]
    higher = r[:, None] > r[None, :]
    return F.relu(cfg.margin - diff[higher]).mean()


def margin_ranking_loss_np(scores, ranks, margin: float = 0.2) -> tuple[float, np.ndarray]:
    """NumPy-side loss and gradient through the compiled (or fallback) kernel."""
    r = check_ranks(ranks, len(scores))
    return _kernels.pairwise_hinge(np.ascontiguousarray(scores, dtype=np.float64), r, float(margin))


def nt_xent_loss(embeddings: torch.Tensor, cfg: ContrastiveConfig = ContrastiveConfig()) -> torch.Tensor:
    """Normalized temperature-scaled cross entropy.

    ``embeddings`` holds ``2k`` rows: the first ``k`` are view one of each
    image, the next ``k`` view two in the same image order. Each row's
    positive is its partner view; the other ``2k - 2`` rows are negatives.
    """
    n = embeddings.shape[0]
    if n % 2 or n < 2:
        raise ValueError(f"need an even number (>= 2) of embeddings, got {n}")
    norms = embeddings.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("cannot normalise a zero embedding vector")
    z = embeddings / norms[:, None]
    sim = z @ z.T / cfg.temperature
    sim = sim.masked_fill(torch.eye(n, dtype=torch.bool, device=z.device), float("-inf"))
    k = n // 2
    target = torch.cat([torch.arange(k, n), torch.arange(0, k)]).to(z.device)
    return F.cross_entropy(sim, target)
