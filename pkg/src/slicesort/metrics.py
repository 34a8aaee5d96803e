"""Mean Displacement for ordering quality and IoU for segmentation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import check_ranks


@dataclass(frozen=True)
class DisplacementReport:
    mean_displacement: float
    batch_size: int
    random_baseline: float


@dataclass(frozen=True)
class IoUReport:
    per_class: dict
    mean_iou: float
    classes_excluded: frozenset = field(default_factory=frozenset)


def predicted_ranks(scores) -> np.ndarray:
    """Rank of each score in ascending order; ties go to the earlier index."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(s.size)
    return ranks


def random_md_baseline(bs: int) -> float:
    """Expected Mean Displacement of a uniformly random permutation of ``bs`` items."""
    if bs < 2:
        raise ValueError(f"batch size must be >= 2, got {bs}")
    return (bs * bs - 1) / (3 * bs)


def mean_displacement(scores, ranks) -> DisplacementReport:
    """Average ``|true rank - predicted rank|`` over the batch."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    r = check_ranks(ranks, s.size)
    md = float(np.abs(r - predicted_ranks(s)).mean())
    return DisplacementReport(md, s.size, random_md_baseline(s.size))


def iou(prediction, truth, classes) -> IoUReport:
    """Per-class intersection over union; classes absent from both arrays are excluded."""
    p = np.asarray(prediction)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs truth {t.shape}")
    per_class = {}
    excluded = set()
    for c in sorted(classes):
        pc, tc = p == c, t == c
        union = np.count_nonzero(pc | tc)
        if union == 0:
            excluded.add(c)
            continue
        per_class[c] = np.count_nonzero(pc & tc) / union
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return IoUReport(per_class, mean, frozenset(excluded))


def confusion_counts(prediction, truth, n_classes: int) -> np.ndarray:
    """``n_classes x n_classes`` count matrix (rows truth, columns prediction)."""
    idx = np.asarray(truth, dtype=np.int64).ravel() * n_classes + np.asarray(prediction, dtype=np.int64).ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_from_confusion(cm: np.ndarray, classes) -> IoUReport:
    """Same contract as :func:`iou`, from accumulated confusion counts."""
    per_class, excluded = {}, set()
    for c in sorted(classes):
        inter = cm[c, c]
        union = cm[c, :].sum() + cm[:, c].sum() - inter
        if union == 0:
            excluded.add(c)
            continue
        per_class[c] = float(inter / union)
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return IoUReport(per_class, mean, frozenset(excluded))
