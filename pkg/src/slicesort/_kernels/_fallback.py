"""Pure Python/NumPy versions of the compiled kernels.

Same signatures and results as ``_core``; used when the extension is not
built or ``SLICESORT_PURE_PYTHON`` is set.
"""
from collections import deque

import numpy as np


def pairwise_hinge(scores, ranks, margin):
    diff = scores[:, None] - scores[None, :]
    higher = ranks[:, None] > ranks[None, :]
    viol = higher & (diff < margin)
    n_pairs = np.count_nonzero(higher)
    loss = float(np.where(viol, margin - diff, 0.0).sum() / n_pairs)
    grad = (viol.sum(axis=0) - viol.sum(axis=1)).astype(np.float64) / n_pairs
    return loss, grad


_OFFSETS_6 = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
_OFFSETS_26 = tuple((a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0))


def label_components(mask, connectivity=6):
    """Label foreground components in raster-scan order of their first voxel.

    Returns ``(labels, sizes)``: int32 labels (0 background, 1..n) and an
    int64 array of component sizes indexed by ``label - 1``.
    """
    offsets = _OFFSETS_6 if connectivity == 6 else _OFFSETS_26
    nz, ny, nx = mask.shape
    labels = np.zeros(mask.shape, dtype=np.int32)
    sizes = []
    fg = np.flatnonzero(mask)
    lab = labels.reshape(-1)
    for start in fg:
        if lab[start]:
            continue
        current = len(sizes) + 1
        lab[start] = current
        count = 0
        queue = deque([start])
        while queue:
            idx = queue.popleft()
            count += 1
            z, rem = divmod(idx, ny * nx)
            y, x = divmod(rem, nx)
            for dz, dy, dx in offsets:
                zz, yy, xx = z + dz, y + dy, x + dx
                if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                    j = (zz * ny + yy) * nx + xx
                    if mask.flat[j] and not lab[j]:
                        lab[j] = current
                        queue.append(j)
        sizes.append(count)
    return labels, np.asarray(sizes, dtype=np.int64)


def points_in_halfspaces(points, equations, tol):
    """True where ``normal . p + offset <= tol`` for every facet row."""
    if equations.shape[0] == 0:
        return np.ones(points.shape[0], dtype=bool)
    out = np.ones(points.shape[0], dtype=bool)
    normals, offsets = equations[:, :-1], equations[:, -1]
    for start in range(0, points.shape[0], 65536):
        chunk = points[start:start + 65536]
        out[start:start + 65536] = np.all(chunk @ normals.T + offsets <= tol, axis=1)
    return out


def glass_swaps(img, max_delta, dy, dx):
    """Sequential neighbourhood pixel swaps (in place) for glass blur.

    ``dy``/``dx`` hold one pre-drawn offset per visited pixel, visiting rows
    and columns from ``size - max_delta`` down to ``max_delta + 1``.
    """
    h, w = img.shape
    k = 0
    for y in range(h - max_delta, max_delta, -1):
        for x in range(w - max_delta, max_delta, -1):
            yy, xx = y + dy[k], x + dx[k]
            k += 1
            if 0 <= yy < h and 0 <= xx < w and 0 <= y < h and 0 <= x < w:
                img[y, x], img[yy, xx] = img[yy, xx], img[y, x]
    return img
