"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Operation order mirrors the compiled loops so both backends agree bit for bit.
"""

from __future__ import annotations

import numpy as np

# bilinear samples this far (px) outside the outermost pixel centers are clamped
EDGE_EPS = 1e-9


def scatter_add_compensated(cell, feats, n_cells):
    cell = np.asarray(cell, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or len(cell) != len(feats):
        raise ValueError("cell and feats length differ")
    total = np.zeros((n_cells, feats.shape[1]))
    comp = np.zeros_like(total)
    keep = np.flatnonzero(cell >= 0)
    if keep.size == 0:
        return total
    if cell[keep].max() >= n_cells:
        raise IndexError("cell index out of range")

    # Process the r-th point of every cell together; within a cell the row order
    # of the compiled loop is preserved, so the compensated sums are identical.
    order = keep[np.argsort(cell[keep], kind="stable")]
    sorted_cells = cell[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    counts = np.diff(np.r_[starts, len(order)])
    rank = np.arange(len(order)) - np.repeat(starts, counts)
    by_rank = np.argsort(rank, kind="stable")
    order, sorted_cells = order[by_rank], sorted_cells[by_rank]
    bounds = np.r_[0, np.cumsum(np.bincount(rank))]
    for r in range(len(bounds) - 1):
        sl = slice(bounds[r], bounds[r + 1])
        k = sorted_cells[sl]
        x = feats[order[sl]]
        s = total[k]
        t = s + x
        comp[k] += np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
        total[k] = t
    return total + comp


def _source_coords(hinv, out_h, out_w):
    v, u = np.meshgrid(np.arange(out_h) + 0.5, np.arange(out_w) + 0.5, indexing="ij")
    w = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]) / w
        y = (hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]) / w
    return x, y, w


def warp_bilinear(src, hinv, out_h, out_w, fill):
    src = np.asarray(src, dtype=np.float64)
    hinv = np.asarray(hinv, dtype=np.float64)
    sh, sw, nc = src.shape
    out = np.full((out_h, out_w, nc), float(fill))
    x, y, w = _source_coords(hinv, out_h, out_w)
    xs, ys = x - 0.5, y - 0.5
    with np.errstate(invalid="ignore"):
        ok = (
            (w > 0)
            & (xs >= -EDGE_EPS)
            & (ys >= -EDGE_EPS)
            & (xs <= sw - 1 + EDGE_EPS)
            & (ys <= sh - 1 + EDGE_EPS)
        )
    xs = np.minimum(np.maximum(xs[ok], 0.0), sw - 1.0)
    ys = np.minimum(np.maximum(ys[ok], 0.0), sh - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
    bottom = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
    out[ok] = (1.0 - fy) * top + fy * bottom
    return out, ok.astype(np.uint8)


def warp_nearest(src, hinv, out_h, out_w, fill):
    src = np.asarray(src, dtype=np.float64)
    hinv = np.asarray(hinv, dtype=np.float64)
    sh, sw, nc = src.shape
    out = np.full((out_h, out_w, nc), float(fill))
    x, y, w = _source_coords(hinv, out_h, out_w)
    with np.errstate(invalid="ignore"):
        ok = (w > 0) & (x >= 0) & (y >= 0) & (x < sw) & (y < sh)
    xi = np.floor(x[ok]).astype(np.intp)
    yi = np.floor(y[ok]).astype(np.intp)
    out[ok] = src[yi, xi]
    return out, ok.astype(np.uint8)
