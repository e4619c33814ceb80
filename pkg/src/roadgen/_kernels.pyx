# cython: language_level=3
"""Compiled inner loops. Semantics must match ``roadgen._fallback`` bit for bit."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, fmax, fmin

cnp.import_array()

# bilinear samples this far (px) outside the outermost pixel centers are clamped
cdef double EDGE_EPS = 1e-9


def scatter_add_compensated(const cnp.int64_t[:] cell, const double[:, :] feats, Py_ssize_t n_cells):
    """Sum ``feats`` rows into ``n_cells`` bins, row order, Neumaier-compensated.

    Rows with ``cell < 0`` are skipped.
    """
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t nc = feats.shape[1]
    if cell.shape[0] != n:
        raise ValueError("cell and feats length differ")
    total_arr = np.zeros((n_cells, nc), dtype=np.float64)
    comp_arr = np.zeros((n_cells, nc), dtype=np.float64)
    cdef double[:, :] total = total_arr
    cdef double[:, :] comp = comp_arr
    cdef Py_ssize_t i, c
    cdef cnp.int64_t k
    cdef double s, x, t
    for i in range(n):
        k = cell[i]
        if k < 0:
            continue
        if k >= n_cells:
            raise IndexError("cell index out of range")
        for c in range(nc):
            s = total[k, c]
            x = feats[i, c]
            t = s + x
            if fabs(s) >= fabs(x):
                comp[k, c] += (s - t) + x
            else:
                comp[k, c] += (x - t) + s
            total[k, c] = t
    for k in range(n_cells):
        for c in range(nc):
            total[k, c] = total[k, c] + comp[k, c]
    return total_arr


cdef inline void _source_coords(const double[:, :] hinv, double u, double v,
                                double* x, double* y, double* w) nogil:
    w[0] = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
    x[0] = (hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]) / w[0]
    y[0] = (hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]) / w[0]


def warp_bilinear(const double[:, :, :] src, const double[:, :] hinv,
                  Py_ssize_t out_h, Py_ssize_t out_w, double fill):
    """Inverse-warp ``src`` (H, W, C) through ``hinv`` (destination -> source)."""
    cdef Py_ssize_t sh = src.shape[0]
    cdef Py_ssize_t sw = src.shape[1]
    cdef Py_ssize_t nc = src.shape[2]
    out_arr = np.full((out_h, out_w, nc), fill, dtype=np.float64)
    valid_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef double[:, :, :] out = out_arr
    cdef cnp.uint8_t[:, :] valid = valid_arr
    cdef Py_ssize_t i, j, c, x0, y0, x1, y1
    cdef double x, y, w, xs, ys, fx, fy, top, bottom
    with nogil:
        for i in range(out_h):
            for j in range(out_w):
                _source_coords(hinv, j + 0.5, i + 0.5, &x, &y, &w)
                if not w > 0:
                    continue
                xs = x - 0.5
                ys = y - 0.5
                if not (xs >= -EDGE_EPS and ys >= -EDGE_EPS
                        and xs <= sw - 1 + EDGE_EPS and ys <= sh - 1 + EDGE_EPS):
                    continue
                # absorb round-off at the border samples
                xs = fmin(fmax(xs, 0.0), sw - 1.0)
                ys = fmin(fmax(ys, 0.0), sh - 1.0)
                x0 = <Py_ssize_t>floor(xs)
                y0 = <Py_ssize_t>floor(ys)
                fx = xs - x0
                fy = ys - y0
                x1 = x0 + 1 if x0 + 1 < sw else sw - 1
                y1 = y0 + 1 if y0 + 1 < sh else sh - 1
                valid[i, j] = 1
                for c in range(nc):
                    top = (1.0 - fx) * src[y0, x0, c] + fx * src[y0, x1, c]
                    bottom = (1.0 - fx) * src[y1, x0, c] + fx * src[y1, x1, c]
                    out[i, j, c] = (1.0 - fy) * top + fy * bottom
    return out_arr, valid_arr


def warp_nearest(const double[:, :, :] src, const double[:, :] hinv,
                 Py_ssize_t out_h, Py_ssize_t out_w, double fill):
    """Nearest-neighbour variant: samples the source pixel containing the point."""
    cdef Py_ssize_t sh = src.shape[0]
    cdef Py_ssize_t sw = src.shape[1]
    cdef Py_ssize_t nc = src.shape[2]
    out_arr = np.full((out_h, out_w, nc), fill, dtype=np.float64)
    valid_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef double[:, :, :] out = out_arr
    cdef cnp.uint8_t[:, :] valid = valid_arr
    cdef Py_ssize_t i, j, c, xi, yi
    cdef double x, y, w
    with nogil:
        for i in range(out_h):
            for j in range(out_w):
                _source_coords(hinv, j + 0.5, i + 0.5, &x, &y, &w)
                if not w > 0:
                    continue
                if not (x >= 0 and y >= 0 and x < sw and y < sh):
                    continue
                xi = <Py_ssize_t>floor(x)
                yi = <Py_ssize_t>floor(y)
                valid[i, j] = 1
                for c in range(nc):
                    out[i, j, c] = src[yi, xi, c]
    return out_arr, valid_arr
