"""Compiled and numpy kernel backends must agree bit for bit."""

import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roadgen import kernels

BACKENDS = [pytest.param(kernels.python_backend, id="python")]
if kernels.compiled_backend is not None:
    BACKENDS.append(pytest.param(kernels.compiled_backend, id="cython"))

needs_compiled = pytest.mark.skipif(kernels.compiled_backend is None, reason="extension not built")


def scatter_oracle(cell, feats, n_cells):
    """Dictionary accumulation with math.fsum (correctly rounded)."""
    buckets = {}
    for c, row in zip(cell, feats):
        if c >= 0:
            buckets.setdefault(int(c), []).append(row)
    out = np.zeros((n_cells, feats.shape[1]))
    for c, rows in buckets.items():
        rows = np.array(rows)
        out[c] = [math.fsum(rows[:, k]) for k in range(rows.shape[1])]
    return out


@pytest.mark.parametrize("backend", BACKENDS)
class TestScatter:
    def test_matches_fsum_oracle(self, backend, rng):
        cell = rng.integers(-1, 50, size=2000)
        feats = rng.normal(size=(2000, 3)) * 10.0 ** rng.integers(-3, 4, size=(2000, 1))
        got = backend.scatter_add_compensated(cell, feats, 50)
        assert np.allclose(got, scatter_oracle(cell, feats, 50), rtol=1e-14, atol=1e-12)

    def test_two_points_one_cell(self, backend):
        got = backend.scatter_add_compensated(np.array([3, 3]), np.array([[1.0, 2.0], [0.5, -1.0]]), 5)
        expected = np.zeros((5, 2))
        expected[3] = [1.5, 1.0]
        assert np.array_equal(got, expected)

    def test_compensation_recovers_small_terms(self, backend):
        feats = np.array([[1e16], [1.0], [-1e16], [1.0]])
        got = backend.scatter_add_compensated(np.zeros(4, dtype=np.int64), feats, 1)
        assert got[0, 0] == 2.0

    def test_out_of_range_raises(self, backend):
        with pytest.raises(IndexError):
            backend.scatter_add_compensated(np.array([0, 7]), np.ones((2, 1)), 5)

    def test_empty(self, backend):
        got = backend.scatter_add_compensated(np.zeros(0, np.int64), np.zeros((0, 4)), 6)
        assert got.shape == (6, 4) and not got.any()


@pytest.mark.parametrize("backend", BACKENDS)
class TestWarp:
    def test_identity(self, backend, rng):
        img = rng.uniform(0, 255, size=(17, 23, 3))
        for fn in (backend.warp_bilinear, backend.warp_nearest):
            out, valid = fn(img, np.eye(3), 17, 23, 0.0)
            assert np.array_equal(out, img) and valid.all()

    def test_integer_shift(self, backend):
        yy, xx = np.mgrid[0:20, 0:30]
        board = ((yy // 4 + xx // 4) % 2).astype(np.float64)[:, :, None]
        # output pixel p samples source p - (3, 2)
        hinv = np.array([[1.0, 0, -3.0], [0, 1.0, -2.0], [0, 0, 1.0]])
        for fn in (backend.warp_bilinear, backend.warp_nearest):
            out, valid = fn(board, hinv, 20, 30, -1.0)
            expected = np.full_like(board, -1.0)
            expected[2:, 3:] = board[:-2, :-3]
            assert np.array_equal(valid.astype(bool), expected[:, :, 0] >= 0)
            assert np.array_equal(out, expected)

    def test_all_out_of_bounds(self, backend, rng):
        img = rng.uniform(size=(8, 8, 2))
        hinv = np.array([[1.0, 0, 1000.0], [0, 1.0, 0.0], [0, 0, 1.0]])
        for fn in (backend.warp_bilinear, backend.warp_nearest):
            out, valid = fn(img, hinv, 8, 8, 7.0)
            assert not valid.any() and np.all(out == 7.0)

    def test_border_roundoff_clamped(self, backend, rng):
        img = rng.uniform(size=(6, 9, 1))
        hinv = np.eye(3)
        hinv[0, 0] = 1.0 + 1e-15  # last column lands a hair past the outermost center
        out, valid = backend.warp_bilinear(img, hinv, 6, 9, -1.0)
        assert valid.all()
        assert np.allclose(out, img, atol=1e-12)

    def test_bilinear_half_pixel(self, backend):
        img = np.array([[0.0, 10.0]])[:, :, None]
        hinv = np.array([[1.0, 0, 0.5], [0, 1.0, 0.0], [0, 0, 1.0]])
        out, valid = backend.warp_bilinear(img, hinv, 1, 2, 0.0)
        assert out[0, 0, 0] == 5.0 and valid[0, 0]
        assert not valid[0, 1]


@needs_compiled
class TestParity:
    @given(st.integers(0, 2**32 - 1), st.integers(1, 400), st.integers(1, 5))
    def test_scatter_bit_identical(self, seed, n, c):
        rng = np.random.default_rng(seed)
        cell = rng.integers(-2, 30, size=n)
        feats = rng.normal(size=(n, c)) * 10.0 ** rng.integers(-6, 7, size=(n, 1))
        a = kernels.compiled_backend.scatter_add_compensated(cell, feats, 30)
        b = kernels.python_backend.scatter_add_compensated(cell, feats, 30)
        assert np.array_equal(a, b)

    @given(st.integers(0, 2**32 - 1))
    def test_warps_bit_identical(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.uniform(0, 255, size=(13, 19, 3))
        hinv = np.eye(3) + rng.normal(scale=[[0.05, 0.05, 2.0], [0.05, 0.05, 2.0], [1e-3, 1e-3, 0.0]])
        for name in ("warp_bilinear", "warp_nearest"):
            a = getattr(kernels.compiled_backend, name)(img, hinv, 15, 17, 3.0)
            b = getattr(kernels.python_backend, name)(img, hinv, 15, 17, 3.0)
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_pure_python_switch():
    code = "from roadgen import kernels; print(kernels.BACKEND)"
    env = {"ROADGEN_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
