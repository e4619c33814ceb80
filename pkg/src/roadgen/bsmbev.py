"""Background-suppressed feature math and height-based lifting into a BEV grid.

Learned quantities (segmentation scores, context features, height
distributions, convolution and attention weights) are inputs here.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .camgeom import CameraRig, intersect_planes
from .segmask import BinaryForegroundMask, MultiClassMask, binary_foreground, DEFAULT_T_FG


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    stride: int = 16

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) <= 0:
            raise ShapeMismatch("feature map must be a non-empty (C, H, W) array")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map has non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


def uniform_bin_edges(n_bins: int, h_min: float = -1.0, h_max: float = 3.0) -> np.ndarray:
    if n_bins < 1 or not h_max > h_min:
        raise ValueError("need n_bins >= 1 and h_max > h_min")
    return np.linspace(h_min, h_max, n_bins + 1)


@dataclass(frozen=True)
class HeightDistribution:
    """Per-pixel probabilities over height bins ``(C_H, H, W)``."""

    probs: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        edges = np.asarray(self.bin_edges, dtype=np.float64).reshape(-1)
        if probs.ndim != 3 or probs.shape[0] + 1 != len(edges):
            raise ShapeMismatch("probs must be (C_H, H, W) with C_H + 1 bin edges")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be strictly ascending")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=0) - 1.0)) > 1e-6:
            raise ValueError("height probabilities must be non-negative and sum to 1 per pixel")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "bin_edges", edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


@dataclass(frozen=True)
class AttentionParams:
    phi: np.ndarray
    conv_weights: np.ndarray
    conv_bias: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        w = np.asarray(self.conv_weights, dtype=np.float64)
        b = np.asarray(self.conv_bias, dtype=np.float64).reshape(-1)
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ShapeMismatch("conv weights must be (C_e, C_in, 3, 3)")
        if phi.shape != (w.shape[0], w.shape[0]) or b.shape != (w.shape[0],):
            raise ShapeMismatch("phi must be (C_e, C_e) and bias (C_e,)")
        for arr in (phi, w, b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("attention parameters must be finite")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "conv_weights", w)
        object.__setattr__(self, "conv_bias", b)


def conv3x3(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, stride 1, zero padding 1. ``x`` is ``(C_in, H, W)``."""
    c_in, h, w = x.shape
    if weights.shape[1] != c_in:
        raise ShapeMismatch(f"kernel expects {weights.shape[1]} input channels, got {c_in}")
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.broadcast_to(bias[:, None, None], (weights.shape[0], h, w)).copy()
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("oc,chw->ohw", weights[:, :, dy, dx], padded[:, dy : dy + h, dx : dx + w])
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def channel_attention(f: FeatureMap, phi) -> FeatureMap:
    """Scale each channel by ``sigmoid(phi @ spatial_mean(f))``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (f.channels, f.channels):
        raise ShapeMismatch(f"phi must be {f.channels}x{f.channels}")
    scale = sigmoid(phi @ f.data.mean(axis=(1, 2)))
    return FeatureMap(scale[:, None, None] * f.data, f.stride)


def fuse_features(m_seg: MultiClassMask, f_context: FeatureMap, params: AttentionParams) -> FeatureMap:
    """Concatenate class scores and context, convolve to ``C_e`` channels, apply attention."""
    if m_seg.shape != f_context.spatial:
        raise ShapeMismatch(f"mask {m_seg.shape} vs context {f_context.spatial}")
    stacked = np.concatenate([m_seg.scores, f_context.data], axis=0)
    fused = conv3x3(stacked, params.conv_weights, params.conv_bias)
    return channel_attention(FeatureMap(fused, f_context.stride), params.phi)


def mask_features(f: FeatureMap, m_bin: BinaryForegroundMask) -> FeatureMap:
    bits = np.asarray(m_bin.bits, dtype=bool)
    if bits.shape != f.spatial:
        raise ShapeMismatch(f"mask {bits.shape} vs features {f.spatial}")
    return FeatureMap(f.data * bits[None], f.stride)


def suppress_background(
    m_seg: MultiClassMask,
    f_context: FeatureMap,
    params: AttentionParams,
    t_fg: float = DEFAULT_T_FG,
) -> FeatureMap:
    """Fused, attention-weighted features with background pixels zeroed."""
    return mask_features(fuse_features(m_seg, f_context, params), binary_foreground(m_seg, t_fg))


@dataclass(frozen=True)
class LiftedPoints:
    points: np.ndarray  # (N, 3) ego frame
    features: np.ndarray  # (N, C)
    pixel_index: np.ndarray  # (N, 2) feature-grid (row, col)
    bin_index: np.ndarray  # (N,)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.points)


def lift(f: FeatureMap, h: HeightDistribution, rig: CameraRig) -> LiftedPoints:
    """Place each feature pixel on its ray at every height-bin center.

    Each (pixel, bin) with positive probability yields one point carrying
    ``prob * feature``. Rays that never reach a bin plane are counted in
    ``dropped``. Points are ordered row-major over (row, col, bin).
    """
    if h.probs.shape[1:] != f.spatial:
        raise ShapeMismatch(f"height grid {h.probs.shape[1:]} vs features {f.spatial}")
    rows, cols = f.spatial
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    ii, jj = ii.reshape(-1), jj.reshape(-1)
    pixels = np.column_stack([(jj + 0.5) * f.stride, (ii + 0.5) * f.stride])
    points, valid = intersect_planes(rig, pixels, h.centers)  # (P, K, 3), (P, K)
    probs = h.probs.reshape(h.probs.shape[0], -1).T  # (P, K)
    positive = probs > 0
    keep = positive & valid
    dropped = int(np.count_nonzero(positive & ~valid))
    p_idx, k_idx = np.nonzero(keep)  # row-major over (pixel, bin)
    feats = f.data.reshape(f.channels, -1).T  # (P, C)
    return LiftedPoints(
        points=points[p_idx, k_idx],
        features=probs[p_idx, k_idx, None] * feats[p_idx],
        pixel_index=np.column_stack([ii[p_idx], jj[p_idx]]),
        bin_index=k_idx,
        dropped=dropped,
    )


def _grid_count(lo: float, hi: float, step: float) -> int:
    n = (hi - lo) / step
    if not step > 0 or not hi > lo or abs(n - round(n)) > 1e-9:
        raise ValueError(f"range [{lo}, {hi}] is not a whole number of {step} m voxels")
    return int(round(n))


@dataclass(frozen=True)
class GridConfig:
    x_range: tuple[float, float] = (-51.2, 51.2)
    y_range: tuple[float, float] = (0.0, 102.4)
    voxel_size: tuple[float, float] = (0.2, 0.2)

    def __post_init__(self):
        self.shape  # validates divisibility

    @property
    def shape(self) -> tuple[int, int]:
        return (
            _grid_count(self.x_range[0], self.x_range[1], self.voxel_size[0]),
            _grid_count(self.y_range[0], self.y_range[1], self.voxel_size[1]),
        )

    def cell_index(self, xy: np.ndarray) -> np.ndarray:
        """Flat cell index per point, -1 outside the grid."""
        nx, ny = self.shape
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.x_range[0]) / self.voxel_size[0])
        iy = np.floor((xy[:, 1] - self.y_range[0]) / self.voxel_size[1])
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        flat = np.full(len(xy), -1, dtype=np.int64)
        flat[inside] = ix[inside].astype(np.int64) * ny + iy[inside].astype(np.int64)
        return flat


@dataclass(frozen=True)
class BEVGrid:
    config: GridConfig
    cells: np.ndarray  # (X, Y, C)
    dropped: int = 0

    @property
    def x_range(self):
        return self.config.x_range

    @property
    def y_range(self):
        return self.config.y_range

    @property
    def voxel_size(self):
        return self.config.voxel_size


def voxel_pool(points: LiftedPoints, config: GridConfig | None = None) -> BEVGrid:
    """Sum lifted features into ground-plane cells, collapsing height.

    Accumulation follows point order with compensated summation, so the result
    is reproducible bit for bit on either kernel backend.
    """
    config = config or GridConfig()
    nx, ny = config.shape
    n_channels = points.features.shape[1] if points.features.ndim == 2 else 0
    cell = config.cell_index(points.points[:, :2]) if len(points) else np.zeros(0, np.int64)
    summed = kernels.scatter_add_compensated(
        cell, np.ascontiguousarray(points.features.reshape(len(cell), n_channels)), nx * ny
    )
    return BEVGrid(config, summed.reshape(nx, ny, n_channels), int(np.count_nonzero(cell < 0)))


# -- flat binary tensor files ----------------------------------------------------------

TENSOR_MAGIC = b"RGTN"
DTYPE_F32 = 1


class TensorFormatError(ValueError):
    pass


def write_tensor(path, array) -> None:
    """``magic | u32 rank | u32 dims[rank] | u32 dtype | f32 payload``, little-endian."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}II", arr.ndim, *arr.shape, DTYPE_F32)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    try:
        (rank,) = struct.unpack_from("<I", blob, 4)
        dims = struct.unpack_from(f"<{rank}I", blob, 8)
        (dtype,) = struct.unpack_from("<I", blob, 8 + 4 * rank)
    except struct.error as exc:
        raise TensorFormatError(f"{path}: truncated header") from exc
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"{path}: unsupported dtype code {dtype}")
    offset = 12 + 4 * rank
    n = math.prod(dims)
    if len(blob) - offset != 4 * n:
        raise TensorFormatError(f"{path}: payload has {len(blob) - offset} bytes, expected {4 * n}")
    return np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(dims).astype(np.float64)
