"""Bring a source frame onto a background camera.

Step 1 re-renders the image as seen by a camera with the background's
orientation and intrinsics but the source's optical center; for a shared
center that is an exact rotation homography. Step 2 moves that camera to the
background's installation height, which for labels is a pure z shift.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .camgeom import CameraRig, Extrinsics
from .labels3d import LabelSet, in_image_filter


class Degenerate(ValueError):
    pass


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise Degenerate("homography has non-finite entries")
        if abs(m[2, 2]) < 1e-12:
            raise Degenerate("homography cannot be normalized (H[2, 2] == 0)")
        m = m / m[2, 2]
        m[2, 2] = 1.0
        if abs(np.linalg.det(m)) <= 1e-12:
            raise Degenerate("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def apply(self, pixels) -> np.ndarray:
        uv = np.asarray(pixels, dtype=np.float64)
        flat = uv.reshape(-1, 2)
        homog = np.column_stack([flat, np.ones(len(flat))]) @ self.matrix.T
        return (homog[:, :2] / homog[:, 2:3]).reshape(uv.shape)


@dataclass(frozen=True)
class RectifiedFrame:
    image: np.ndarray
    validity_mask: np.ndarray
    rig: CameraRig
    labels: LabelSet
    frame_id: str = ""

    def __post_init__(self):
        expected = (self.rig.image_height, self.rig.image_width)
        if self.image.shape[:2] != expected or self.validity_mask.shape != expected:
            raise ValueError(f"rectified image must be {expected}, got {self.image.shape[:2]}")


def rotation_homography(src: CameraRig, dst: CameraRig) -> Homography:
    """Pixel map ``K_dst R_dst R_src^T K_src^-1`` between two co-centred cameras."""
    if np.array_equal(src.extrinsics.rotation, dst.extrinsics.rotation) and np.array_equal(
        src.intrinsics.matrix, dst.intrinsics.matrix
    ):
        return Homography.identity()
    m = (
        dst.intrinsics.matrix
        @ dst.extrinsics.rotation
        @ src.extrinsics.rotation.T
        @ src.intrinsics.inverse_matrix
    )
    return Homography(m)


def interim_rig(src: CameraRig, bg: CameraRig) -> CameraRig:
    """Background orientation and intrinsics placed at the source camera's center."""
    rot = bg.extrinsics.rotation
    center = src.camera_center
    return CameraRig(
        intrinsics=bg.intrinsics,
        extrinsics=Extrinsics(rot, -rot @ center),
        install_height=src.install_height,
        image_width=bg.image_width,
        image_height=bg.image_height,
    )


def warp_image(
    image: np.ndarray,
    h: Homography,
    out_size: tuple[int, int],
    fill: float = 0,
    interpolation: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-warp ``image`` so that output pixel ``p`` samples ``H^-1 p``.

    ``out_size`` is ``(width, height)``. Returns the warped image (same dtype as
    the input) and a boolean validity mask that is False where the source
    position fell outside the input.
    """
    if not isinstance(h, Homography):
        h = Homography(h)
    arr = np.asarray(image)
    squeeze = arr.ndim == 2
    src = arr[:, :, None] if squeeze else arr
    hinv = np.linalg.inv(h.matrix)
    if not np.all(np.isfinite(hinv)):
        raise Degenerate("homography is not invertible")
    out_w, out_h = int(out_size[0]), int(out_size[1])
    if interpolation == "bilinear":
        kernel = kernels.warp_bilinear
    elif interpolation == "nearest":
        kernel = kernels.warp_nearest
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    out, valid = kernel(np.ascontiguousarray(src, dtype=np.float64), hinv, out_h, out_w, float(fill))
    if np.issubdtype(arr.dtype, np.integer):
        info = np.iinfo(arr.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    out = out.astype(arr.dtype)
    if squeeze:
        out = out[:, :, 0]
    return out, valid.astype(bool)


def rectify_labels(labels: LabelSet, h_src: float, h_bg: float) -> LabelSet:
    """Shift every box by ``h_bg - h_src`` in z; all other fields are untouched."""
    if not (h_src > 0 and h_bg > 0):
        raise ValueError("installation heights must be positive")
    dz = h_bg - h_src
    return labels.with_boxes(replace(b, z=b.z + dz) for b in labels.boxes)


def rectify_frame(
    image: np.ndarray,
    rig_src: CameraRig,
    labels: LabelSet,
    rig_bg: CameraRig,
    interpolation: str = "bilinear",
) -> RectifiedFrame:
    h = rotation_homography(rig_src, rig_bg)
    warped, valid = warp_image(image, h, rig_bg.image_size, interpolation=interpolation)
    moved = rectify_labels(labels, rig_src.install_height, rig_bg.install_height)
    return RectifiedFrame(
        image=warped,
        validity_mask=valid,
        rig=rig_bg,
        labels=in_image_filter(moved, rig_bg),
        frame_id=labels.frame_id,
    )
