"""Pinhole cameras, rigid transforms and ray/ground-plane geometry.

Frame conventions
-----------------
Ego (ground) frame: right-handed, x right, y forward, z up; the ground is z = 0.
Camera frame: x right, y down, z along the optical axis.
Extrinsics map ego coordinates to camera coordinates: ``p_cam = R @ p_ego + t``.

Image coordinates are continuous with the pixel at (row i, col j) covering
``[j, j+1) x [i, i+1)``; its center is ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ORTHO_TOL = 1e-9
HEIGHT_TOL = 1e-6
DEPTH_EPS = 1e-9

DEFAULT_IMAGE_SIZE = (1536, 864)  # (width, height)


class GeometryError(ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class NoIntersection(GeometryError):
    pass


class CalibrationError(GeometryError):
    pass


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "skew"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise GeometryError(f"intrinsics.{name} must be finite")
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        # closed form for an upper-triangular K
        fx, fy, s, cx, cy = self.fx, self.fy, self.skew, self.cx, self.cy
        return np.array(
            [
                [1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
                [0.0, 1.0 / fy, -cy / fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_matrix(cls, k) -> "Intrinsics":
        k = np.asarray(k, dtype=np.float64).reshape(3, 3)
        if abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12:
            raise GeometryError("intrinsic matrix must be upper triangular")
        if abs(k[2, 2] - 1.0) > 1e-12:
            raise GeometryError("intrinsic matrix must have K[2, 2] == 1")
        return cls(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], skew=k[0, 1])

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics for an image resized by ``factor`` (corner convention)."""
        return Intrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor, self.skew * factor
        )


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid ego-to-camera transform."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = _frozen_array(self.rotation, (3, 3))
        trans = _frozen_array(self.translation, (3,))
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise GeometryError("extrinsics must be finite")
        err = np.max(np.abs(rot.T @ rot - np.eye(3)))
        if err >= ORTHO_TOL:
            raise GeometryError(f"rotation is not orthonormal (|R^T R - I| = {err:.3g})")
        if np.linalg.det(rot) <= 0:
            raise GeometryError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Extrinsics":
        m = np.asarray(m, dtype=np.float64)
        if m.size == 12:
            m = m.reshape(3, 4)
        elif m.size == 16:
            m = m.reshape(4, 4)[:3]
        else:
            raise GeometryError("extrinsics need 12 or 16 values")
        return cls(m[:, :3], m[:, 3])

    @property
    def matrix(self) -> np.ndarray:
        """3x4 ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    @property
    def homogeneous(self) -> np.ndarray:
        out = np.eye(4)
        out[:3] = self.matrix
        return out

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in the ego frame."""
        return -self.rotation.T @ self.translation

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Extrinsics") -> "Extrinsics":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Extrinsics(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Extrinsics":
        rt = self.rotation.T
        return Extrinsics(rt, -rt @ self.translation)

    def allclose(self, other: "Extrinsics", tol: float = 1e-9) -> bool:
        return bool(
            np.max(np.abs(self.rotation - other.rotation)) <= tol
            and np.max(np.abs(self.translation - other.translation)) <= tol
        )


def compose(first: Extrinsics, second: Extrinsics) -> Extrinsics:
    """Return ``first ∘ second`` (``second`` applied first)."""
    return first.compose(second)


def invert(transform):
    """Invert an :class:`Extrinsics` or an :class:`Intrinsics` matrix."""
    if isinstance(transform, Extrinsics):
        return transform.inverse()
    if isinstance(transform, Intrinsics):
        return transform.inverse_matrix
    raise TypeError(f"cannot invert {type(transform).__name__}")


@dataclass(frozen=True)
class CameraRig:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    install_height: float
    image_width: int = DEFAULT_IMAGE_SIZE[0]
    image_height: int = DEFAULT_IMAGE_SIZE[1]

    def __post_init__(self):
        height = float(self.install_height)
        object.__setattr__(self, "install_height", height)
        if not height > 0:
            raise GeometryError("install_height must be positive")
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise GeometryError("image dimensions must be positive")
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))
        cz = self.extrinsics.camera_center[2]
        if abs(cz - height) > HEIGHT_TOL:
            raise GeometryError(
                f"install_height {height} disagrees with camera origin height {cz}"
            )

    @property
    def image_size(self) -> tuple[int, int]:
        return self.image_width, self.image_height

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix ``K [R | t]``."""
        return self.intrinsics.matrix @ self.extrinsics.matrix

    @property
    def camera_center(self) -> np.ndarray:
        return self.extrinsics.camera_center

    def contains(self, pixel) -> bool:
        u, v = float(pixel[0]), float(pixel[1])
        return 0.0 <= u < self.image_width and 0.0 <= v < self.image_height

    def pixel_rays(self, pixels) -> np.ndarray:
        """Ego-frame ray directions (unnormalized) for ``(N, 2)`` pixels."""
        uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        homog = np.column_stack([uv, np.ones(len(uv))])
        cam_dirs = homog @ self.intrinsics.inverse_matrix.T
        return cam_dirs @ self.extrinsics.rotation  # R^T d, row-wise

    def allclose(self, other: "CameraRig", tol: float = 1e-9) -> bool:
        ki, ko = self.intrinsics.matrix, other.intrinsics.matrix
        return bool(
            self.image_size == other.image_size
            and np.max(np.abs(ki - ko)) <= tol
            and self.extrinsics.allclose(other.extrinsics, tol)
            and abs(self.install_height - other.install_height) <= tol
        )


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# camera axes for a level camera looking along ego +y
_LEVEL_EGO_TO_CAM = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def roadside_rotation(pitch: float, yaw: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Ego-to-camera rotation for a camera pitched down by ``pitch`` radians.

    ``yaw`` turns the viewing direction counter-clockwise about ego z
    (0 looks along +y); ``roll`` spins the camera about its optical axis.
    """
    roll_m = rotation_z(roll)  # camera z is the optical axis
    return roll_m @ rotation_x(pitch) @ _LEVEL_EGO_TO_CAM @ rotation_z(yaw).T


def make_rig(
    intrinsics: Intrinsics,
    install_height: float,
    pitch: float,
    yaw: float = 0.0,
    roll: float = 0.0,
    position_xy: tuple[float, float] = (0.0, 0.0),
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> CameraRig:
    """Build a roadside rig from a pose given in radians."""
    rot = roadside_rotation(pitch, yaw, roll)
    center = np.array([position_xy[0], position_xy[1], install_height], dtype=np.float64)
    return CameraRig(
        intrinsics=intrinsics,
        extrinsics=Extrinsics(rot, -rot @ center),
        install_height=install_height,
        image_width=image_size[0],
        image_height=image_size[1],
    )


def project(rig: CameraRig, point) -> tuple[np.ndarray, float]:
    """Project one ego-frame point; returns ``(pixel, depth)``."""
    p_cam = rig.extrinsics.apply(np.asarray(point, dtype=np.float64).reshape(3))
    depth = float(p_cam[2])
    if depth <= DEPTH_EPS:
        raise BehindCamera(f"point has camera depth {depth:.6g}")
    uvw = rig.intrinsics.matrix @ p_cam
    return uvw[:2] / uvw[2], depth


def project_points(rig: CameraRig, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of ``(N, 3)`` points.

    Returns ``(pixels, depth)``; pixels of points with non-positive depth
    are NaN instead of raising.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p_cam = rig.extrinsics.apply(pts)
    uvw = p_cam @ rig.intrinsics.matrix.T
    depth = p_cam[:, 2]
    pix = np.full((len(pts), 2), np.nan)
    ok = depth > DEPTH_EPS
    pix[ok] = uvw[ok, :2] / uvw[ok, 2:3]
    return pix, depth


def ray_ground_intersect(rig: CameraRig, pixel, height: float = 0.0) -> np.ndarray:
    """Intersect the ray through ``pixel`` with the plane ``z = height``."""
    points, valid = intersect_planes(rig, np.asarray(pixel, dtype=np.float64).reshape(1, 2), [height])
    if not valid[0, 0]:
        raise NoIntersection(f"ray through {tuple(pixel)} never reaches z = {height}")
    return points[0, 0]


def intersect_planes(rig: CameraRig, pixels, heights) -> tuple[np.ndarray, np.ndarray]:
    """Intersect rays of ``(N, 2)`` pixels with every plane ``z = h`` in ``heights``.

    Returns ``(points, valid)`` of shapes ``(N, M, 3)`` and ``(N, M)``. Invalid
    entries (ray parallel to the plane or hitting it behind the camera) hold NaN.
    The z coordinate of valid points is set to the requested height exactly.
    """
    dirs = rig.pixel_rays(pixels)
    hs = np.asarray(heights, dtype=np.float64).reshape(-1)
    center = rig.camera_center
    dz = dirs[:, 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (hs[None, :] - center[2]) / dz
    valid = (np.abs(dz) > 1e-12) & np.isfinite(s) & (s > 0)
    s = np.where(valid, s, np.nan)
    points = center[None, None, :] + s[:, :, None] * dirs[:, None, :]
    points[:, :, 2] = np.where(valid, hs[None, :], np.nan)
    return points, valid


# -- calibration files ------------------------------------------------------------------


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "intrinsics": [float(v) for v in rig.intrinsics.matrix.reshape(-1)],
        "extrinsics": [float(v) for v in rig.extrinsics.matrix.reshape(-1)],
        "install_height_m": float(rig.install_height),
        "image_size": [rig.image_width, rig.image_height],
    }


def rig_from_dict(data: dict) -> CameraRig:
    expected = {"intrinsics", "extrinsics", "install_height_m", "image_size"}
    missing = expected - set(data)
    if missing:
        raise CalibrationError(f"calibration missing keys: {sorted(missing)}")
    unknown = set(data) - expected
    if unknown:
        raise CalibrationError(f"calibration has unknown keys: {sorted(unknown)}")
    if len(data["intrinsics"]) != 9:
        raise CalibrationError("intrinsics must hold 9 row-major values")
    if len(data["extrinsics"]) != 12:
        raise CalibrationError("extrinsics must hold 12 row-major values")
    if len(data["image_size"]) != 2:
        raise CalibrationError("image_size must be [width, height]")
    try:
        width, height = (int(v) for v in data["image_size"])
        return CameraRig(
            intrinsics=Intrinsics.from_matrix(data["intrinsics"]),
            extrinsics=Extrinsics.from_matrix(data["extrinsics"]),
            install_height=float(data["install_height_m"]),
            image_width=width,
            image_height=height,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CalibrationError):
            raise
        raise CalibrationError(str(exc)) from exc


def write_calibration(path, rig: CameraRig) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=2) + "\n")


def read_calibration(path) -> CameraRig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CalibrationError(f"{path}: expected a mapping")
    return rig_from_dict(data)
