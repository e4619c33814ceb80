"""3D boxes, label sets, filtering, rotated BEV IoU and KITTI-style label files."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .camgeom import CameraRig, project_points, DEPTH_EPS

KNOWN_CATEGORIES = (
    "vehicle",
    "pedestrian",
    "cyclist",
    "car",
    "van",
    "truck",
    "bus",
    "big_vehicle",
    "motorcyclist",
    "tricyclist",
    "barrow",
)

_CATEGORY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class Provenance(str, enum.Enum):
    MANUAL = "manual"
    PSEUDO = "pseudo"
    SYNTHETIC = "synthetic"


class LabelError(ValueError):
    pass


class NotVisible(LabelError):
    pass


class ParseError(LabelError):
    def __init__(self, path, line: int, column: int, message: str):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = path
        self.line = line
        self.column = column


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into ``(-pi, pi]``; values already in range are returned unchanged."""
    yaw = float(yaw)
    if -math.pi < yaw <= math.pi:
        return yaw
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Box3D:
    """Cuboid in the ego frame; ``(x, y, z)`` is the geometric center.

    ``l`` runs along the heading, ``w`` across it, ``h`` vertically. ``yaw`` is
    the heading measured counter-clockwise from ego +x.
    """

    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    yaw: float = 0.0
    conf: float = 1.0
    category: str = "vehicle"

    def __post_init__(self):
        for name in ("x", "y", "z", "h", "w", "l", "yaw", "conf"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise LabelError(f"box field {name} must be finite")
            object.__setattr__(self, name, value)
        if min(self.h, self.w, self.l) <= 0:
            raise LabelError("box dimensions must be positive")
        if not 0.0 <= self.conf <= 1.0:
            raise LabelError(f"conf {self.conf} outside [0, 1]")
        if not isinstance(self.category, str) or not _CATEGORY_RE.match(self.category):
            raise LabelError(f"category {self.category!r} must be lower-case ASCII")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def footprint(self) -> np.ndarray:
        """Ground-plane corners ``(4, 2)`` in counter-clockwise order."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def corners(self) -> np.ndarray:
        """The 8 cuboid corners ``(8, 3)``: bottom face then top face."""
        fp = self.footprint()
        bottom = np.column_stack([fp, np.full(4, self.z - self.h / 2.0)])
        top = np.column_stack([fp, np.full(4, self.z + self.h / 2.0)])
        return np.vstack([bottom, top])


@dataclass(frozen=True)
class LabelSet:
    frame_id: str
    boxes: tuple[Box3D, ...] = ()
    provenance: Provenance = Provenance.MANUAL

    def __post_init__(self):
        if not self.frame_id:
            raise LabelError("frame_id must be non-empty")
        boxes = tuple(self.boxes)
        for box in boxes:
            if not isinstance(box, Box3D):
                raise LabelError("LabelSet boxes must be Box3D instances")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def with_boxes(self, boxes: Iterable[Box3D], provenance: Provenance | None = None) -> "LabelSet":
        return LabelSet(self.frame_id, tuple(boxes), provenance or self.provenance)


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image box in continuous pixel coordinates."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    @property
    def width(self) -> float:
        return max(0.0, self.u_max - self.u_min)

    @property
    def height(self) -> float:
        return max(0.0, self.v_max - self.v_min)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0

    def iou(self, other: "Box2D") -> float:
        iw = min(self.u_max, other.u_max) - max(self.u_min, other.u_min)
        ih = min(self.v_max, other.v_max) - max(self.v_min, other.v_min)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)


# -- filtering ---------------------------------------------------------------------------


def filter_by_conf(labels: LabelSet, t_conf: float = 0.7) -> LabelSet:
    """Keep boxes with ``conf > t_conf`` (strict); marks the result as pseudo labels."""
    if not 0.0 <= t_conf <= 1.0:
        raise LabelError("t_conf must lie in [0, 1]")
    kept = [b for b in labels.boxes if b.conf > t_conf]
    return labels.with_boxes(kept, Provenance.PSEUDO)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by a counter-clockwise convex ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_edge_cross(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_edge_cross(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _edge_cross(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU of the two ground footprints."""
    fa, fb = a.footprint(), b.footprint()
    if np.max(np.abs(fa - fb)) <= 1e-9:
        return 1.0
    # circumscribed circles disjoint -> no overlap
    ra = math.hypot(a.l, a.w) / 2.0
    rb = math.hypot(b.l, b.w) / 2.0
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    inter = abs(_polygon_area(clip_convex(fa, fb)))
    union = a.l * a.w + b.l * b.w - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def pairwise_bev_iou(boxes: Sequence[Box3D]) -> np.ndarray:
    n = len(boxes)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = bev_iou(boxes[i], boxes[j])
    return out


def filter_by_iou(labels: LabelSet, t_iou: float = 0.25) -> LabelSet:
    """Keep boxes whose BEV IoU with every other box is below ``t_iou``.

    Both members of a colliding pair are dropped.
    """
    if not 0.0 <= t_iou <= 1.0:
        raise LabelError("t_iou must lie in [0, 1]")
    boxes = labels.boxes
    ious = pairwise_bev_iou(boxes)
    np.fill_diagonal(ious, 0.0)
    keep = [b for i, b in enumerate(boxes) if not np.any(ious[i] >= t_iou)]
    return labels.with_boxes(keep)


# -- image-space helpers -----------------------------------------------------------------


def project_box_2d(box: Box3D, rig: CameraRig) -> Box2D:
    """Axis-aligned hull of the projected in-front corners, clipped to the image."""
    pix, depth = project_points(rig, box.corners())
    front = depth > DEPTH_EPS
    if not np.any(front):
        raise NotVisible("all corners are behind the camera")
    pts = pix[front]
    u0 = min(max(float(pts[:, 0].min()), 0.0), rig.image_width)
    u1 = min(max(float(pts[:, 0].max()), 0.0), rig.image_width)
    v0 = min(max(float(pts[:, 1].min()), 0.0), rig.image_height)
    v1 = min(max(float(pts[:, 1].max()), 0.0), rig.image_height)
    if u1 <= u0 or v1 <= v0:
        raise NotVisible("projected box has no area inside the image")
    return Box2D(u0, v0, u1, v1)


def is_in_image(box: Box3D, rig: CameraRig) -> bool:
    try:
        project_box_2d(box, rig)
    except NotVisible:
        return False
    pix, depth = project_points(rig, box.center[None, :])
    return bool(depth[0] > DEPTH_EPS and rig.contains(pix[0]))


def in_image_filter(labels: LabelSet, rig: CameraRig) -> LabelSet:
    """Keep boxes that project into the image with their 3D center inside it."""
    return labels.with_boxes(b for b in labels.boxes if is_in_image(b, rig))


# -- KITTI-style label files ---------------------------------------------------------------

# type, truncation, occlusion, alpha, bbox(4), h, w, l, x, y, z, rotation_y, score
N_COLUMNS = 16


def format_box(box: Box3D, box2d: Box2D | None = None) -> str:
    bbox = (-1.0, -1.0, -1.0, -1.0) if box2d is None else (
        box2d.u_min, box2d.v_min, box2d.u_max, box2d.v_max
    )
    values = [-1.0, -1.0, -1.0, *bbox, box.h, box.w, box.l, box.x, box.y, box.z, box.yaw, box.conf]
    return " ".join([box.category] + [repr(float(v)) for v in values])


def write_labels(path, labels: LabelSet) -> None:
    text = "".join(format_box(b) + "\n" for b in labels.boxes)
    Path(path).write_text(text)


def parse_labels(
    text: str,
    frame_id: str,
    provenance: Provenance = Provenance.MANUAL,
    source="<string>",
) -> LabelSet:
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (N_COLUMNS - 1, N_COLUMNS):
            raise ParseError(source, lineno, 1, f"expected {N_COLUMNS} columns, got {len(fields)}")
        values = []
        for col, tok in enumerate(fields[1:], start=2):
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(source, lineno, col, f"not a number: {tok!r}") from None
        score = values[14] if len(values) == N_COLUMNS - 1 else 1.0
        try:
            boxes.append(
                Box3D(
                    x=values[10], y=values[11], z=values[12],
                    h=values[7], w=values[8], l=values[9],
                    yaw=values[13], conf=score, category=fields[0],
                )
            )
        except LabelError as exc:
            raise ParseError(source, lineno, 1, str(exc)) from None
    return LabelSet(frame_id, tuple(boxes), provenance)


def read_labels(path, frame_id: str | None = None, provenance: Provenance = Provenance.MANUAL) -> LabelSet:
    """Read a label file; ``frame_id`` defaults to the file stem."""
    path = Path(path)
    return parse_labels(path.read_text(), frame_id or path.stem, provenance, source=path)


def shift_boxes(boxes: Iterable[Box3D], dz: float) -> list[Box3D]:
    return [replace(b, z=b.z + dz) for b in boxes]
