"""Deterministic synthetic roadside scenes for tests, demos and the desk fixture.

Backgrounds are ray-cast road planes; objects are cuboids rendered as filled
convex hulls of their projected corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camgeom import CameraRig, Intrinsics, intersect_planes, make_rig, project_points, write_calibration
from .composite import extract_background
from .imageio import write_image
from .labels3d import Box3D, LabelSet, bev_iou, in_image_filter, write_labels
from .manifest import DatasetManifest, ManifestEntry, Split

FIXTURE_IMAGE_SIZE = (384, 216)

# (h, w, l) in meters
CATEGORY_SIZES = {
    "car": (1.5, 1.8, 4.5),
    "pedestrian": (1.7, 0.6, 0.6),
    "cyclist": (1.6, 0.6, 1.7),
}


def random_rig(rng: np.random.Generator, image_size=FIXTURE_IMAGE_SIZE) -> CameraRig:
    """A plausible roadside rig: 8-16 deg pitch, 4.5-7.5 m mast, small yaw/roll."""
    width, height = image_size
    focal = width * rng.uniform(0.6, 0.8)
    intr = Intrinsics(focal, focal, width / 2.0, height / 2.0)
    return make_rig(
        intr,
        install_height=rng.uniform(4.5, 7.5),
        pitch=math.radians(rng.uniform(8.0, 16.0)),
        yaw=math.radians(rng.uniform(-6.0, 6.0)),
        roll=math.radians(rng.uniform(-2.0, 2.0)),
        image_size=image_size,
    )


def render_background(rig: CameraRig, seed: int = 0) -> np.ndarray:
    """Road plane with lane stripes and a sky gradient, seen from ``rig``."""
    w, h = rig.image_size
    rng = np.random.default_rng(seed)
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.column_stack([jj.reshape(-1), ii.reshape(-1)])
    pts, valid = intersect_planes(rig, pix, [0.0])
    pts, valid = pts[:, 0], valid[:, 0]
    img = np.zeros((h * w, 3))
    sky = np.clip(ii.reshape(-1) / h, 0, 1)[:, None]
    img[:] = (1 - sky) * np.array([120.0, 160.0, 220.0]) + sky * np.array([200.0, 215.0, 235.0])
    ground = valid & (np.hypot(pts[:, 0], pts[:, 1]) < 400)
    g = pts[ground]
    tint = rng.uniform(-15, 15, size=3)
    base = np.array([95.0, 95.0, 100.0]) + tint
    stripe = (np.abs(np.mod(g[:, 0] + 1.75, 3.5) - 1.75) > 1.6) & (np.mod(g[:, 1], 6.0) < 3.0)
    curb = np.abs(g[:, 0]) > 11.0
    col = np.tile(base, (len(g), 1))
    col[curb] = np.array([90.0, 130.0, 80.0]) + tint
    col[stripe & ~curb] = 235.0
    # mild ground texture so warps are not trivially constant
    col += 6.0 * np.sin(g[:, :1] * 1.3) * np.cos(g[:, 1:2] * 0.9)
    img[ground] = col
    return np.clip(np.rint(img), 0, 255).astype(np.uint8).reshape(h, w, 3)


def cuboid_hull(box: Box3D, rig: CameraRig) -> np.ndarray | None:
    """Convex hull (counter-clockwise) of the projected corners, or None if any is behind."""
    pix, depth = project_points(rig, box.corners())
    if np.any(depth <= 1e-6):
        return None
    pts = sorted(map(tuple, pix))

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                (ax, ay), (bx, by) = out[-2], out[-1]
                if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def render_mask(box: Box3D, rig: CameraRig) -> np.ndarray:
    """Pixels whose centers fall inside the cuboid's projected (convex) hull."""
    w, h = rig.image_size
    mask = np.zeros((h, w), dtype=bool)
    hull = cuboid_hull(box, rig)
    if hull is None or len(hull) < 3:
        return mask
    j0, i0 = (max(int(np.floor(v)) - 1, 0) for v in hull.min(axis=0))
    j1, i1 = min(int(np.ceil(hull[:, 0].max())) + 1, w), min(int(np.ceil(hull[:, 1].max())) + 1, h)
    if j1 <= j0 or i1 <= i0:
        return mask
    jj, ii = np.meshgrid(np.arange(j0, j1) + 0.5, np.arange(i0, i1) + 0.5)
    inside = np.ones(jj.shape, dtype=bool)
    for (ax, ay), (bx, by) in zip(hull, np.roll(hull, -1, axis=0)):
        inside &= (bx - ax) * (ii - ay) - (by - ay) * (jj - ax) >= 0
    mask[i0:i1, j0:j1] = inside
    return mask


def render_objects(background: np.ndarray, boxes, rig: CameraRig, colors) -> np.ndarray:
    """Paint cuboids far-to-near onto a copy of ``background``."""
    img = background.copy()
    center = rig.camera_center
    order = sorted(range(len(boxes)), key=lambda k: -np.linalg.norm(boxes[k].center - center))
    for k in order:
        mask = render_mask(boxes[k], rig)
        img[mask] = colors[k]
    return img


def random_boxes(
    rng: np.random.Generator,
    rig: CameraRig,
    n: int,
    categories=("car", "car", "car", "pedestrian", "cyclist"),
    max_tries: int = 200,
) -> list[Box3D]:
    """Non-overlapping, fully visible ground objects in view of ``rig``."""
    boxes: list[Box3D] = []
    forward = rig.extrinsics.rotation[2]  # optical axis in ego frame
    heading = math.atan2(forward[1], forward[0])
    for _ in range(max_tries):
        if len(boxes) >= n:
            break
        cat = categories[int(rng.integers(len(categories)))]
        h, w, l = CATEGORY_SIZES[cat]
        dist = rng.uniform(12.0, 45.0)
        lateral = rng.uniform(-8.0, 8.0)
        x = dist * math.cos(heading) - lateral * math.sin(heading)
        y = dist * math.sin(heading) + lateral * math.cos(heading)
        yaw = rng.choice([math.pi / 2, -math.pi / 2]) + rng.uniform(-0.3, 0.3)
        box = Box3D(x, y, h / 2.0, h, w, l, yaw=yaw, conf=1.0, category=cat)
        hull = cuboid_hull(box, rig)
        if hull is None:
            continue
        if hull[:, 0].min() < 2 or hull[:, 1].min() < 2:
            continue
        if hull[:, 0].max() > rig.image_width - 2 or hull[:, 1].max() > rig.image_height - 2:
            continue
        if any(bev_iou(box, b) > 0 or np.hypot(box.x - b.x, box.y - b.y) < 2.0 for b in boxes):
            continue
        boxes.append(box)
    return boxes


@dataclass
class SyntheticFrame:
    frame_id: str
    image: np.ndarray
    labels: LabelSet


@dataclass
class SyntheticScene:
    scene_id: str
    rig: CameraRig
    background: np.ndarray
    frames: list[SyntheticFrame]


def _colors(rng, n):
    return [tuple(int(c) for c in rng.integers(30, 255, size=3)) for _ in range(n)]


def make_scene(
    scene_id: str,
    n_frames: int,
    seed: int,
    image_size=FIXTURE_IMAGE_SIZE,
    objects_per_frame: tuple[int, int] = (2, 5),
    rig: CameraRig | None = None,
) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    rig = rig or random_rig(rng, image_size)
    background = render_background(rig, seed)
    frames = []
    for k in range(n_frames):
        fid = f"{scene_id}_{k:04d}"
        boxes = random_boxes(rng, rig, int(rng.integers(objects_per_frame[0], objects_per_frame[1] + 1)))
        img = render_objects(background, boxes, rig, _colors(rng, len(boxes)))
        labels = in_image_filter(LabelSet(fid, tuple(boxes)), rig)
        frames.append(SyntheticFrame(fid, img, labels))
    return SyntheticScene(scene_id, rig, background, frames)


def transient_stack(scene: SyntheticScene, n_frames: int = 30, seed: int = 0) -> list[np.ndarray]:
    """Frames of the empty scene with one passing object each (few overlaps)."""
    rng = np.random.default_rng(seed)
    stack = []
    for _ in range(n_frames):
        boxes = random_boxes(rng, scene.rig, 1)
        stack.append(render_objects(scene.background, boxes, scene.rig, _colors(rng, len(boxes))))
    return stack


def write_fixture(
    root,
    n_scenes: int = 3,
    frames_per_scene: int = 20,
    labeled_scenes: int = 1,
    validation_per_scene: int = 4,
    image_size=FIXTURE_IMAGE_SIZE,
    seed: int = 0,
    background_stack: int = 30,
) -> DatasetManifest:
    """Write a small multi-scene dataset and its manifest under ``root``.

    The first ``labeled_scenes`` scenes supply labeled frames, the rest are
    unlabeled; every scene holds out ``validation_per_scene`` frames and gets
    one empty background extracted from a transient stack. Ground truth for all
    frames goes to ``gt/`` for oracle detectors.
    """
    root = Path(root)
    for sub in ("images", "calib", "labels", "gt", "backgrounds"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(root=root)
    for s in range(n_scenes):
        scene_id = f"scene{s}"
        scene = make_scene(scene_id, frames_per_scene, seed=seed * 1000 + s, image_size=image_size)
        calib = f"calib/{scene_id}.json"
        write_calibration(root / calib, scene.rig)
        for k, frame in enumerate(scene.frames):
            image = f"images/{frame.frame_id}.png"
            write_image(root / image, frame.image)
            write_labels(root / "gt" / f"{frame.frame_id}.txt", frame.labels)
            if k >= frames_per_scene - validation_per_scene:
                split, label = Split.VALIDATION, f"gt/{frame.frame_id}.txt"
            elif s < labeled_scenes:
                split, label = Split.LABELED, f"labels/{frame.frame_id}.txt"
                write_labels(root / label, frame.labels)
            else:
                split, label = Split.UNLABELED, None
            manifest.append(ManifestEntry(frame.frame_id, image, calib, split, scene_id, label))
        bg = extract_background(transient_stack(scene, background_stack, seed=seed * 1000 + s + 7))
        bg_path = f"backgrounds/{scene_id}_bg.png"
        write_image(root / bg_path, bg)
        manifest.append(ManifestEntry(f"{scene_id}_bg", bg_path, calib, Split.BACKGROUND, scene_id))
    manifest.write(root / "manifest.jsonl")
    return manifest
