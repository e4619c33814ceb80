"""Top-down label plots and image overlays for quick visual checks.

Ground truth is drawn black. Predictions are green when they match a ground
truth box of the same category (BEV IoU at or above the match threshold) and
red otherwise; without ground truth every prediction is green.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

from .camgeom import CameraRig, project_points  # noqa: E402
from .labels3d import LabelSet, bev_iou  # noqa: E402

GT_COLOR = (0, 0, 0)
MATCH_COLOR = (0, 160, 0)
MISS_COLOR = (220, 0, 0)

# cuboid edges over Box3D.corners() ordering: bottom ring 0-3, top ring 4-7
_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]


def match_predictions(pred: LabelSet, gt: LabelSet, min_iou: float = 0.5) -> list[bool]:
    """Greedy one-to-one matching, highest confidence first."""
    order = sorted(range(len(pred.boxes)), key=lambda k: -pred.boxes[k].conf)
    taken: set[int] = set()
    matched = [False] * len(pred.boxes)
    for k in order:
        p = pred.boxes[k]
        best, best_iou = None, min_iou
        for g, box in enumerate(gt.boxes):
            if g in taken or box.category != p.category:
                continue
            iou = bev_iou(p, box)
            if iou >= best_iou:
                best, best_iou = g, iou
        if best is not None:
            taken.add(best)
            matched[k] = True
    return matched


def _pred_colors(pred: LabelSet, matches):
    if matches is None:
        return [MATCH_COLOR] * len(pred.boxes)
    return [MATCH_COLOR if m else MISS_COLOR for m in matches]


def _rgb(c):
    return tuple(v / 255.0 for v in c)


def plot_bev(
    path,
    pred: LabelSet,
    rig: CameraRig,
    gt: LabelSet | None = None,
    matches=None,
    x_range=(-51.2, 51.2),
    y_range=(0.0, 102.4),
) -> Path:
    """Write a bird's-eye-view PNG; output bytes depend only on the inputs."""
    fig, ax = plt.subplots(figsize=(6, 6), dpi=100)
    ax.set_xlim(*x_range)
    ax.set_ylim(*y_range)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.grid(True, linewidth=0.3)
    cam = rig.camera_center
    ax.plot([cam[0]], [cam[1]], marker="^", color="tab:blue", markersize=8)
    if gt is not None:
        for box in gt.boxes:
            fp = np.vstack([box.footprint(), box.footprint()[:1]])
            ax.plot(fp[:, 0], fp[:, 1], color=_rgb(GT_COLOR), linewidth=1.2)
    for box, color in zip(pred.boxes, _pred_colors(pred, matches)):
        fp = np.vstack([box.footprint(), box.footprint()[:1]])
        ax.plot(fp[:, 0], fp[:, 1], color=_rgb(color), linewidth=1.0)
        # heading tick from center to the front edge midpoint
        front = (fp[0] + fp[3]) / 2.0
        ax.plot([box.x, front[0]], [box.y, front[1]], color=_rgb(color), linewidth=0.8)
    ax.set_title(f"{pred.frame_id}: {len(pred.boxes)} boxes")
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _draw_cuboids(draw: ImageDraw.ImageDraw, labels: LabelSet, rig: CameraRig, colors) -> None:
    for box, color in zip(labels.boxes, colors):
        pix, depth = project_points(rig, box.corners())
        if np.any(~(depth > 1e-6)):
            continue
        for a, b in _EDGES:
            draw.line([tuple(pix[a]), tuple(pix[b])], fill=color, width=1)


def overlay_image(
    path, image: np.ndarray, pred: LabelSet, rig: CameraRig, gt: LabelSet | None = None, matches=None
) -> Path:
    """Draw projected cuboid wireframes on a copy of ``image``."""
    canvas = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    if gt is not None:
        _draw_cuboids(draw, gt, rig, [GT_COLOR] * len(gt.boxes))
    _draw_cuboids(draw, pred, rig, _pred_colors(pred, matches))
    path = Path(path)
    canvas.save(path, format="PNG")
    return path
