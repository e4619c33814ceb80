"""Empty-background extraction and instance compositing onto backgrounds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .camgeom import CameraRig
from .labels3d import Box3D, LabelSet, Provenance, bev_iou
from .rectify import RectifiedFrame
from .segmask import InstanceMask

logger = logging.getLogger(__name__)

MAX_INVALID_FRACTION = 0.10


class CompositeError(ValueError):
    pass


class TooFewFrames(CompositeError):
    pass


class RigMismatch(CompositeError):
    pass


@dataclass(frozen=True)
class BackgroundFrame:
    image: np.ndarray
    rig: CameraRig
    background_id: str = "bg"

    def __post_init__(self):
        expected = (self.rig.image_height, self.rig.image_width)
        if np.asarray(self.image).shape[:2] != expected:
            raise CompositeError(f"background image must be {expected}")


@dataclass(frozen=True)
class MaskedSource:
    """A rectified frame plus one instance mask per label, in label order."""

    frame: RectifiedFrame
    masks: tuple[InstanceMask, ...]

    def __post_init__(self):
        masks = tuple(self.masks)
        if len(masks) != len(self.frame.labels):
            raise CompositeError("need exactly one mask per rectified label")
        object.__setattr__(self, "masks", masks)


@dataclass(frozen=True)
class CompositeSample:
    image: np.ndarray
    rig: CameraRig
    labels: LabelSet
    combined_mask: np.ndarray
    source_frame_ids: tuple[str, ...]
    instance_masks: tuple[np.ndarray, ...] = ()
    rejected_iou: int = 0
    rejected_invalid: int = 0


@dataclass(frozen=True)
class CompositionPlan:
    frame_ids: tuple[str, ...]
    background_id: str | None = None


def extract_background(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel, per-channel temporal median of a static-camera stack.

    Even-sized stacks average the two middle samples; integer images round
    half to even.
    """
    if len(frames) < 3:
        raise TooFewFrames(f"need at least 3 frames, got {len(frames)}")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise CompositeError("all frames must share dimensions")
    stack = np.stack([np.asarray(f) for f in frames])
    dtype = stack.dtype
    med = np.median(stack.astype(np.float64), axis=0)
    if np.issubdtype(dtype, np.integer):
        return np.rint(med).astype(dtype)
    return med.astype(dtype)


def camera_distance(box: Box3D, rig: CameraRig) -> float:
    return float(np.linalg.norm(box.center - rig.camera_center))


def _feather_alpha(bits: np.ndarray) -> np.ndarray:
    """1 inside the mask, 0.5 on its inner boundary ring, 0 outside."""
    alpha = bits.astype(np.float64)
    padded = np.pad(bits, 1)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:] & bits
    )
    alpha[bits & ~interior] = 0.5
    return alpha


def compose(
    bg: BackgroundFrame,
    sources: Sequence[MaskedSource],
    t_iou: float = 0.25,
    max_instances: int = 32,
    feather: bool = False,
    frame_id: str = "composite",
) -> CompositeSample:
    """Paste masked instances from rectified frames onto an empty background.

    Candidates from all sources are ordered far-to-near from the camera and
    accepted greedily when their BEV IoU with every already accepted instance is
    below ``t_iou``; acceptance order is paste order, so nearer instances
    occlude farther ones. Instances whose mask covers more than 10% invalid
    (warp-fabricated) pixels are rejected, and only valid pixels are pasted.
    """
    for src in sources:
        if not src.frame.rig.allclose(bg.rig, 1e-9):
            raise RigMismatch(f"source {src.frame.frame_id!r} is not on the background rig")

    candidates = []
    rejected_invalid = 0
    for s_idx, src in enumerate(sources):
        valid = np.asarray(src.frame.validity_mask, dtype=bool)
        for box, mask in zip(src.frame.labels.boxes, src.masks):
            area = int(mask.bits.sum())
            bad = int((mask.bits & ~valid).sum())
            if area == 0 or bad > MAX_INVALID_FRACTION * area:
                rejected_invalid += 1
                continue
            candidates.append((camera_distance(box, bg.rig), s_idx, box, mask.bits & valid))
    # far to near; ties keep pooling order
    order = sorted(range(len(candidates)), key=lambda k: -candidates[k][0])

    image = np.array(bg.image, copy=True)
    combined = np.zeros(image.shape[:2], dtype=bool)
    accepted: list[Box3D] = []
    pasted: list[np.ndarray] = []
    used_sources: list[str] = []
    rejected_iou = 0
    for k in order:
        if len(accepted) >= max_instances:
            break
        _, s_idx, box, bits = candidates[k]
        if any(bev_iou(box, other) >= t_iou for other in accepted):
            rejected_iou += 1
            continue
        src_img = sources[s_idx].frame.image
        if feather:
            alpha = _feather_alpha(bits)
            if image.ndim == 3:
                alpha = alpha[:, :, None]
            mixed = alpha * src_img + (1.0 - alpha) * image
            if np.issubdtype(image.dtype, np.integer):
                mixed = np.rint(mixed)
            image = np.where(alpha > 0, mixed, image).astype(bg.image.dtype)
        else:
            image[bits] = src_img[bits]
        combined |= bits
        accepted.append(box)
        pasted.append(bits)
        fid = sources[s_idx].frame.frame_id
        if fid not in used_sources:
            used_sources.append(fid)

    labels = LabelSet(frame_id, tuple(accepted), Provenance.SYNTHETIC)
    return CompositeSample(
        image=image,
        rig=bg.rig,
        labels=labels,
        combined_mask=combined,
        source_frame_ids=tuple(used_sources),
        instance_masks=tuple(pasted),
        rejected_iou=rejected_iou,
        rejected_invalid=rejected_invalid,
    )


def plan_batches(
    candidates: Mapping[str, LabelSet] | Sequence[LabelSet],
    batch_size: int,
    seed: int = 0,
    backgrounds: Sequence[str] | None = None,
) -> list[CompositionPlan]:
    """Shuffle frames with candidates (seeded) and cut them into batches.

    Frames without boxes are skipped. Each frame lands in exactly one plan, so
    every candidate instance is used at most once. When ``backgrounds`` is
    given each plan is assigned one of them at random (seeded).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(candidates, Mapping):
        items = [(fid, ls) for fid, ls in candidates.items()]
    else:
        items = [(ls.frame_id, ls) for ls in candidates]
    frame_ids = sorted(fid for fid, ls in items if len(ls) > 0)
    rng = np.random.default_rng(seed)
    shuffled = [frame_ids[k] for k in rng.permutation(len(frame_ids))]
    plans = []
    for start in range(0, len(shuffled), batch_size):
        bg_id = None
        if backgrounds:
            bg_id = backgrounds[int(rng.integers(len(backgrounds)))]
        plans.append(CompositionPlan(tuple(shuffled[start : start + batch_size]), bg_id))
    return plans
