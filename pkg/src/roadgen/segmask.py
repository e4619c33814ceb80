"""Class-score masks, instance masks and the box-prompted segmenter interface."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .imageio import read_mask, write_mask
from .labels3d import Box2D

DEFAULT_T_FG = 0.55
DEFAULT_STRIDE = 16


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MultiClassMask:
    """Per-pixel class scores ``(C_s, H, W)``; channel 0 is background."""

    scores: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        names = tuple(self.class_names)
        if scores.ndim != 3:
            raise MaskError("scores must be (C_s, H, W)")
        if scores.shape[0] < 2 or scores.shape[0] != len(names):
            raise MaskError("need at least 2 classes and one name per channel")
        if not (np.all(scores >= 0.0) and np.all(scores <= 1.0)):
            raise MaskError("class scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "class_names", names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape[1], self.scores.shape[2]


@dataclass(frozen=True)
class InstanceMask:
    bits: np.ndarray
    instance_id: int
    category: str

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise MaskError("instance mask must be 2-D")
        object.__setattr__(self, "bits", bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class BinaryForegroundMask:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))


@runtime_checkable
class Segmenter(Protocol):
    """Box-prompted instance segmenter.

    Implementations return one mask per prompt, each contained in its prompt box
    (up to 2 px of dilation). ``thread_safe`` tells the pipeline whether calls
    may run concurrently.
    """

    thread_safe: bool

    def segment_instances(
        self,
        image: np.ndarray,
        prompts: Sequence[Box2D],
        categories: Sequence[str] | None = None,
    ) -> list[InstanceMask]: ...


def box_pixels(box: Box2D, shape: tuple[int, int]) -> np.ndarray:
    """Boolean mask of pixels whose centers lie inside ``box``."""
    h, w = shape
    bits = np.zeros((h, w), dtype=bool)
    j0 = max(0, math.ceil(box.u_min - 0.5))
    j1 = min(w - 1, math.floor(box.u_max - 0.5))
    i0 = max(0, math.ceil(box.v_min - 0.5))
    i1 = min(h - 1, math.floor(box.v_max - 0.5))
    if j1 >= j0 and i1 >= i0:
        bits[i0 : i1 + 1, j0 : j1 + 1] = True
    return bits


@dataclass
class BoxFillSegmenter:
    """Stand-in segmenter: every mask is its prompt box filled."""

    thread_safe: bool = True

    def segment_instances(self, image, prompts, categories=None):
        shape = np.asarray(image).shape[:2]
        cats = list(categories) if categories is not None else ["vehicle"] * len(prompts)
        return [
            InstanceMask(box_pixels(box, shape), instance_id=k, category=cat)
            for k, (box, cat) in enumerate(zip(prompts, cats))
        ]


SEGMENTERS = {"boxfill": BoxFillSegmenter}


def segment_instances(segmenter: Segmenter, image, prompts, categories=None) -> list[InstanceMask]:
    return segmenter.segment_instances(image, list(prompts), categories)


def binary_foreground(m: MultiClassMask, t_fg: float = DEFAULT_T_FG) -> BinaryForegroundMask:
    """Union over the non-background channels of ``score > t_fg``."""
    if not 0.0 < t_fg < 1.0:
        raise MaskError("t_fg must lie in (0, 1)")
    return BinaryForegroundMask(np.any(m.scores[1:] > t_fg, axis=0))


def downsample_mask(mask, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Area-average ``stride x stride`` blocks and keep blocks more than half covered.

    Inputs whose sides are not multiples of ``stride`` are zero-padded at the
    bottom/right.
    """
    bits = np.asarray(mask, dtype=bool)
    if stride < 1:
        raise MaskError("stride must be >= 1")
    h, w = bits.shape
    ph, pw = -h % stride, -w % stride
    if ph or pw:
        bits = np.pad(bits, ((0, ph), (0, pw)))
    hh, ww = bits.shape[0] // stride, bits.shape[1] // stride
    counts = bits.reshape(hh, stride, ww, stride).sum(axis=(1, 3))
    # strict majority: exactly half covered stays background
    return 2 * counts > stride * stride


def rasterize_instances(
    masks: Sequence[InstanceMask],
    class_names: Sequence[str],
    shape: tuple[int, int] | None = None,
) -> MultiClassMask:
    """Binary class channels from instance masks; channel 0 is the complement."""
    names = tuple(class_names)
    if shape is None:
        if not masks:
            raise MaskError("shape is required when there are no instances")
        shape = masks[0].bits.shape
    scores = np.zeros((len(names),) + tuple(shape))
    index = {name: k for k, name in enumerate(names)}
    for m in masks:
        if m.bits.shape != tuple(shape):
            raise MaskError("instance mask dims differ from the target shape")
        if m.category not in index or index[m.category] == 0:
            raise MaskError(f"unknown foreground category {m.category!r}")
        scores[index[m.category]][m.bits] = 1.0
    scores[0] = 1.0 - np.any(scores[1:] > 0, axis=0)
    return MultiClassMask(scores, names)


def write_instance_masks(directory, masks: Sequence[InstanceMask], stem: str = "mask") -> Path:
    """Write one 0/255 PNG per instance plus ``<stem>_index.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for m in masks:
        name = f"{stem}_{m.instance_id:04d}.png"
        write_mask(directory / name, m.bits)
        index[str(m.instance_id)] = {"category": m.category, "file": name}
    index_path = directory / f"{stem}_index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index_path


def read_instance_masks(index_path) -> list[InstanceMask]:
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    out = []
    for key in sorted(index, key=int):
        entry = index[key]
        bits = read_mask(index_path.parent / entry["file"])
        out.append(InstanceMask(bits, int(key), entry["category"]))
    return out
