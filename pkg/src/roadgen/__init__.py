"""Scenario generalization toolkit for roadside monocular 3D detection.

Camera geometry, 3D labels, rectification onto a background camera,
instance compositing, background-suppressed BEV lifting and a multi-round
pseudo-labeling pipeline.
"""

__version__ = "0.1.0"

from .camgeom import CameraRig, Extrinsics, Intrinsics, make_rig, project, read_calibration, write_calibration
from .labels3d import Box2D, Box3D, LabelSet, Provenance, bev_iou, filter_by_conf, filter_by_iou, in_image_filter
from .rectify import Homography, RectifiedFrame, rectify_frame, rectify_labels, rotation_homography, warp_image
from .segmask import BinaryForegroundMask, InstanceMask, MultiClassMask, binary_foreground
from .composite import CompositeSample, compose, extract_background, plan_batches
from .bsmbev import FeatureMap, GridConfig, HeightDistribution, lift, suppress_background, voxel_pool
from .manifest import DatasetManifest, ManifestEntry, Split
from .config import Config, load_config
from .pipeline import RoundReport, RoundState, run_pipeline, run_round

__all__ = [name for name in dir() if not name.startswith("_")]
