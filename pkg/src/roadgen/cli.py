"""Command-line entry point: ``roadgen <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bsmbev import (
    FeatureMap,
    GridConfig,
    HeightDistribution,
    lift,
    mask_features,
    read_tensor,
    uniform_bin_edges,
    voxel_pool,
    write_tensor,
)
from .camgeom import GeometryError, read_calibration, write_calibration
from .composite import BackgroundFrame, CompositeError, MaskedSource, compose, extract_background, plan_batches
from .config import Config, ConfigError, dump_config, load_config
from .imageio import read_image, write_image, write_mask
from .labels3d import LabelError, LabelSet, project_box_2d, read_labels, write_labels
from .manifest import ManifestError, read_manifest
from .pipeline import PipelineError, make_detector, pseudo_label, run_pipeline
from .rectify import Degenerate, rectify_frame
from .segmask import SEGMENTERS, MaskError, MultiClassMask, binary_foreground

logger = logging.getLogger("roadgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DATA_ERRORS = (
    OSError,
    ConfigError,
    GeometryError,
    LabelError,
    ManifestError,
    MaskError,
    CompositeError,
    Degenerate,
    PipelineError,
    ValueError,
    KeyError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--t-conf", type=float, dest="t_conf")
    p.add_argument("--t-iou", type=float, dest="t_iou")
    p.add_argument("--t-fg", type=float, dest="t_fg")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roadgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"roadgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rectify", help="warp a frame and its labels onto a background camera")
    _common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--bg-calib", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--nearest", action="store_true", help="nearest-neighbour sampling")

    p = sub.add_parser("background", help="temporal-median empty background")
    _common(p)
    p.add_argument("--frames", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("composite", help="paste instances from a plan file onto its background")
    _common(p)
    p.add_argument("--plan", type=Path, required=True, help="JSON composition plan")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--feather", action="store_true")

    p = sub.add_parser("pseudo", help="pseudo-label the unlabeled frames of a manifest")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="directory for label files")
    p.add_argument("--detector", default=None)
    p.add_argument("--gt-dir", type=Path, default=None, help="ground truth for mock detectors")

    p = sub.add_parser("bev", help="lift a feature map into a BEV grid")
    _common(p)
    p.add_argument("--features", type=Path, required=True, help="C x H x W tensor file")
    p.add_argument("--heights", type=Path, required=True, help="C_H x H x W tensor file")
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--seg", type=Path, help="C_s x H x W class-score tensor for background suppression")
    p.add_argument("--stride", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("pipeline", help="run the multi-round self-training loop")
    _common(p)

    p = sub.add_parser("viz", help="top-down plot of labels (optional image overlay)")
    _common(p)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--gt", type=Path, help="ground-truth labels; predictions get colored by match")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image", type=Path, help="camera image for an overlay")
    p.add_argument("--overlay-out", type=Path)
    p.add_argument("--match-iou", type=float, default=0.5)

    p = sub.add_parser("make-fixture", help="write a synthetic multi-scene dataset and config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    for key in ("seed", "rounds", "t_conf", "t_iou", "t_fg"):
        value = getattr(args, key, None)
        if value is None:
            continue
        try:
            cfg = cfg.with_overrides(**{key: value})
        except ConfigError as exc:
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"roadgen {args.command}: argument {flag}: {exc}") from exc
    return cfg


def cmd_rectify(args, cfg: Config) -> int:
    image = read_image(args.image)
    rig = read_calibration(args.calib)
    bg_rig = read_calibration(args.bg_calib)
    labels = read_labels(args.labels)
    interp = "nearest" if args.nearest else cfg.pipeline.interpolation
    frame = rectify_frame(image, rig, labels, bg_rig, interp)
    args.out.mkdir(parents=True, exist_ok=True)
    write_image(args.out / "rectified.png", frame.image)
    write_mask(args.out / "validity.png", frame.validity_mask)
    write_labels(args.out / "labels.txt", frame.labels)
    write_calibration(args.out / "calib.json", frame.rig)
    print(json.dumps({"labels_in": len(labels), "labels_out": len(frame.labels)}))
    return EXIT_OK


def cmd_background(args, cfg: Config) -> int:
    frames = [read_image(p) for p in args.frames]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_image(args.out, extract_background(frames))
    return EXIT_OK


def _plan_path(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def cmd_composite(args, cfg: Config) -> int:
    """Plan file keys: background{image, calib}, sources[{image, calib, labels, frame_id?}],
    optional t_iou, max_instances, batch_size, name."""
    plan = json.loads(args.plan.read_text())
    base = args.plan.parent
    unknown = set(plan) - {"background", "sources", "t_iou", "max_instances", "batch_size", "name"}
    if unknown:
        raise ValueError(f"plan has unknown keys: {sorted(unknown)}")
    bg_rig = read_calibration(_plan_path(base, plan["background"]["calib"]))
    bg = BackgroundFrame(read_image(_plan_path(base, plan["background"]["image"])), bg_rig, "background")
    segmenter = SEGMENTERS[cfg.plugins.segmenter]()
    sources = {}
    for item in plan["sources"]:
        labels_path = _plan_path(base, item["labels"])
        labels = read_labels(labels_path, item.get("frame_id"))
        frame = rectify_frame(
            read_image(_plan_path(base, item["image"])),
            read_calibration(_plan_path(base, item["calib"])),
            labels,
            bg_rig,
            cfg.pipeline.interpolation,
        )
        prompts = [project_box_2d(b, bg_rig) for b in frame.labels]
        masks = segmenter.segment_instances(frame.image, prompts, [b.category for b in frame.labels])
        sources[labels.frame_id] = MaskedSource(frame, tuple(masks))
    t_iou = float(plan.get("t_iou", cfg.thresholds.t_iou))
    max_instances = int(plan.get("max_instances", cfg.pipeline.max_instances))
    batch = int(plan.get("batch_size", max(1, len(sources))))
    name = plan.get("name", args.plan.stem)
    groups = plan_batches({k: s.frame.labels for k, s in sources.items()}, batch, seed=cfg.pipeline.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, group in enumerate(groups):
        sid = f"{name}_{k:04d}"
        sample = compose(bg, [sources[f] for f in group.frame_ids], t_iou, max_instances, args.feather, sid)
        write_image(args.out / f"{sid}.png", sample.image)
        write_labels(args.out / f"{sid}.txt", sample.labels)
        write_mask(args.out / f"{sid}_mask.png", sample.combined_mask)
        write_calibration(args.out / f"{sid}_calib.json", sample.rig)
        rows.append(
            {
                "frame_id": sid,
                "image": f"{sid}.png",
                "calib": f"{sid}_calib.json",
                "label": f"{sid}.txt",
                "split": "synthetic",
                "scene_id": name,
                "round_created": 0,
            }
        )
    (args.out / "samples.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    print(json.dumps({"samples": len(rows)}))
    return EXIT_OK


def cmd_pseudo(args, cfg: Config) -> int:
    manifest = read_manifest(args.manifest)
    options = dict(cfg.plugins.detector_options)
    if args.gt_dir is not None:
        options["gt_dir"] = str(args.gt_dir.resolve())
    root = cfg.dataset_root if args.config else manifest.root
    detector = make_detector(args.detector or cfg.plugins.detector, options, cfg.plugins.initial_detector_ref, root)
    result = pseudo_label(manifest, detector, cfg.thresholds.t_conf, args.out)
    summary = {
        "frames": len(result.labels),
        "raw_boxes": result.raw_total,
        "pseudo_labels": result.kept_total,
        "failures": len(result.failures),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bev(args, cfg: Config) -> int:
    stride = args.stride or cfg.image.stride
    features = FeatureMap(read_tensor(args.features), stride)
    probs = read_tensor(args.heights)
    g = cfg.grid
    heights = HeightDistribution(probs, uniform_bin_edges(probs.shape[0], *g.height_range))
    if args.seg is not None:
        scores = read_tensor(args.seg)
        names = ["background"] + [f"class{k}" for k in range(1, scores.shape[0])]
        features = mask_features(features, binary_foreground(MultiClassMask(scores, names), cfg.thresholds.t_fg))
    rig = read_calibration(args.calib)
    points = lift(features, heights, rig)
    grid = voxel_pool(points, GridConfig(g.x_range, g.y_range, g.voxel_size))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(args.out, grid.cells)
    sidecar = {
        "shape": list(grid.cells.shape),
        "x_range": list(g.x_range),
        "y_range": list(g.y_range),
        "voxel_size": list(g.voxel_size),
        "lifted_points": len(points),
        "dropped_no_intersection": points.dropped,
        "dropped_out_of_grid": grid.dropped,
    }
    args.out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(json.dumps(sidecar, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args, cfg: Config) -> int:
    if args.config is None:
        raise UsageError("roadgen pipeline: --config is required")
    _, reports = run_pipeline(cfg)
    for r in reports:
        print(r.to_json())
    return EXIT_OK


def cmd_viz(args, cfg: Config) -> int:
    from .viz import match_predictions, plot_bev, overlay_image

    labels = read_labels(args.labels)
    rig = read_calibration(args.calib)
    gt = read_labels(args.gt) if args.gt else None
    matches = match_predictions(labels, gt, args.match_iou) if gt is not None else None
    args.out.parent.mkdir(parents=True, exist_ok=True)
    plot_bev(args.out, labels, rig, gt=gt, matches=matches, x_range=cfg.grid.x_range, y_range=cfg.grid.y_range)
    if args.image is not None:
        out = args.overlay_out or args.out.with_name(args.out.stem + "_overlay.png")
        overlay_image(out, read_image(args.image), labels, rig, gt=gt, matches=matches)
    return EXIT_OK


def cmd_make_fixture(args, cfg=None) -> int:
    from .synthetic import write_fixture

    manifest = write_fixture(args.out, n_scenes=args.scenes, frames_per_scene=args.frames, seed=args.seed)
    config = {
        "paths": {"dataset_root": ".", "output_root": "out"},
        "pipeline": {"seed": args.seed},
        "plugins": {"detector": "oracle", "detector_options": {"gt_dir": "gt"}},
    }
    import yaml

    (args.out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    print(json.dumps({"frames": len(manifest), "config": str(args.out / "config.yaml")}))
    return EXIT_OK


COMMANDS = {
    "rectify": cmd_rectify,
    "background": cmd_background,
    "composite": cmd_composite,
    "pseudo": cmd_pseudo,
    "bev": cmd_bev,
    "pipeline": cmd_pipeline,
    "viz": cmd_viz,
    "make-fixture": cmd_make_fixture,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args) if args.command != "make-fixture" else None
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"roadgen {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"roadgen {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
