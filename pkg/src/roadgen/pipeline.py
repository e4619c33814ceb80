"""Multi-round self-training orchestration.

Each round: the current teacher pseudo-labels unlabeled frames, the
pseudo-labeled frames are rectified onto every background camera, masked
instances are composited onto the empty backgrounds, and an external trainer
is handed the labeled plus freshly synthesized frames. Its output becomes the
next round's teacher.
"""

from __future__ import annotations

import importlib
import json
import logging
import os
import shutil
import subprocess
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .camgeom import CameraRig, read_calibration
from .composite import BackgroundFrame, MaskedSource, compose, plan_batches
from .config import Config, Thresholds
from .imageio import read_image, write_image, write_mask
from .labels3d import (
    Box3D,
    LabelSet,
    Provenance,
    bev_iou,
    filter_by_conf,
    project_box_2d,
    read_labels,
    write_labels,
)
from .manifest import HELD_OUT, DatasetManifest, ManifestEntry, Split, read_manifest
from .rectify import rectify_frame
from .segmask import SEGMENTERS, Segmenter

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


class DetectorUnavailable(PipelineError):
    pass


class TrainerHookFailed(PipelineError):
    pass


# -- detectors --------------------------------------------------------------------------


class Detector:
    """Teacher interface: ``predict`` returns boxes with confidences for one frame."""

    thread_safe = True

    def predict(self, image: np.ndarray, rig: CameraRig, frame_id: str | None = None) -> LabelSet:
        raise NotImplementedError

    def predict_batch(self, images, rigs, frame_ids) -> list[LabelSet]:
        return [self.predict(im, rg, fid) for im, rg, fid in zip(images, rigs, frame_ids)]


class _GroundTruthSource:
    def __init__(self, gt):
        self._gt = gt

    def lookup(self, frame_id: str) -> LabelSet:
        if frame_id is None:
            raise KeyError("oracle detectors need a frame_id")
        if isinstance(self._gt, Mapping):
            return self._gt[frame_id]
        path = Path(self._gt) / f"{frame_id}.txt"
        if not path.exists():
            raise KeyError(frame_id)
        return read_labels(path, frame_id)


class OracleDetector(Detector):
    """Returns injected ground truth with a fixed confidence."""

    def __init__(self, gt, conf: float = 1.0):
        self.source = _GroundTruthSource(gt)
        self.conf = conf

    def predict(self, image, rig, frame_id=None):
        truth = self.source.lookup(frame_id)
        return LabelSet(frame_id, tuple(replace(b, conf=self.conf) for b in truth), Provenance.PSEUDO)


class ConstantConfidenceDetector(OracleDetector):
    def __init__(self, gt, conf: float = 0.5):
        super().__init__(gt, conf)


class NoisyOracleDetector(Detector):
    """Ground truth with Gaussian center jitter; confidence is the BEV IoU with the truth."""

    def __init__(self, gt, sigma: float = 0.2, seed: int = 0):
        self.source = _GroundTruthSource(gt)
        self.sigma = sigma
        self.seed = seed

    def predict(self, image, rig, frame_id=None):
        truth = self.source.lookup(frame_id)
        rng = np.random.default_rng([self.seed, zlib.crc32(str(frame_id).encode())])
        out = []
        for b in truth:
            dx, dy = rng.normal(0.0, self.sigma, size=2)
            moved = replace(b, x=b.x + dx, y=b.y + dy, conf=1.0)
            out.append(replace(moved, conf=bev_iou(moved, b)))
        return LabelSet(frame_id, tuple(out), Provenance.PSEUDO)


DETECTORS = {
    "oracle": OracleDetector,
    "noisy_oracle": NoisyOracleDetector,
    "constant": ConstantConfidenceDetector,
}


def make_detector(name: str, options: Mapping | None = None, ref: str | None = None, root=None) -> Detector:
    """Instantiate a registered mock or a ``package.module:factory`` plugin.

    Mocks read ground truth from ``options['gt_dir']`` (relative to ``root``).
    Plugins are called as ``factory(ref, **options)``.
    """
    options = dict(options or {})
    if ":" in name:
        module, attr = name.split(":", 1)
        try:
            factory = getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError) as exc:
            raise DetectorUnavailable(f"cannot load detector plugin {name!r}: {exc}") from exc
        return factory(ref, **options)
    if name not in DETECTORS:
        raise DetectorUnavailable(f"unknown detector {name!r}")
    gt = options.pop("gt_dir", None)
    if gt is None:
        raise DetectorUnavailable(f"detector {name!r} needs a gt_dir option")
    gt_path = Path(gt)
    if root is not None and not gt_path.is_absolute():
        gt_path = Path(root) / gt_path
    return DETECTORS[name](gt_path, **options)


# -- trainer hooks -----------------------------------------------------------------------


class CommandTrainer:
    """Runs ``command --manifest <path> --round <n> --out <ref>``; exit 0 means success."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)

    def __call__(self, manifest_path, round_index: int, out_path) -> None:
        argv = self.command + [
            "--manifest", str(manifest_path), "--round", str(round_index), "--out", str(out_path)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True)
        except OSError as exc:
            raise TrainerHookFailed(f"cannot start trainer: {exc}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout).strip().splitlines()[-1:] or [""]
            raise TrainerHookFailed(f"trainer exited with {proc.returncode}: {tail[0]}")


class NullTrainer:
    """Records what it would have trained on; the detector itself is unchanged."""

    def __call__(self, manifest_path, round_index: int, out_path) -> None:
        record = {"round": round_index, "manifest": os.path.basename(str(manifest_path))}
        Path(out_path).write_text(json.dumps(record, sort_keys=True) + "\n")


# -- state and reports -------------------------------------------------------------------


@dataclass
class RoundState:
    round_index: int
    detector_ref: str
    manifest: DatasetManifest
    thresholds: Thresholds = field(default_factory=Thresholds)
    seed: int = 0

    def __post_init__(self):
        if self.round_index < 1:
            raise PipelineError("round_index must be >= 1")
        for key in ("t_conf", "t_iou", "t_fg"):
            value = getattr(self.thresholds, key)
            if not 0.0 < value < 1.0:
                raise PipelineError(f"{key} must lie in (0, 1)")


@dataclass
class RoundReport:
    round: int
    unlabeled_frames: int = 0
    pseudo_raw: int = 0
    pseudo_labels: int = 0
    pseudo_failures: int = 0
    rectified_labels: int = 0
    rejected_iou: int = 0
    rejected_invalid: int = 0
    composited_samples: int = 0
    synthetic_labels: int = 0
    detector_ref: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class PseudoLabelResult:
    labels: dict[str, LabelSet]
    raw_counts: dict[str, int]
    failures: list[str]

    @property
    def raw_total(self) -> int:
        return sum(self.raw_counts.values())

    @property
    def kept_total(self) -> int:
        return sum(len(ls) for ls in self.labels.values())


@dataclass
class PipelineEnv:
    """Everything a round needs besides its state."""

    output_root: Path
    load_detector: Callable[[str], Detector]
    segmenter: Segmenter
    trainer: Callable
    batch_size: int = 4
    max_instances: int = 32
    max_rounds: int = 5
    interpolation: str = "bilinear"
    workers: int = 1


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pseudo_label(
    manifest: DatasetManifest,
    detector: Detector | None,
    t_conf: float = 0.7,
    out_dir=None,
    workers: int = 1,
) -> PseudoLabelResult:
    """Run the teacher on every unlabeled frame and keep boxes with ``conf > t_conf``.

    Held-out splits are never touched. A frame whose prediction fails is logged
    and skipped.
    """
    if detector is None:
        raise DetectorUnavailable("no detector")
    entries = manifest.split(Split.UNLABELED)
    assert not any(e.split in HELD_OUT for e in entries)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    def run(entry: ManifestEntry):
        try:
            image = read_image(manifest.resolve(entry.image))
            rig = read_calibration(manifest.resolve(entry.calib))
            return entry.frame_id, detector.predict(image, rig, entry.frame_id)
        except Exception as exc:  # noqa: BLE001 - a bad frame must not abort the round
            logger.warning("pseudo-labeling %s failed: %s", entry.frame_id, exc)
            return entry.frame_id, None

    labels, raw, failures = {}, {}, []
    for fid, pred in _map(run, entries, workers if detector.thread_safe else 1):
        if pred is None:
            failures.append(fid)
            continue
        raw[fid] = len(pred)
        kept = filter_by_conf(LabelSet(fid, pred.boxes), t_conf)
        labels[fid] = kept
        if out_dir is not None:
            write_labels(Path(out_dir) / f"{fid}.txt", kept)
    return PseudoLabelResult(labels, raw, failures)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _rel(path: Path, root: Path) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(root))


def run_round(state: RoundState, env: PipelineEnv) -> tuple[RoundState, RoundReport]:
    """Execute one teacher -> synthesize -> train round.

    The manifest only ever grows: synthetic frames are appended with
    ``round_created`` set, and the trainer sees the labeled frames plus this
    round's synthetic frames. If the trainer fails the on-disk manifest is
    restored from the pre-round snapshot and :class:`TrainerHookFailed` is raised.
    """
    n = state.round_index
    if n > env.max_rounds:
        raise PipelineError(f"round {n} exceeds the configured {env.max_rounds} rounds")
    root = Path(env.output_root)
    manifest = state.manifest
    round_dir = root / "rounds" / f"round_{n:02d}"
    if round_dir.exists():
        shutil.rmtree(round_dir)
    synth_dir = round_dir / "synthetic"
    synth_dir.mkdir(parents=True)
    manifest_path = root / "manifest.jsonl"
    snapshot = root / "snapshots" / f"round_{n:02d}" / "manifest.jsonl"
    snapshot.parent.mkdir(parents=True, exist_ok=True)
    manifest.rebased(root).write(snapshot)

    report = RoundReport(round=n, unlabeled_frames=len(manifest.split(Split.UNLABELED)))
    detector = env.load_detector(state.detector_ref)
    pseudo = pseudo_label(manifest, detector, state.thresholds.t_conf, round_dir / "pseudo", env.workers)
    report.pseudo_raw = pseudo.raw_total
    report.pseudo_labels = pseudo.kept_total
    report.pseudo_failures = len(pseudo.failures)

    frames = {}
    for fid, labels in pseudo.labels.items():
        if len(labels):
            entry = manifest.get(fid)
            frames[fid] = (
                read_image(manifest.resolve(entry.image)),
                read_calibration(manifest.resolve(entry.calib)),
                labels,
            )

    new_entries = []
    for b_idx, bg_entry in enumerate(manifest.split(Split.BACKGROUND)):
        bg_rig = read_calibration(manifest.resolve(bg_entry.calib))
        bg = BackgroundFrame(read_image(manifest.resolve(bg_entry.image)), bg_rig, bg_entry.frame_id)

        def rectify_one(fid, bg_rig=bg_rig):
            image, rig, labels = frames[fid]
            rf = rectify_frame(image, rig, labels, bg_rig, env.interpolation)
            if not len(rf.labels):
                return fid, None
            prompts = [project_box_2d(b, bg_rig) for b in rf.labels]
            masks = env.segmenter.segment_instances(rf.image, prompts, [b.category for b in rf.labels])
            return fid, MaskedSource(rf, tuple(masks))

        workers = env.workers if getattr(env.segmenter, "thread_safe", False) else 1
        sources = {fid: src for fid, src in _map(rectify_one, sorted(frames), workers) if src is not None}
        report.rectified_labels += sum(len(s.frame.labels) for s in sources.values())

        plans = plan_batches(
            {fid: s.frame.labels for fid, s in sources.items()},
            env.batch_size,
            seed=_derive_seed(state.seed, n, b_idx),
        )
        for p_idx, plan in enumerate(plans):
            sid = f"r{n:02d}_{bg_entry.frame_id}_{p_idx:04d}"
            sample = compose(
                bg,
                [sources[f] for f in plan.frame_ids],
                t_iou=state.thresholds.t_iou,
                max_instances=env.max_instances,
                frame_id=sid,
            )
            report.rejected_iou += sample.rejected_iou
            report.rejected_invalid += sample.rejected_invalid
            if not len(sample.labels):
                continue
            write_image(synth_dir / f"{sid}.png", sample.image)
            write_labels(synth_dir / f"{sid}.txt", sample.labels)
            write_mask(synth_dir / f"{sid}_mask.png", sample.combined_mask)
            new_entries.append(
                ManifestEntry(
                    frame_id=sid,
                    image=_rel(synth_dir / f"{sid}.png", manifest.root),
                    calib=bg_entry.calib,
                    split=Split.SYNTHETIC,
                    scene_id=bg_entry.scene_id,
                    label=_rel(synth_dir / f"{sid}.txt", manifest.root),
                    round_created=n,
                )
            )
            report.composited_samples += 1
            report.synthetic_labels += len(sample.labels)

    grown = manifest.copy()
    grown.extend(new_entries)
    grown.rebased(root).write(manifest_path)

    train_view = DatasetManifest(
        [e for e in grown if e.split is Split.LABELED or (e.split is Split.SYNTHETIC and e.round_created == n)],
        grown.root,
    ).rebased(round_dir)
    train_path = round_dir / "train_manifest.jsonl"
    train_view.write(train_path)
    ref_path = round_dir / "detector.ref"
    try:
        env.trainer(train_path, n, ref_path)
    except TrainerHookFailed:
        shutil.copyfile(snapshot, manifest_path)
        raise
    except Exception as exc:
        shutil.copyfile(snapshot, manifest_path)
        raise TrainerHookFailed(str(exc)) from exc

    report.detector_ref = _rel(ref_path, root)
    new_state = RoundState(n + 1, report.detector_ref, grown, state.thresholds, state.seed)
    return new_state, report


def _write_state(path: Path, state: RoundState, completed: int) -> None:
    record = {
        "completed_rounds": completed,
        "next_round": state.round_index,
        "detector_ref": state.detector_ref,
        "seed": state.seed,
        "thresholds": asdict(state.thresholds),
        "manifest": "manifest.jsonl",
    }
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def build_env(
    config: Config,
    detector_factory: Callable[[str], Detector] | None = None,
    segmenter: Segmenter | None = None,
    trainer: Callable | None = None,
) -> PipelineEnv:
    plugins = config.plugins
    if detector_factory is None:

        def detector_factory(ref, _p=plugins, _root=config.dataset_root):
            return make_detector(_p.detector, _p.detector_options, ref, _root)

    if segmenter is None:
        if plugins.segmenter not in SEGMENTERS:
            raise PipelineError(f"unknown segmenter {plugins.segmenter!r}")
        segmenter = SEGMENTERS[plugins.segmenter]()
    if trainer is None:
        trainer = CommandTrainer(plugins.trainer_command) if plugins.trainer_command else NullTrainer()
    p = config.pipeline
    return PipelineEnv(
        output_root=config.output_root,
        load_detector=detector_factory,
        segmenter=segmenter,
        trainer=trainer,
        batch_size=p.batch_size,
        max_instances=p.max_instances,
        max_rounds=p.rounds,
        interpolation=p.interpolation,
        workers=p.workers,
    )


def run_pipeline(
    config: Config,
    detector_factory: Callable[[str], Detector] | None = None,
    segmenter: Segmenter | None = None,
    trainer: Callable | None = None,
) -> tuple[DatasetManifest, list[RoundReport]]:
    """Run the configured number of rounds; writes ``round_report.jsonl`` and ``state.json``.

    ``state.json`` always describes the last completed round, so a failure
    leaves the last good state on disk.
    """
    env = build_env(config, detector_factory, segmenter, trainer)
    root = Path(env.output_root)
    root.mkdir(parents=True, exist_ok=True)
    source = read_manifest(config.dataset_root / config.paths.manifest)
    if source.split(Split.SYNTHETIC):
        raise PipelineError("input manifest already contains synthetic frames")
    manifest = source.rebased(root)
    manifest.write(root / "manifest.jsonl")
    state = RoundState(
        1, config.plugins.initial_detector_ref, manifest, config.thresholds, config.pipeline.seed
    )
    _write_state(root / "state.json", state, 0)
    reports: list[RoundReport] = []
    report_path = root / "round_report.jsonl"
    report_path.write_text("")
    for _ in range(config.pipeline.rounds):
        state, report = run_round(state, env)
        reports.append(report)
        report_path.write_text("".join(r.to_json() + "\n" for r in reports))
        _write_state(root / "state.json", state, report.round)
        logger.info(
            "round %d: %d pseudo labels, %d composites", report.round, report.pseudo_labels, report.composited_samples
        )
    return state.manifest, reports
