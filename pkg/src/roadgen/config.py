"""Run configuration: one YAML file, validated, with unknown keys rejected."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Paths:
    dataset_root: str = "."
    output_root: str = "out"
    manifest: str = "manifest.jsonl"  # relative to dataset_root


@dataclass(frozen=True)
class Thresholds:
    t_conf: float = 0.7
    t_iou: float = 0.25
    t_fg: float = 0.55


@dataclass(frozen=True)
class Grid:
    x_range: tuple[float, float] = (-51.2, 51.2)
    y_range: tuple[float, float] = (0.0, 102.4)
    voxel_size: tuple[float, float] = (0.2, 0.2)
    height_range: tuple[float, float] = (-1.0, 3.0)
    height_bins: int = 80


@dataclass(frozen=True)
class ImageSettings:
    width: int = 1536
    height: int = 864
    stride: int = 16


@dataclass(frozen=True)
class PipelineSettings:
    rounds: int = 5
    seed: int = 0
    batch_size: int = 4
    max_instances: int = 32
    interpolation: str = "bilinear"
    workers: int = 1


@dataclass(frozen=True)
class Plugins:
    detector: str = "oracle"
    detector_options: dict = field(default_factory=dict)
    initial_detector_ref: str = "initial"
    segmenter: str = "boxfill"
    trainer_command: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Config:
    paths: Paths = field(default_factory=Paths)
    thresholds: Thresholds = field(default_factory=Thresholds)
    grid: Grid = field(default_factory=Grid)
    image: ImageSettings = field(default_factory=ImageSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    plugins: Plugins = field(default_factory=Plugins)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def dataset_root(self) -> Path:
        return self.resolve(self.paths.dataset_root)

    @property
    def output_root(self) -> Path:
        return self.resolve(self.paths.output_root)

    def with_overrides(self, **overrides) -> "Config":
        """Apply flat overrides (``t_conf``, ``rounds``, ``seed`` ...) and re-validate."""
        cfg = self
        for key, value in overrides.items():
            if value is None:
                continue
            for section in ("thresholds", "pipeline", "paths"):
                sec = getattr(cfg, section)
                if key in {f.name for f in fields(sec)}:
                    cfg = replace(cfg, **{section: replace(sec, **{key: value})})
                    break
            else:
                raise ConfigError(key, "unknown override")
        validate(cfg)
        return cfg


_SECTIONS = {
    "paths": Paths,
    "thresholds": Thresholds,
    "grid": Grid,
    "image": ImageSettings,
    "pipeline": PipelineSettings,
    "plugins": Plugins,
}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number")
        return float(value)
    if isinstance(default, tuple) and default and isinstance(default[0], float):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(key, f"expected a list of {len(default)} numbers")
        return tuple(_coerce(key, v, 0.0) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(key, "expected a mapping")
        return dict(value)
    if key.endswith("trainer_command"):
        if value is None:
            return None
        if isinstance(value, str):
            return (value,)
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigError(key, "expected a list of strings")
        return tuple(value)
    return value


def config_from_dict(data: dict | None, base_dir=".") -> Config:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    sections = {}
    for name, value in data.items():
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown key")
        cls = _SECTIONS[name]
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ConfigError(name, "expected a mapping")
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, item in value.items():
            path = f"{name}.{key}"
            if key not in known:
                raise ConfigError(path, "unknown key")
            kwargs[key] = _coerce(path, item, getattr(defaults, key))
        sections[name] = cls(**kwargs)
    cfg = Config(**sections, base_dir=str(base_dir))
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    for key in ("t_conf", "t_iou", "t_fg"):
        value = getattr(cfg.thresholds, key)
        if not 0.0 < value < 1.0:
            raise ConfigError(f"thresholds.{key}", f"{value} outside (0, 1)")
    p = cfg.pipeline
    if p.rounds < 1:
        raise ConfigError("pipeline.rounds", "must be >= 1")
    if p.batch_size < 1:
        raise ConfigError("pipeline.batch_size", "must be >= 1")
    if p.max_instances < 1:
        raise ConfigError("pipeline.max_instances", "must be >= 1")
    if p.workers < 1:
        raise ConfigError("pipeline.workers", "must be >= 1")
    if p.interpolation not in ("bilinear", "nearest"):
        raise ConfigError("pipeline.interpolation", "must be 'bilinear' or 'nearest'")
    g = cfg.grid
    for key in ("x_range", "y_range", "height_range"):
        lo, hi = getattr(g, key)
        if not hi > lo:
            raise ConfigError(f"grid.{key}", "upper bound must exceed lower bound")
    if min(g.voxel_size) <= 0:
        raise ConfigError("grid.voxel_size", "must be positive")
    for key, lo, hi, step in (
        ("x_range", *g.x_range, g.voxel_size[0]),
        ("y_range", *g.y_range, g.voxel_size[1]),
    ):
        n = (hi - lo) / step
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"grid.{key}", "extent is not a whole number of voxels")
    if g.height_bins < 1:
        raise ConfigError("grid.height_bins", "must be >= 1")
    im = cfg.image
    if im.width < 1 or im.height < 1 or im.stride < 1:
        raise ConfigError("image", "sizes and stride must be positive")


def config_to_dict(cfg: Config) -> dict:
    out = {}
    for name in _SECTIONS:
        section = asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        out[name] = section
    return out


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(path) -> Config:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", str(exc)) from exc
    return config_from_dict(data, base_dir=path.parent)
