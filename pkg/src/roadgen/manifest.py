"""Dataset manifests: one JSON record per frame, one frame per line."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator


class ManifestError(ValueError):
    pass


class Split(str, enum.Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    BACKGROUND = "background"
    SYNTHETIC = "synthetic"
    VALIDATION = "validation"
    TEST = "test"


HELD_OUT = frozenset({Split.VALIDATION, Split.TEST})


@dataclass(frozen=True)
class ManifestEntry:
    frame_id: str
    image: str
    calib: str
    split: Split
    scene_id: str
    label: str | None = None
    round_created: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", Split(self.split))
        if not self.frame_id:
            raise ManifestError("frame_id must be non-empty")
        if self.split in (Split.LABELED, Split.SYNTHETIC) and not self.label:
            raise ManifestError(f"{self.frame_id}: {self.split.value} entries need a label path")
        if self.split is Split.BACKGROUND and self.label:
            raise ManifestError(f"{self.frame_id}: background entries carry no labels")

    def to_json(self) -> str:
        record = asdict(self)
        record["split"] = self.split.value
        return json.dumps(record, sort_keys=True)


class DatasetManifest:
    """Ordered, append-only collection of frames.

    Paths are stored as written; :meth:`resolve` interprets relative paths
    against ``root`` (the manifest file's directory when read from disk).
    """

    def __init__(self, entries: Iterable[ManifestEntry] = (), root=None):
        self.root = Path(root) if root is not None else Path(".")
        self._entries: list[ManifestEntry] = []
        self._ids: set[str] = set()
        for entry in entries:
            self.append(entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, DatasetManifest) and self._entries == other._entries

    @property
    def entries(self) -> tuple[ManifestEntry, ...]:
        return tuple(self._entries)

    @property
    def frame_ids(self) -> list[str]:
        return [e.frame_id for e in self._entries]

    def append(self, entry: ManifestEntry) -> None:
        if entry.frame_id in self._ids:
            raise ManifestError(f"duplicate frame_id {entry.frame_id!r}")
        self._entries.append(entry)
        self._ids.add(entry.frame_id)

    def extend(self, entries: Iterable[ManifestEntry]) -> None:
        for entry in entries:
            self.append(entry)

    def get(self, frame_id: str) -> ManifestEntry:
        for entry in self._entries:
            if entry.frame_id == frame_id:
                return entry
        raise KeyError(frame_id)

    def split(self, *splits: Split) -> list[ManifestEntry]:
        wanted = {Split(s) for s in splits}
        return [e for e in self._entries if e.split in wanted]

    def resolve(self, rel: str) -> Path:
        path = Path(rel)
        return path if path.is_absolute() else self.root / path

    def copy(self) -> "DatasetManifest":
        return DatasetManifest(self._entries, self.root)

    def rebased(self, new_root) -> "DatasetManifest":
        """Same entries with relative paths rewritten against ``new_root``."""
        new_root = Path(new_root)

        def move(p):
            if p is None or Path(p).is_absolute():
                return p
            return os.path.relpath(os.path.abspath(self.root / p), os.path.abspath(new_root))

        moved = [
            replace(e, image=move(e.image), calib=move(e.calib), label=move(e.label))
            for e in self._entries
        ]
        return DatasetManifest(moved, new_root)

    def dumps(self) -> str:
        return "".join(e.to_json() + "\n" for e in self._entries)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries.append(ManifestEntry(**record))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return DatasetManifest(entries, path.parent)
