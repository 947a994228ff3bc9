"""
Clip manifests: one JSON record per line
"""

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from .exceptions import HOIForgeError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ClipRecord:
    """Paths of one clip's inputs; absent fields mean the input is not available"""

    id: str
    pose_sequence: Optional[Path] = None
    object_mesh: Optional[Path] = None
    generated_frames: Optional[Path] = None
    gt_frames: Optional[Path] = None
    gt_tracklets: Optional[Path] = None
    gen_tracklets: Optional[Path] = None
    gt_joints: Optional[Path] = None
    pred_joints: Optional[Path] = None
    gt_vertices: Optional[Path] = None
    pred_vertices: Optional[Path] = None
    gt_features: Optional[Path] = None
    gen_features: Optional[Path] = None
    pose_error_mm: Optional[float] = None

    def has(self, *names: str) -> bool:
        return all(getattr(self, name) is not None for name in names)

    def path(self, name: str) -> Path:
        """Referenced path, which must exist at run time"""
        value = getattr(self, name)
        if value is None:
            raise ValidationError(f"clip {self.id!r} has no '{name}'")
        if not value.exists():
            raise HOIForgeError(f"clip {self.id!r}: {name} not found: {value}")
        return value

    def to_dict(self, base: Optional[Path] = None) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, Path):
                if base is not None:
                    try:
                        value = value.relative_to(base)
                    except ValueError:
                        pass
                value = value.as_posix()
            data[f.name] = value
        return data


PATH_FIELDS = tuple(f.name for f in fields(ClipRecord) if f.name not in ("id", "pose_error_mm"))


def record_from_dict(data: Dict[str, Any], base: Path) -> ClipRecord:
    if not isinstance(data, dict):
        raise ValidationError("manifest records must be JSON objects")
    unknown = set(data) - {f.name for f in fields(ClipRecord)}
    if unknown:
        raise ValidationError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
    if "id" not in data or data["id"] in (None, ""):
        raise ValidationError("manifest record is missing 'id'")
    values: Dict[str, Any] = {"id": str(data["id"])}
    for name in PATH_FIELDS:
        if data.get(name) is not None:
            path = Path(str(data[name])).expanduser()
            values[name] = path if path.is_absolute() else base / path
    if data.get("pose_error_mm") is not None:
        try:
            values["pose_error_mm"] = float(data["pose_error_mm"])
        except (TypeError, ValueError):
            raise ValidationError(f"clip {values['id']!r}: pose_error_mm must be a number")
    return ClipRecord(**values)


@dataclass(frozen=True)
class ClipManifest:
    records: List[ClipRecord]
    base: Path

    def __post_init__(self):
        ids = [r.id for r in self.records]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValidationError(f"duplicate clip ids: {', '.join(duplicates)}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClipRecord]:
        return iter(self.records)

    def subset(self, ids) -> "ClipManifest":
        """Records whose id is in `ids`, in manifest order"""
        keep = set(ids)
        return ClipManifest([r for r in self.records if r.id in keep], self.base)


def load_manifest(path: PathLike) -> ClipManifest:
    """
    Read a JSON-lines manifest; relative paths resolve against its directory

    Raises:
        ValidationError: On malformed lines, unknown keys or duplicate ids
    """
    path = Path(path)
    if not path.is_file():
        raise HOIForgeError(f"manifest not found: {path}")
    base = path.resolve().parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {e}")
        try:
            records.append(record_from_dict(data, base))
        except ValidationError as e:
            raise ValidationError(f"{path}:{lineno}: {e}")
    logger.debug("Loaded %d clip records from %s", len(records), path)
    return ClipManifest(records, base)


def save_manifest(manifest: ClipManifest, path: PathLike) -> None:
    path = Path(path)
    base = path.resolve().parent
    lines = [json.dumps(record.to_dict(base)) for record in manifest.records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
