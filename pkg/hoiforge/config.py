"""
Pipeline configuration loaded from INI or JSON files
"""

import configparser
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union, get_type_hints

from .conditioning import CUE_KINDS, PATCH_SIZE, TEMPORAL_STRIDE
from .exceptions import HOIForgeError, ValidationError
from .raster import Camera
from .trajectory import TrajectoryConfig

logger = logging.getLogger(__name__)

ASSETS_DIR = Path(__file__).resolve().parent / "assets"
DEFAULT_CONFIG_PATH = ASSETS_DIR / "default.ini"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CameraConfig:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 720
    height: int = 480

    def build(self) -> Camera:
        return Camera(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


@dataclass(frozen=True)
class ConditioningConfig:
    mask_probability: float = 0.2
    tracklet_count: int = 100
    injection_layers: int = 2
    noise_std: float = 0.0
    active_cues: Tuple[str, ...] = CUE_KINDS


@dataclass(frozen=True)
class MetricsConfig:
    fscore_thresholds: Tuple[float, ...] = (5.0, 15.0)
    static_epsilon: float = 1e-6
    discard_fraction: float = 0.25


@dataclass(frozen=True)
class SeedConfig:
    encoder: int
    mask: int
    tracklet: int
    injection: int
    noise: int

    def override(self, seed: int) -> "SeedConfig":
        return SeedConfig(*(seed for _ in fields(self)))


@dataclass(frozen=True)
class AssetConfig:
    object_mesh: Path = ASSETS_DIR / "cube.obj"
    endpoints: Path = ASSETS_DIR / "endpoints.json"
    hand: Optional[Path] = None


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = Path("hoi-output")
    depth_format: str = "png"
    per_clip_csv: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    """All settings of a pipeline run; every section maps to a file section"""

    camera: CameraConfig
    seeds: SeedConfig
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    assets: AssetConfig = field(default_factory=AssetConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: Optional[Path] = None

    def __post_init__(self):
        cam = self.camera
        if cam.fx <= 0 or cam.fy <= 0:
            raise ValidationError("camera focal lengths must be positive")
        if cam.width % PATCH_SIZE or cam.height % PATCH_SIZE:
            raise ValidationError(f"camera width and height must be multiples of {PATCH_SIZE}")
        if (self.trajectory.frame_count - 1) % TEMPORAL_STRIDE:
            raise ValidationError(f"trajectory frame_count minus one must be a multiple of {TEMPORAL_STRIDE}")
        cond = self.conditioning
        if not 0.0 <= cond.mask_probability <= 1.0:
            raise ValidationError("conditioning mask_probability must lie in [0, 1]")
        if cond.tracklet_count < 1:
            raise ValidationError("conditioning tracklet_count must be positive")
        if cond.injection_layers < 1:
            raise ValidationError("conditioning injection_layers must be positive")
        if cond.noise_std < 0:
            raise ValidationError("conditioning noise_std must be non-negative")
        unknown = set(cond.active_cues) - set(CUE_KINDS)
        if unknown:
            raise ValidationError(f"unknown cues in active_cues: {sorted(unknown)}")
        if not 0.0 <= self.metrics.discard_fraction < 1.0:
            raise ValidationError("metrics discard_fraction must lie in [0, 1)")
        if any(t <= 0 for t in self.metrics.fscore_thresholds):
            raise ValidationError("metrics fscore_thresholds must be positive")
        if self.metrics.static_epsilon <= 0:
            raise ValidationError("metrics static_epsilon must be positive")
        if self.output.depth_format not in ("png", "pfm"):
            raise ValidationError("output depth_format must be 'png' or 'pfm'")

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.camera.height, self.camera.width

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with every seed replaced by `seed`"""
        return replace(self, seeds=self.seeds.override(seed))

    def with_output(self, directory: PathLike) -> "PipelineConfig":
        return replace(self, output=replace(self.output, directory=Path(directory)))


SECTIONS = {
    "camera": CameraConfig,
    "trajectory": TrajectoryConfig,
    "conditioning": ConditioningConfig,
    "metrics": MetricsConfig,
    "seeds": SeedConfig,
    "assets": AssetConfig,
    "output": OutputConfig,
}
REQUIRED_SECTIONS = ("camera", "seeds")


def _coerce(section: str, key: str, kind: Any, value: Any, base: Path) -> Any:
    """Convert a raw file value (string from INI, typed from JSON) to `kind`"""
    try:
        if kind is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(f"not a boolean: {value!r}")
                return lowered in ("1", "true", "yes", "on")
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if kind is float:
            return float(value)
        if kind is str:
            return str(value).strip()
        if kind in (Path, Optional[Path]):
            if value in (None, ""):
                if kind is Path:
                    raise ValueError("path must not be empty")
                return None
            path = Path(str(value).strip()).expanduser()
            if section == "assets" and not path.is_absolute():
                path = (base / path).resolve()
            return path
        if kind in (Tuple[float, ...], Tuple[str, ...]):
            item = float if kind == Tuple[float, ...] else str
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(item(x.strip() if isinstance(x, str) else x) for x in items if str(x).strip())
    except (TypeError, ValueError) as e:
        raise ValidationError(f"[{section}] {key}: {e}")
    raise ValidationError(f"[{section}] {key}: unsupported field type {kind}")


def _build_section(name: str, values: Dict[str, Any], base: Path) -> Any:
    cls = SECTIONS[name]
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {key: _coerce(name, key, hints[key], value, base) for key, value in values.items()}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ValidationError(f"[{name}] {e}")


def config_from_dict(data: Dict[str, Dict[str, Any]], base: Optional[Path] = None,
                     source: Optional[Path] = None) -> PipelineConfig:
    """
    Build a PipelineConfig from section -> {key: value} mappings

    Args:
        data: Parsed file contents
        base: Directory relative asset paths resolve against
        source: File the data came from

    Raises:
        ValidationError: On unknown sections or keys, missing required
            sections or values that fail conversion or range checks
    """
    if not isinstance(data, dict):
        raise ValidationError("configuration must be a mapping of sections")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config sections: {', '.join(sorted(unknown))}")
    missing = [name for name in REQUIRED_SECTIONS if name not in data]
    if missing:
        raise ValidationError(f"missing config sections: {', '.join(missing)}")
    base = base or Path.cwd()
    sections = {}
    for name, values in data.items():
        if not isinstance(values, dict):
            raise ValidationError(f"[{name}] must be a mapping of keys")
        sections[name] = _build_section(name, values, base)
    return PipelineConfig(**sections, source=source)


def load_config(path: PathLike) -> PipelineConfig:
    """
    Load an INI (.ini, .cfg) or JSON (.json) configuration file

    Raises:
        ValidationError: If the file cannot be parsed or fails validation
    """
    path = Path(path)
    if not path.is_file():
        raise HOIForgeError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON: {e}")
    else:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as e:
            raise ValidationError(f"{path}: {e}")
        data = {name: dict(parser[name]) for name in parser.sections()}
    config = config_from_dict(data, base=path.resolve().parent, source=path)
    logger.debug("Loaded configuration from %s", path)
    return config


def default_config() -> PipelineConfig:
    """Bundled configuration for the toy assets"""
    return load_config(DEFAULT_CONFIG_PATH)
