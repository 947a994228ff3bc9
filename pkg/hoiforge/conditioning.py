"""
Condition latents: cue encoding, channel packing, cue masking and
zero-initialized feature injection
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)

CUE_KINDS = ("depth", "seg", "keypoint")
RAW_CHANNELS = {"depth": 1, "seg": 4, "keypoint": 3}
LATENT_CHANNELS = 16
PACKED_CHANNELS = LATENT_CHANNELS * len(CUE_KINDS)
PATCH_SIZE = 8
TEMPORAL_STRIDE = 4
SEG_CLASSES = 4

PathLike = Union[str, Path]


def latent_frame_count(frame_count: int) -> int:
    """Causal temporal compression: frame 0 alone, then groups of four"""
    if frame_count < 1 or (frame_count - 1) % TEMPORAL_STRIDE:
        raise ShapeError(f"frame count minus one must be a multiple of {TEMPORAL_STRIDE}, got {frame_count}")
    return 1 + (frame_count - 1) // TEMPORAL_STRIDE


@dataclass(frozen=True, eq=False)
class CueSet:
    """Per-frame depth (meters), instance labels and keypoint images of one clip"""

    depth: np.ndarray
    seg: np.ndarray
    keypoint: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        seg = np.asarray(self.seg, dtype=np.uint8)
        keypoint = np.asarray(self.keypoint, dtype=np.uint8)
        if depth.ndim != 3 or seg.ndim != 3 or keypoint.ndim != 4 or keypoint.shape[-1] != 3:
            raise ShapeError("cues must be F x H x W (depth, seg) and F x H x W x 3 (keypoint)")
        if not depth.shape == seg.shape == keypoint.shape[:3]:
            raise ShapeError(
                f"cue sizes disagree: depth {depth.shape}, seg {seg.shape}, keypoint {keypoint.shape[:3]}"
            )
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "seg", seg)
        object.__setattr__(self, "keypoint", keypoint)

    @property
    def frame_count(self) -> int:
        return self.depth.shape[0]

    @property
    def size(self) -> Tuple[int, int]:
        return self.depth.shape[1], self.depth.shape[2]

    def get(self, kind: str) -> np.ndarray:
        if kind not in CUE_KINDS:
            raise ValidationError(f"unknown cue '{kind}', expected one of {CUE_KINDS}")
        return getattr(self, kind)

    def zeroed(self, kinds: Iterable[str]) -> "CueSet":
        """Copy with the named cues replaced by zeros"""
        changes = {kind: np.zeros_like(self.get(kind)) for kind in kinds}
        return replace(self, **changes) if changes else self


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """F_lat x H/8 x W/8 x C float32 latent tagged with the cue it came from"""

    data: np.ndarray
    cue: str
    masked: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4:
            raise ShapeError(f"latent must be F x H x W x C, got {data.shape}")
        if data.shape[-1] not in (LATENT_CHANNELS, PACKED_CHANNELS):
            raise ShapeError(f"latent channels must be {LATENT_CHANNELS} or {PACKED_CHANNELS}, got {data.shape[-1]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "masked", tuple(self.masked))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[-1]


class ProjectionBank:
    """
    Seeded raw-feature to latent projections, one matrix per (kind, seed)

    Matrices are drawn from a standard normal seeded by (seed, kind) and kept
    as float32 so a saved bank reloads bit-for-bit.
    """

    def __init__(self, directory: Optional[PathLike] = None):
        self.directory = Path(directory) if directory else None
        self._matrices: Dict[Tuple[str, int], np.ndarray] = {}

    @staticmethod
    def blob_name(kind: str, seed: int) -> str:
        return f"{kind}-{seed}.f32"

    def _generate(self, kind: str, seed: int) -> np.ndarray:
        rng = np.random.default_rng([int(seed), CUE_KINDS.index(kind)])
        return rng.standard_normal((RAW_CHANNELS[kind], LATENT_CHANNELS)).astype(np.float32)

    def get(self, kind: str, seed: int) -> np.ndarray:
        if kind not in CUE_KINDS:
            raise ValidationError(f"unknown cue '{kind}', expected one of {CUE_KINDS}")
        key = (kind, int(seed))
        if key not in self._matrices:
            matrix = None
            if self.directory is not None:
                blob = self.directory / self.blob_name(kind, seed)
                if blob.exists():
                    matrix = np.fromfile(blob, dtype="<f4")
                    if matrix.size != RAW_CHANNELS[kind] * LATENT_CHANNELS:
                        raise ValidationError(f"{blob}: projection has {matrix.size} entries")
                    matrix = matrix.reshape(RAW_CHANNELS[kind], LATENT_CHANNELS).astype(np.float32)
                    logger.debug("Loaded projection %s", blob)
            if matrix is None:
                matrix = self._generate(kind, seed)
            matrix.setflags(write=False)
            self._matrices[key] = matrix
        return self._matrices[key]

    def save(self, directory: Optional[PathLike] = None) -> List[Path]:
        """Write every matrix requested so far as a little-endian float32 blob"""
        target = Path(directory) if directory else self.directory
        if target is None:
            raise ValidationError("no directory given for the projection bank")
        target.mkdir(parents=True, exist_ok=True)
        written = []
        for (kind, seed), matrix in sorted(self._matrices.items()):
            path = target / self.blob_name(kind, seed)
            path.write_bytes(matrix.astype("<f4").tobytes())
            written.append(path)
        return written


def _raw_features(frames: np.ndarray, kind: str) -> np.ndarray:
    if kind == "depth":
        return np.asarray(frames, dtype=np.float64)[..., None]
    if kind == "seg":
        labels = np.clip(np.asarray(frames, dtype=np.int64), 0, SEG_CLASSES - 1)
        return np.eye(SEG_CLASSES)[labels]
    return np.asarray(frames, dtype=np.float64) / 255.0


def encode_cue(
    frames: np.ndarray,
    kind: str,
    encoder_seed: int,
    bank: Optional[ProjectionBank] = None,
) -> LatentTensor:
    """
    Encode one cue sequence into a 16-channel latent

    Each 8 x 8 patch is reduced to its raw channel means (depth in meters,
    one-hot label histogram over background/hand/object/other, RGB / 255),
    frames are pooled causally (latent frame j >= 1 averages input frames
    4j-3 .. 4j) and the result is projected by the seeded matrix for `kind`.

    Args:
        frames: F x H x W (depth, seg) or F x H x W x 3 (keypoint)
        kind: One of depth, seg, keypoint
        encoder_seed: Seed selecting the projection matrix
        bank: Projection bank to draw matrices from

    Returns:
        LatentTensor of shape (1 + (F-1)/4, H/8, W/8, 16)

    Raises:
        ShapeError: If H or W is not a multiple of 8 or F - 1 not a multiple of 4
    """
    if kind not in CUE_KINDS:
        raise ValidationError(f"unknown cue '{kind}', expected one of {CUE_KINDS}")
    frames = np.asarray(frames)
    expected_ndim = 4 if kind == "keypoint" else 3
    if frames.ndim != expected_ndim:
        raise ShapeError(f"{kind} frames must have {expected_ndim} dimensions, got {frames.shape}")
    count, height, width = frames.shape[:3]
    if height % PATCH_SIZE or width % PATCH_SIZE:
        raise ShapeError(f"image size {height} x {width} is not a multiple of {PATCH_SIZE}")
    latent_frames = latent_frame_count(count)

    channels = RAW_CHANNELS[kind]
    rows, cols = height // PATCH_SIZE, width // PATCH_SIZE
    # one frame at a time keeps the one-hot volume small
    patches = np.stack([
        _raw_features(frame, kind).reshape(rows, PATCH_SIZE, cols, PATCH_SIZE, channels).mean(axis=(1, 3))
        for frame in frames
    ])

    pooled = np.empty((latent_frames, rows, cols, channels))
    pooled[0] = patches[0]
    if latent_frames > 1:
        pooled[1:] = patches[1:].reshape(latent_frames - 1, TEMPORAL_STRIDE, rows, cols, channels).mean(axis=1)

    bank = bank or ProjectionBank()
    projection = bank.get(kind, encoder_seed).astype(np.float64)
    logger.debug("Encoded %s cue %s -> %s", kind, frames.shape, pooled.shape[:3] + (LATENT_CHANNELS,))
    return LatentTensor(pooled @ projection, cue=kind)


def concat_channels(latents: Sequence[LatentTensor]) -> LatentTensor:
    """Channel-wise concatenation of three 16-channel latents in the order given"""
    if len(latents) != len(CUE_KINDS):
        raise ShapeError(f"expected {len(CUE_KINDS)} latents, got {len(latents)}")
    leading = latents[0].shape[:3]
    for latent in latents:
        if latent.channels != LATENT_CHANNELS:
            raise ShapeError(f"{latent.cue} latent has {latent.channels} channels")
        if latent.shape[:3] != leading:
            raise ShapeError(f"{latent.cue} latent is {latent.shape[:3]}, expected {leading}")
    masked = tuple(kind for latent in latents for kind in latent.masked)
    return LatentTensor(np.concatenate([l.data for l in latents], axis=-1), cue="concat", masked=masked)


def mask_cues(cues: CueSet, p: float, rng_seed: int) -> Tuple[CueSet, Tuple[str, ...]]:
    """
    Drop whole cue sequences independently with probability p

    Returns:
        (masked CueSet, names of the dropped cues)
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"mask probability must be in [0, 1], got {p}")
    draws = np.random.default_rng(rng_seed).random(len(CUE_KINDS))
    dropped = tuple(kind for kind, draw in zip(CUE_KINDS, draws) if draw < p)
    if dropped:
        logger.debug("Masked cues %s (seed %d)", dropped, rng_seed)
    return cues.zeroed(dropped), dropped


def perturb_cues(cues: CueSet, std: float, seed: int) -> CueSet:
    """
    Add Gaussian noise to depth (meters, foreground only) and keypoint images

    Keypoint noise is std * 255 in 8-bit units; labels are left intact.
    """
    if std < 0:
        raise ValidationError("noise std must be non-negative")
    if std == 0:
        return cues
    rng = np.random.default_rng(seed)
    depth_noise = rng.normal(0.0, std, cues.depth.shape)
    depth = np.where(cues.depth > 0, np.maximum(cues.depth + depth_noise, 0.0), 0.0)
    keypoint_noise = rng.normal(0.0, std * 255.0, cues.keypoint.shape)
    keypoint = np.clip(np.rint(cues.keypoint + keypoint_noise), 0, 255).astype(np.uint8)
    return replace(cues, depth=depth, keypoint=keypoint)


def select_cues(cues: CueSet, active: Iterable[str]) -> CueSet:
    """Zero every cue not listed in `active`"""
    active = set(active)
    unknown = active - set(CUE_KINDS)
    if unknown:
        raise ValidationError(f"unknown cues {sorted(unknown)}")
    return cues.zeroed(kind for kind in CUE_KINDS if kind not in active)


class InjectionOperator:
    """
    Zero-initialized channel mixing between a control branch and base features

    The control branch applies the same seeded linear block once per layer,
    chaining its output; each layer's result is mixed into the base features by
    a 1 x 1 matrix that starts at exactly zero.

    Args:
        base_channels: Channel count of the base features
        control_channels: Channel count of the control latent
        layers: Number of injected layers (2 for images, 12 for video)
        seed: Seed of the duplicated block
    """

    def __init__(self, base_channels: int, control_channels: int = PACKED_CHANNELS, layers: int = 2, seed: int = 0):
        if base_channels < 1 or control_channels < 1:
            raise ValidationError("channel counts must be positive")
        if layers < 1:
            raise ValidationError("at least one injected layer is required")
        self.base_channels = base_channels
        self.control_channels = control_channels
        self.layers = layers
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.block = rng.standard_normal((control_channels, control_channels)) / np.sqrt(control_channels)
        self.zero_convs = [np.zeros((base_channels, control_channels)) for _ in range(layers)]

    def control_features(self, control: np.ndarray) -> List[np.ndarray]:
        """Layer-chained outputs of the duplicated block"""
        outputs = []
        current = np.asarray(control, dtype=np.float64)
        for _ in range(self.layers):
            current = current @ self.block.T
            outputs.append(current)
        return outputs


def inject(
    base_features: Union[np.ndarray, Sequence[np.ndarray]],
    control_latent: Union[LatentTensor, np.ndarray],
    op: InjectionOperator,
) -> Union[np.ndarray, List[np.ndarray]]:
    """
    Add the zero-mixed control features to the base features of each layer

    A single array is treated as layer 0; a sequence must hold one feature map
    per operator layer. Outputs keep the dtype of the base features.
    """
    control = control_latent.data if isinstance(control_latent, LatentTensor) else np.asarray(control_latent)
    single = isinstance(base_features, np.ndarray)
    maps = [base_features] if single else list(base_features)
    if not single and len(maps) != op.layers:
        raise ShapeError(f"operator has {op.layers} layers, got {len(maps)} feature maps")
    if control.shape[-1] != op.control_channels:
        raise ShapeError(f"control has {control.shape[-1]} channels, operator expects {op.control_channels}")

    control_maps = op.control_features(control)
    outputs = []
    for layer, base in enumerate(maps):
        base = np.asarray(base)
        if base.shape[-1] != op.base_channels:
            raise ShapeError(f"base features have {base.shape[-1]} channels, operator expects {op.base_channels}")
        if base.shape[:-1] != control.shape[:-1]:
            raise ShapeError(f"base features {base.shape[:-1]} and control {control.shape[:-1]} disagree")
        mixed = control_maps[layer] @ op.zero_convs[layer].T
        outputs.append((base + mixed).astype(base.dtype, copy=False))
    return outputs[0] if single else outputs


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_latent(latent: LatentTensor, path: PathLike) -> None:
    """Raw little-endian float32 blob plus a JSON sidecar next to it"""
    path = Path(path)
    path.write_bytes(latent.data.astype("<f4").tobytes())
    meta = {"shape": list(latent.shape), "order": "FHWC", "cue": latent.cue, "masked": list(latent.masked)}
    _sidecar(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_latent(path: PathLike) -> LatentTensor:
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
        shape = tuple(int(x) for x in meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{_sidecar(path)}: malformed latent sidecar: {e}")
    if meta.get("order") != "FHWC":
        raise ValidationError(f"{path}: unsupported latent order {meta.get('order')!r}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: {data.size} values do not fill shape {shape}")
    return LatentTensor(data.reshape(shape), cue=meta.get("cue", "unknown"), masked=meta.get("masked", ()))
