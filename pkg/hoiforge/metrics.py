"""
Evaluation metrics: motion fidelity, joint errors, Procrustes alignment,
F-Score, PSNR/SSIM, Frechet distance and candidate filtering
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .exceptions import (
    DegenerateError,
    EmptySetError,
    InsufficientSamplesError,
    LengthMismatchError,
    NotPSDError,
    ShapeError,
    ValidationError,
)
from .geometry import JOINT_COUNT
from .raster import Tracklet

logger = logging.getLogger(__name__)

STATIC_EPSILON = 1e-6
PSNR_CAP = 100.0
PEAK = 255.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_RADIUS = 5
SSIM_C1 = (0.01 * PEAK) ** 2
SSIM_C2 = (0.03 * PEAK) ** 2
PSD_TOLERANCE = 1e-6
DEFAULT_FSCORE_THRESHOLDS = (5.0, 15.0)
REPORT_SCHEMA = 1
METRIC_NAMES = ("fvd_core", "mf", "psnr", "ssim", "mpjpe_mm", "pa_mpjpe_mm", "pa_mpvpe_mm")

PathLike = Union[str, Path]
TrackLike = Union[Tracklet, np.ndarray]


@dataclass(frozen=True, eq=False)
class JointSet:
    """21 hand joints in millimeters tagged as predicted or ground truth"""

    points: np.ndarray
    role: str = "ground_truth"

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.shape != (JOINT_COUNT, 3):
            raise ShapeError(f"a joint set holds {JOINT_COUNT} x 3 points, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValidationError("joint positions must be finite")
        if self.role not in ("predicted", "ground_truth"):
            raise ValidationError(f"unknown joint role '{self.role}'")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


def _points(value: Any) -> np.ndarray:
    if isinstance(value, JointSet):
        return value.points
    return np.asarray(value, dtype=np.float64)


def _displacements(track: TrackLike) -> np.ndarray:
    points = track.points if isinstance(track, Tracklet) else np.asarray(track, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"tracks must be F x 2, got {points.shape}")
    if len(points) < 2:
        raise ShapeError("tracks need at least two frames")
    return np.diff(points, axis=0)


def _correlation_matrix(gen: np.ndarray, gt: np.ndarray, eps: float) -> np.ndarray:
    """M x N mean displacement cosines between M x K x 2 and N x K x 2 stacks"""
    dots = np.einsum("mkd,nkd->mnk", gen, gt)
    gen_sq = np.einsum("mkd,mkd->mk", gen, gen)[:, None, :]
    gt_sq = np.einsum("nkd,nkd->nk", gt, gt)[None, :, :]
    gen_static = np.sqrt(gen_sq) < eps
    gt_static = np.sqrt(gt_sq) < eps
    with np.errstate(divide="ignore", invalid="ignore"):
        cosine = np.clip(dots / np.sqrt(gen_sq * gt_sq), -1.0, 1.0)
    cosine = np.where(gen_static | gt_static, np.where(gen_static & gt_static, 1.0, 0.0), cosine)
    return cosine.mean(axis=2)


def track_correlation(track: TrackLike, other: TrackLike, eps: float = STATIC_EPSILON) -> float:
    """
    Mean cosine between per-frame displacements of two tracks

    Displacements with both norms below eps count as 1, with exactly one below
    eps as 0.

    Raises:
        LengthMismatchError: If the tracks differ in length
    """
    a, b = _displacements(track), _displacements(other)
    if a.shape != b.shape:
        raise LengthMismatchError(f"tracks have {len(a) + 1} and {len(b) + 1} frames")
    return float(_correlation_matrix(a[None], b[None], eps)[0, 0])


def _stack(tracks: Sequence[TrackLike], label: str) -> np.ndarray:
    if not len(tracks):
        raise EmptySetError(f"{label} tracklet set is empty")
    moves = [_displacements(t) for t in tracks]
    if len({m.shape for m in moves}) != 1:
        raise LengthMismatchError(f"{label} tracklets do not share one length")
    return np.stack(moves)


def correlation_matrix(gen_set: Sequence[TrackLike], gt_set: Sequence[TrackLike],
                       eps: float = STATIC_EPSILON) -> np.ndarray:
    gen, gt = _stack(gen_set, "generated"), _stack(gt_set, "ground-truth")
    if gen.shape[1] != gt.shape[1]:
        raise LengthMismatchError("generated and ground-truth tracklets differ in length")
    return _correlation_matrix(gen, gt, eps)


def motion_fidelity(gt_set: Sequence[TrackLike], gen_set: Sequence[TrackLike],
                    eps: float = STATIC_EPSILON) -> float:
    """
    Best-match track correlation averaged in both directions

    Returns:
        mean over generated tracks of their best ground-truth correlation plus
        mean over ground-truth tracks of their best generated correlation, in [-2, 2]
    """
    matrix = correlation_matrix(gen_set, gt_set, eps)
    return float(matrix.max(axis=1).mean() + matrix.max(axis=0).mean())


def mpjpe_root_aligned(pred: Any, gt: Any) -> float:
    """Mean joint distance after subtracting the wrist from both sets (inputs in mm)"""
    pred, gt = _points(pred), _points(gt)
    if pred.shape != gt.shape or pred.shape[-2:] != (JOINT_COUNT, 3):
        raise ShapeError(f"expected matching (..., {JOINT_COUNT}, 3) joints, got {pred.shape} and {gt.shape}")
    pred = pred - pred[..., :1, :]
    gt = gt - gt[..., :1, :]
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def procrustes_align(x: Any, y: Any, with_scale: bool = True) -> SimilarityTransform:
    """
    Closed-form similarity transform taking x onto y

    Minimizes sum ||s R x_i + t - y_i||^2 with a proper rotation.

    Args:
        x: N x 3 source points
        y: N x 3 target points
        with_scale: Estimate s; otherwise s = 1

    Returns:
        SimilarityTransform

    Raises:
        DegenerateError: If the source points all coincide
    """
    x, y = _points(x), _points(y)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ShapeError(f"expected matching N x 3 point sets, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise ShapeError("at least three points are needed for alignment")

    mean_x, mean_y = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mean_x, y - mean_y
    var_x = float((xc ** 2).sum()) / len(x)
    if var_x <= 1e-24:
        raise DegenerateError("source points are all coincident")

    cov = yc.T @ xc / len(x)
    u, d, vt = np.linalg.svd(cov)
    signs = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        signs[2] = -1.0
    rotation = u @ np.diag(signs) @ vt
    scale = float((d * signs).sum() / var_x) if with_scale else 1.0
    translation = mean_y - scale * rotation @ mean_x
    return SimilarityTransform(scale, rotation, translation)


def _pa_error(pred: Any, gt: Any) -> float:
    pred, gt = _points(pred), _points(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"point counts differ: {pred.shape} vs {gt.shape}")
    if pred.ndim == 3:
        return float(np.mean([_pa_error(p, g) for p, g in zip(pred, gt)]))
    aligned = procrustes_align(pred, gt, with_scale=True).apply(pred)
    return float(np.linalg.norm(aligned - gt, axis=1).mean())


def pa_mpjpe(pred: Any, gt: Any) -> float:
    """Mean joint distance after similarity alignment of pred onto gt (mm)"""
    return _pa_error(pred, gt)


def pa_mpvpe(pred_vertices: Any, gt_vertices: Any) -> float:
    """Mean vertex distance after similarity alignment of pred onto gt (mm)"""
    return _pa_error(pred_vertices, gt_vertices)


def fscore(pred_points: Any, gt_points: Any, threshold_mm: float) -> float:
    """
    Harmonic mean of precision and recall at a distance threshold

    A point is correct when its nearest neighbour in the other set is closer
    than the threshold.
    """
    pred, gt = _points(pred_points).reshape(-1, 3), _points(gt_points).reshape(-1, 3)
    if not len(pred) or not len(gt):
        raise EmptySetError("F-Score needs non-empty point sets")
    if threshold_mm <= 0:
        raise ValidationError("F-Score threshold must be positive")
    precision = float(np.mean(cKDTree(gt).query(pred)[0] < threshold_mm))
    recall = float(np.mean(cKDTree(pred).query(gt)[0] < threshold_mm))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def fscores(pred_points: Any, gt_points: Any,
            thresholds: Iterable[float] = DEFAULT_FSCORE_THRESHOLDS) -> Dict[float, float]:
    return {float(t): fscore(pred_points, gt_points, t) for t in thresholds}


def _image_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for 8-bit images, capped at 100 dB"""
    a, b = _image_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(PEAK * PEAK / mse))


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=SSIM_TRUNCATE)[SSIM_RADIUS:-SSIM_RADIUS, SSIM_RADIUS:-SSIM_RADIUS]

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Structural similarity with an 11 x 11 Gaussian window (sigma 1.5)

    Only windows fully inside the image are averaged; color images are scored
    per channel and averaged.
    """
    a, b = _image_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ShapeError(f"expected H x W or H x W x C images, got {a.shape}")
    if min(a.shape[:2]) <= 2 * SSIM_RADIUS:
        raise ShapeError(f"images must exceed {2 * SSIM_RADIUS} pixels per side for SSIM")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def _video_pair(frames_a: Sequence[np.ndarray], frames_b: Sequence[np.ndarray]):
    if len(frames_a) != len(frames_b):
        raise ShapeError(f"videos have {len(frames_a)} and {len(frames_b)} frames")
    if not len(frames_a):
        raise EmptySetError("videos have no frames")
    return zip(frames_a, frames_b)


def video_psnr(frames_a: Sequence[np.ndarray], frames_b: Sequence[np.ndarray]) -> float:
    return float(np.mean([psnr(a, b) for a, b in _video_pair(frames_a, frames_b)]))


def video_ssim(frames_a: Sequence[np.ndarray], frames_b: Sequence[np.ndarray]) -> float:
    return float(np.mean([ssim(a, b) for a, b in _video_pair(frames_a, frames_b)]))


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Gaussian statistics of a feature distribution"""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
            raise ShapeError(f"mean {mean.shape} and covariance {cov.shape} disagree")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9):
            raise ValidationError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)


def feature_stats(features: np.ndarray) -> FeatureStats:
    """
    Sample mean and unbiased covariance of an N x D feature matrix

    Raises:
        InsufficientSamplesError: If fewer than two rows are given
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.ndim != 2:
        raise ShapeError(f"features must be N x D, got {features.shape}")
    if len(features) < 2:
        raise InsufficientSamplesError(f"need at least 2 feature rows, got {len(features)}")
    cov = np.atleast_2d(np.cov(features, rowvar=False))
    return FeatureStats(features.mean(axis=0), (cov + cov.T) / 2.0)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    if values.min() < -PSD_TOLERANCE:
        raise NotPSDError(f"covariance has eigenvalue {values.min():.3g}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """
    Frechet distance between two Gaussians

    The trace of (S1 S2)^1/2 is taken from the eigenvalues of the symmetric
    product S1^1/2 S2 S1^1/2.

    Raises:
        NotPSDError: If an eigenvalue falls below -1e-6
    """
    if a.dim != b.dim:
        raise ShapeError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    root = _psd_sqrt(a.cov)
    product = root @ b.cov @ root
    values = np.linalg.eigvalsh((product + product.T) / 2.0)
    if values.min() < -PSD_TOLERANCE:
        raise NotPSDError(f"covariance product has eigenvalue {values.min():.3g}")
    trace_sqrt = float(np.sqrt(np.clip(values, 0.0, None)).sum())
    diff = a.mean - b.mean
    distance = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    return max(distance, 0.0)


def rank_and_filter(candidates: Sequence[Tuple[Any, float]], discard_fraction: float) -> List[Any]:
    """
    Discard the floor(n * fraction) candidates with the largest pose error

    Ties are broken by id, so the result does not depend on input order.

    Returns:
        kept ids, best first
    """
    if not 0.0 <= discard_fraction < 1.0:
        raise ValidationError(f"discard fraction must be in [0, 1), got {discard_fraction}")
    ids = [c[0] for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValidationError("candidate ids must be unique")
    for cid, error in candidates:
        if not math.isfinite(error):
            raise ValidationError(f"candidate {cid!r} has non-finite pose error")
    ranked = sorted(candidates, key=lambda c: (float(c[1]), c[0]))
    discard = math.floor(len(ranked) * discard_fraction)
    kept = ranked[:len(ranked) - discard]
    logger.debug("Kept %d of %d candidates", len(kept), len(ranked))
    return [c[0] for c in kept]


_RANGES = {"mf": (-2.0, 2.0), "ssim": (-1.0, 1.0)}


@dataclass
class MetricsReport:
    """Aggregated metric values, evaluation counts and skipped metrics"""

    metrics: Dict[str, float] = field(default_factory=dict)
    fscore_at: Dict[float, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def __post_init__(self):
        for name, value in self.metrics.items():
            if name not in METRIC_NAMES:
                raise ValidationError(f"unknown metric '{name}'")
            low, high = _RANGES.get(name, (0.0, math.inf))
            if not low - 1e-9 <= value <= high + 1e-9:
                raise ValidationError(f"{name} = {value} outside [{low}, {high}]")
        for threshold, value in self.fscore_at.items():
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"fscore@{threshold} = {value} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"schema": REPORT_SCHEMA}
        for name in METRIC_NAMES:
            if name in self.metrics:
                data[name] = self.metrics[name]
        if self.fscore_at:
            data["fscore_at"] = {f"{t:g}": v for t, v in sorted(self.fscore_at.items())}
        data["counts"] = dict(self.counts)
        data["skipped"] = sorted(set(self.skipped))
        data["metadata"] = {"created_at": self.created_at}
        return data

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def save_joints(frames: np.ndarray, path: PathLike, role: str = "ground_truth") -> None:
    """Per-frame point arrays (F x N x 3, mm) as JSON"""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    data = {"units": "mm", "role": role, "frames": frames.tolist()}
    Path(path).write_text(json.dumps(data), encoding="utf-8")


def load_joints(path: PathLike) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        frames = np.asarray(data["frames"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{path}: malformed point file: {e}")
    if data.get("units", "mm") != "mm":
        raise ValidationError(f"{path}: units must be mm")
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3 or frames.shape[-1] != 3:
        raise ShapeError(f"{path}: expected F x N x 3 points, got {frames.shape}")
    return frames


def save_features(features: np.ndarray, path: PathLike) -> None:
    """N x D matrix as a little-endian float32 blob with an {n, d} sidecar"""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    path = Path(path)
    path.write_bytes(features.astype("<f4").tobytes())
    path.with_suffix(".json").write_text(
        json.dumps({"n": features.shape[0], "d": features.shape[1]}), encoding="utf-8"
    )


def load_features(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        n, d = int(meta["n"]), int(meta["d"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"{path}: malformed feature sidecar: {e}")
    values = np.fromfile(path, dtype="<f4")
    if values.size != n * d:
        raise ShapeError(f"{path}: {values.size} values do not fill {n} x {d}")
    return values.reshape(n, d).astype(np.float64)
