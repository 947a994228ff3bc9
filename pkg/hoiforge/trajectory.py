"""
Stage-I stand-in: endpoint-driven hand-object pose sequences and their checks
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .exceptions import ValidationError
from .geometry import (
    HandPose,
    KinematicHand,
    ObjectPose,
    TriMesh,
    apply_object_pose,
    forward_kinematics,
    penetration_depth,
    skin_mesh,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EASINGS = ("linear", "smoothstep")

PathLike = Union[str, Path]


def ease(s: Any, easing: str) -> np.ndarray:
    """Map normalized time in [0, 1] through the named easing curve"""
    s = np.asarray(s, dtype=np.float64)
    if easing == "linear":
        return s
    if easing == "smoothstep":
        return s * s * (3.0 - 2.0 * s)
    raise ValidationError(f"unknown easing '{easing}', expected one of {EASINGS}")


@dataclass(frozen=True)
class TrajectoryConfig:
    """Frame count, approach/manipulation split and plausibility tolerance"""

    frame_count: int = 49
    contact_fraction: float = 0.5
    max_penetration_mm: float = 5.0
    easing: str = "smoothstep"
    frame_rate: float = 30.0

    def __post_init__(self):
        if int(self.frame_count) < 2:
            raise ValidationError("frame_count must be at least 2")
        if not 0.0 <= self.contact_fraction <= 1.0:
            raise ValidationError("contact_fraction must lie in [0, 1]")
        if self.max_penetration_mm < 0:
            raise ValidationError("max_penetration_mm must be non-negative")
        if self.easing not in EASINGS:
            raise ValidationError(f"easing must be one of {EASINGS}, got '{self.easing}'")
        if self.frame_rate <= 0:
            raise ValidationError("frame_rate must be positive")


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Ordered (HandPose, ObjectPose) frames sampled at frame_rate"""

    frames: Tuple[Tuple[HandPose, ObjectPose], ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        frames = tuple((hand, obj) for hand, obj in self.frames)
        if len(frames) < 2:
            raise ValidationError("a pose sequence needs at least 2 frames")
        for hand, obj in frames:
            if not isinstance(hand, HandPose) or not isinstance(obj, ObjectPose):
                raise ValidationError("frames must hold (HandPose, ObjectPose) pairs")
        if self.frame_rate <= 0:
            raise ValidationError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def hand_poses(self) -> List[HandPose]:
        return [hand for hand, _ in self.frames]

    @property
    def object_poses(self) -> List[ObjectPose]:
        return [obj for _, obj in self.frames]

    def reversed(self) -> "PoseSequence":
        return PoseSequence(self.frames[::-1], self.frame_rate)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "fps": self.frame_rate,
            "frames": [
                {"hand": hand.to_dict(), "object": obj.to_dict()} for hand, obj in self.frames
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PoseSequence":
        if not isinstance(data, dict):
            raise ValidationError("pose sequence must be a JSON object")
        if data.get("schema") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported pose sequence schema {data.get('schema')!r}")
        try:
            frames = [
                (HandPose.from_dict(item["hand"]), ObjectPose.from_dict(item["object"]))
                for item in data["frames"]
            ]
            return cls(tuple(frames), float(data["fps"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed pose sequence: {e}")


@dataclass(frozen=True, eq=False)
class Endpoints:
    """Initial and target hand poses, initial object pose, optional target object pose"""

    h0: HandPose
    hT: HandPose
    o0: ObjectPose
    oT: Optional[ObjectPose] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "schema": SCHEMA_VERSION,
            "h0": self.h0.to_dict(),
            "hT": self.hT.to_dict(),
            "o0": self.o0.to_dict(),
        }
        if self.oT is not None:
            data["oT"] = self.oT.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Endpoints":
        if not isinstance(data, dict):
            raise ValidationError("endpoints must be a JSON object")
        if data.get("schema") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported endpoints schema {data.get('schema')!r}")
        for key in ("h0", "hT", "o0"):
            if key not in data:
                raise ValidationError(f"endpoints are missing '{key}'")
        target = data.get("oT")
        return cls(
            h0=HandPose.from_dict(data["h0"]),
            hT=HandPose.from_dict(data["hT"]),
            o0=ObjectPose.from_dict(data["o0"]),
            oT=None if target is None else ObjectPose.from_dict(target),
        )


@dataclass(frozen=True)
class ValidationReport:
    """Endpoint flags, finite-difference joint kinematics and per-frame penetration"""

    start_matches: Optional[bool]
    end_matches: Optional[bool]
    max_joint_speed: float
    max_joint_acceleration: float
    penetration_m: Tuple[float, ...]
    tolerance_mm: float
    passed: bool = field(init=False)

    def __post_init__(self):
        # None means the endpoint check was not run
        endpoints_ok = self.start_matches is not False and self.end_matches is not False
        passed = endpoints_ok and self.max_penetration_mm <= self.tolerance_mm
        object.__setattr__(self, "passed", bool(passed))

    @property
    def max_penetration_mm(self) -> float:
        return 1000.0 * max(self.penetration_m, default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pass": self.passed,
            "start_matches": self.start_matches,
            "end_matches": self.end_matches,
            "max_joint_speed_m_s": self.max_joint_speed,
            "max_joint_acceleration_m_s2": self.max_joint_acceleration,
            "max_penetration_mm": self.max_penetration_mm,
            "tolerance_mm": self.tolerance_mm,
            "penetration_m": list(self.penetration_m),
        }


def _slerp_rotvecs(start: np.ndarray, end: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Shortest-arc slerp of each axis-angle row, evaluated at every weight"""
    result = np.empty((len(weights), len(start), 3))
    for k in range(len(start)):
        slerp = Slerp([0.0, 1.0], Rotation.from_rotvec([start[k], end[k]]))
        result[:, k] = slerp(weights).as_rotvec()
    return result


def _interpolate_hands(h0: HandPose, hT: HandPose, weights: np.ndarray) -> List[HandPose]:
    rotations = _slerp_rotvecs(h0.rotations, hT.rotations, weights)
    translations = h0.translation + (hT.translation - h0.translation) * weights[:, None]
    return [HandPose(t, r) for t, r in zip(translations, rotations)]


def _root_transform(pose: HandPose, wrist: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rigid map of the whole hand: x -> R (x - wrist) + wrist + translation, as (R, offset)"""
    rotation = Rotation.from_rotvec(np.array(pose.rotations[0])).as_matrix()
    return rotation, wrist + pose.translation - rotation @ wrist


def interpolate_sequence(
    h0: HandPose,
    hT: HandPose,
    o0: ObjectPose,
    oT: Optional[ObjectPose],
    cfg: TrajectoryConfig,
    wrist_origin: Optional[np.ndarray] = None,
) -> PoseSequence:
    """
    Deterministic hand-object trajectory between endpoint poses

    Hand rotations are slerped per joint on the eased time variable and
    translations follow p0 + (p1 - p0) * ease(s), which for smoothstep is the
    cubic Hermite curve with zero end velocities. The object stays at o0 until
    contact_fraction; afterwards it either screws towards oT or, when oT is
    None, rigidly follows the wrist's motion relative to the contact instant.

    Args:
        h0: Initial hand pose
        hT: Target hand pose
        o0: Initial object pose
        oT: Target object pose, or None for wrist-follow
        cfg: Trajectory settings
        wrist_origin: Rest wrist position the root rotation pivots about
            (the bundled template's wrist sits at the origin)

    Returns:
        PoseSequence of cfg.frame_count frames whose first and last frames are
        the given endpoints exactly
    """
    wrist = np.zeros(3) if wrist_origin is None else np.asarray(wrist_origin, dtype=np.float64)
    count = int(cfg.frame_count)
    times = np.arange(count) / (count - 1)
    hands = _interpolate_hands(h0, hT, ease(times, cfg.easing))
    hands[0], hands[-1] = h0, hT

    contact = cfg.contact_fraction
    objects: List[ObjectPose] = []
    if oT is not None:
        if contact < 1.0:
            local = np.clip((times - contact) / (1.0 - contact), 0.0, 1.0)
        else:
            local = (times >= 1.0).astype(np.float64)
        weights = ease(local, cfg.easing)
        rotations = _slerp_rotvecs(o0.rotation[None], oT.rotation[None], weights)[:, 0]
        translations = o0.translation + (oT.translation - o0.translation) * weights[:, None]
        for s, rotation, translation in zip(times, rotations, translations):
            objects.append(o0 if s <= contact else ObjectPose(rotation, translation))
        objects[-1] = oT
    else:
        contact_hand = _interpolate_hands(h0, hT, ease(np.array([contact]), cfg.easing))[0]
        contact_rotation, contact_offset = _root_transform(contact_hand, wrist)
        base_rotation = o0.rotation_matrix()
        for s, hand in zip(times, hands):
            if s <= contact:
                objects.append(o0)
                continue
            rotation, offset = _root_transform(hand, wrist)
            relative = rotation @ contact_rotation.T
            new_rotation = Rotation.from_matrix(relative @ base_rotation).as_rotvec()
            new_translation = relative @ (o0.translation - contact_offset) + offset
            objects.append(ObjectPose(new_rotation, new_translation))
    objects[0] = o0

    logger.debug("Interpolated %d frames (%s easing, contact at %.2f)", count, cfg.easing, contact)
    return PoseSequence(tuple(zip(hands, objects)), cfg.frame_rate)


def _same_hand(a: HandPose, b: HandPose) -> bool:
    return np.array_equal(a.translation, b.translation) and np.array_equal(a.rotations, b.rotations)


def _same_object(a: ObjectPose, b: ObjectPose) -> bool:
    return np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def validate_sequence(
    seq: PoseSequence,
    hand: KinematicHand,
    object_mesh: TriMesh,
    cfg: TrajectoryConfig,
    endpoints: Optional[Endpoints] = None,
) -> ValidationReport:
    """
    Check endpoint fidelity, joint kinematics and hand-object penetration

    Args:
        seq: Sequence to check
        hand: Hand model used to pose joints and the surface
        object_mesh: Object mesh in its own frame
        cfg: Supplies the penetration tolerance
        endpoints: Expected endpoints; both flags are None when omitted

    Returns:
        ValidationReport

    Raises:
        NonWatertightError: If the object mesh is not watertight
    """
    start_matches = end_matches = None
    if endpoints is not None:
        first_hand, first_object = seq.frames[0]
        last_hand, last_object = seq.frames[-1]
        start_matches = _same_hand(first_hand, endpoints.h0) and _same_object(first_object, endpoints.o0)
        end_matches = _same_hand(last_hand, endpoints.hT)
        if endpoints.oT is not None:
            end_matches = end_matches and _same_object(last_object, endpoints.oT)

    joints = np.stack([forward_kinematics(hand, pose) for pose in seq.hand_poses])
    velocity = np.diff(joints, axis=0) * seq.frame_rate
    max_speed = float(np.linalg.norm(velocity, axis=-1).max())
    max_acceleration = 0.0
    if len(seq) > 2:
        acceleration = np.diff(velocity, axis=0) * seq.frame_rate
        max_acceleration = float(np.linalg.norm(acceleration, axis=-1).max())

    penetration = tuple(
        penetration_depth(skin_mesh(hand, hand_pose), apply_object_pose(object_mesh, object_pose))
        for hand_pose, object_pose in seq.frames
    )
    report = ValidationReport(
        start_matches=start_matches,
        end_matches=end_matches,
        max_joint_speed=max_speed,
        max_joint_acceleration=max_acceleration,
        penetration_m=penetration,
        tolerance_mm=cfg.max_penetration_mm,
    )
    logger.info(
        "Sequence validation: pass=%s, max penetration %.2f mm, max joint speed %.3f m/s",
        report.passed, report.max_penetration_mm, max_speed,
    )
    return report


def _read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON: {e}")


def save_pose_sequence(seq: PoseSequence, path: PathLike) -> None:
    Path(path).write_text(json.dumps(seq.to_dict(), indent=1), encoding="utf-8")


def load_pose_sequence(path: PathLike) -> PoseSequence:
    return PoseSequence.from_dict(_read_json(path))


def save_endpoints(endpoints: Endpoints, path: PathLike) -> None:
    Path(path).write_text(json.dumps(endpoints.to_dict(), indent=1), encoding="utf-8")


def load_endpoints(path: PathLike) -> Endpoints:
    return Endpoints.from_dict(_read_json(path))
