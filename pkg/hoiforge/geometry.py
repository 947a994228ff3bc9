"""
Articulated hand model, rigid object meshes and hand-object proximity queries
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import trimesh
from scipy.spatial.transform import Rotation
from trimesh.ray.ray_triangle import RayMeshIntersector

from .exceptions import HOIForgeError, NonWatertightError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

JOINT_COUNT = 21
ARTICULATED_COUNT = 16
POSE_SIZE = 3 + 3 * ARTICULATED_COUNT
HAND_LABEL = 1
OBJECT_LABEL = 2

# Keypoint layout: wrist, then four joints per finger from base to tip in the
# order thumb, index, middle, ring, little.
HAND_PARENTS = (-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)
FINGER_NAMES = ("thumb", "index", "middle", "ring", "little")

# Rest pose of the bundled hand, meters, palm in the z = 0 plane, wrist at origin
TEMPLATE_JOINTS = (
    (0.0, 0.0, 0.0),
    (0.025, 0.020, 0.0), (0.045, 0.045, 0.0), (0.060, 0.070, 0.0), (0.070, 0.090, 0.0),
    (0.022, 0.085, 0.0), (0.025, 0.125, 0.0), (0.027, 0.150, 0.0), (0.028, 0.172, 0.0),
    (0.000, 0.090, 0.0), (0.000, 0.133, 0.0), (0.000, 0.161, 0.0), (0.000, 0.185, 0.0),
    (-0.020, 0.085, 0.0), (-0.022, 0.125, 0.0), (-0.023, 0.151, 0.0), (-0.024, 0.173, 0.0),
    (-0.038, 0.075, 0.0), (-0.043, 0.105, 0.0), (-0.046, 0.123, 0.0), (-0.048, 0.140, 0.0),
)
TUBE_SIDES = 8
TUBE_RINGS = 5
# Radius per bone position along a finger: palm bone, proximal, middle, distal
TUBE_RADII = (0.011, 0.009, 0.008, 0.007)

RAY_DIRECTION = np.array([1.0, 0.5, 0.25]) / np.linalg.norm([1.0, 0.5, 0.25])

_MIN_DOUBLE_AREA = 1e-20

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _as_vector3(values: Any, name: str) -> np.ndarray:
    try:
        vector = np.array(values, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be 3 numbers")
    if vector.shape != (3,):
        raise ValidationError(f"{name} must be 3 numbers, got {vector.size}")
    if not np.all(np.isfinite(vector)):
        raise ValidationError(f"{name} must be finite")
    return vector


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh in meters with an instance label used for segmentation"""

    vertices: np.ndarray
    faces: np.ndarray
    instance_id: int = OBJECT_LABEL

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64)
        faces = np.array(self.faces, dtype=np.int64)
        if vertices.size == 0:
            vertices = vertices.reshape(0, 3)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ShapeError(f"vertices must be N x 3, got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ShapeError(f"faces must be M x 3, got {faces.shape}")
        if not np.all(np.isfinite(vertices)):
            raise ValidationError("mesh vertices must be finite")
        if len(faces):
            if faces.min() < 0 or faces.max() >= len(vertices):
                raise ValidationError(
                    f"face index out of range for {len(vertices)} vertices"
                )
            doubled = _double_areas(vertices[faces])
            bad = np.flatnonzero(doubled <= _MIN_DOUBLE_AREA)
            if bad.size:
                raise ValidationError(f"degenerate faces: {bad[:10].tolist()}")
        if int(self.instance_id) < 0:
            raise ValidationError("instance_id must be non-negative")

        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(self, "faces", _frozen(faces))
        object.__setattr__(self, "instance_id", int(self.instance_id))

    @property
    def triangles(self) -> np.ndarray:
        """Corner positions of every face, M x 3 x 3"""
        return self.vertices[self.faces]

    @cached_property
    def surface(self) -> trimesh.Trimesh:
        """The same mesh as an unprocessed trimesh.Trimesh; vertex and face order are kept"""
        return trimesh.Trimesh(vertices=self.vertices.copy(), faces=self.faces.copy(), process=False)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.instance_id)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class ObjectPose:
    """6-DoF rigid pose: axis-angle rotation (radians) then translation (meters)"""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(_as_vector3(self.rotation, "object rotation")))
        object.__setattr__(self, "translation", _frozen(_as_vector3(self.translation, "object translation")))

    @classmethod
    def identity(cls) -> "ObjectPose":
        return cls()

    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_rotvec(np.array(self.rotation)).as_matrix()

    def matrix(self) -> np.ndarray:
        transform = np.eye(4)
        transform[:3, :3] = self.rotation_matrix()
        transform[:3, 3] = self.translation
        return transform

    def to_dict(self) -> Dict[str, Any]:
        return {"rot": self.rotation.tolist(), "trans": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ObjectPose":
        if not isinstance(data, dict) or "rot" not in data or "trans" not in data:
            raise ValidationError("object pose needs 'rot' and 'trans'")
        return cls(data["rot"], data["trans"])


@dataclass(frozen=True, eq=False)
class HandPose:
    """
    51-scalar hand pose

    translation is the global offset in meters; rotations holds 16 axis-angle
    vectors, row 0 rotating the whole hand about the wrist and row i rotating
    the i-th articulated joint of the KinematicHand.
    """

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotations: np.ndarray = field(default_factory=lambda: np.zeros((ARTICULATED_COUNT, 3)))

    def __post_init__(self):
        translation = _as_vector3(self.translation, "hand translation")
        try:
            rotations = np.array(self.rotations, dtype=np.float64)
        except (TypeError, ValueError):
            raise ValidationError("hand rotations must be 16 axis-angle vectors")
        if rotations.shape != (ARTICULATED_COUNT, 3):
            raise ValidationError(
                f"hand rotations must be {ARTICULATED_COUNT} x 3, got {rotations.shape}"
            )
        if not np.all(np.isfinite(rotations)):
            raise ValidationError("hand rotations must be finite")
        object.__setattr__(self, "translation", _frozen(translation))
        object.__setattr__(self, "rotations", _frozen(rotations))

    @classmethod
    def identity(cls) -> "HandPose":
        return cls()

    @classmethod
    def from_vector(cls, vector: Any) -> "HandPose":
        values = np.asarray(vector, dtype=np.float64).reshape(-1)
        if values.size != POSE_SIZE:
            raise ValidationError(f"hand pose needs {POSE_SIZE} scalars, got {values.size}")
        return cls(values[:3], values[3:].reshape(ARTICULATED_COUNT, 3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotations.reshape(-1)])

    def to_dict(self) -> Dict[str, Any]:
        return {"trans": self.translation.tolist(), "rots": self.rotations.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HandPose":
        if not isinstance(data, dict) or "trans" not in data or "rots" not in data:
            raise ValidationError("hand pose needs 'trans' and 'rots'")
        return cls(data["trans"], data["rots"])


@dataclass(frozen=True, eq=False)
class KinematicHand:
    """
    21-joint articulated hand with a skinned template surface

    Joints with children are articulated (16 of them, wrist first); leaves are
    fingertips, placed by a fixed offset in the frame of their distal joint.
    Skinning weights are indexed by articulated joint.
    """

    parents: np.ndarray
    template_joints: np.ndarray
    template_mesh: TriMesh
    skinning_weights: np.ndarray
    fingertip_offsets: np.ndarray
    articulated: Tuple[int, ...] = field(init=False)
    fingertips: Tuple[int, ...] = field(init=False)
    articulated_parents: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        parents = np.array(self.parents, dtype=np.int64).reshape(-1)
        joints = np.array(self.template_joints, dtype=np.float64)
        weights = np.array(self.skinning_weights, dtype=np.float64)
        offsets = np.array(self.fingertip_offsets, dtype=np.float64)

        if parents.shape != (JOINT_COUNT,):
            raise ValidationError(f"hand needs {JOINT_COUNT} parents, got {parents.size}")
        if parents[0] != -1:
            raise ValidationError("joint 0 (wrist) must be the root")
        for child in range(1, JOINT_COUNT):
            if not 0 <= parents[child] < child:
                raise ValidationError(
                    f"parent of joint {child} must precede it, got {parents[child]}"
                )
        if joints.shape != (JOINT_COUNT, 3) or not np.all(np.isfinite(joints)):
            raise ValidationError("template_joints must be 21 finite 3-D points")

        has_children = np.zeros(JOINT_COUNT, dtype=bool)
        has_children[parents[1:]] = True
        articulated = tuple(int(i) for i in np.flatnonzero(has_children))
        fingertips = tuple(int(i) for i in np.flatnonzero(~has_children))
        if len(articulated) != ARTICULATED_COUNT or len(fingertips) != 5:
            raise ValidationError(
                f"joint tree must have 16 articulated joints and 5 tips, "
                f"got {len(articulated)} and {len(fingertips)}"
            )
        index_of = {joint: i for i, joint in enumerate(articulated)}
        articulated_parents = tuple(
            -1 if parents[joint] < 0 else index_of[int(parents[joint])] for joint in articulated
        )

        vertex_count = len(self.template_mesh.vertices)
        if weights.shape != (vertex_count, ARTICULATED_COUNT):
            raise ValidationError(
                f"skinning weights must be {vertex_count} x {ARTICULATED_COUNT}, got {weights.shape}"
            )
        if np.any(weights < 0):
            raise ValidationError("skinning weights must be non-negative")
        if vertex_count and np.max(np.abs(weights.sum(axis=1) - 1.0)) > 1e-6:
            raise ValidationError("skinning weights of every vertex must sum to 1")

        if offsets.shape != (5, 3):
            raise ValidationError("fingertip_offsets must be 5 x 3")
        tips = np.array(fingertips)
        if not np.allclose(joints[tips], joints[parents[tips]] + offsets, atol=1e-9):
            raise ValidationError("template fingertips disagree with fingertip_offsets")

        object.__setattr__(self, "parents", _frozen(parents))
        object.__setattr__(self, "template_joints", _frozen(joints))
        object.__setattr__(self, "skinning_weights", _frozen(weights))
        object.__setattr__(self, "fingertip_offsets", _frozen(offsets))
        object.__setattr__(self, "articulated", articulated)
        object.__setattr__(self, "fingertips", fingertips)
        object.__setattr__(self, "articulated_parents", articulated_parents)

    @property
    def joint_count(self) -> int:
        return JOINT_COUNT

    @property
    def bones(self) -> Tuple[Tuple[int, int], ...]:
        """The 20 (parent, child) tree edges"""
        return tuple((int(self.parents[c]), c) for c in range(1, JOINT_COUNT))

    @property
    def wrist(self) -> np.ndarray:
        return self.template_joints[0]


def _global_transforms(hand: KinematicHand, pose: HandPose) -> np.ndarray:
    """World transforms of the 16 articulated joints, 16 x 4 x 4"""
    rotations = Rotation.from_rotvec(np.array(pose.rotations)).as_matrix()
    rest = hand.template_joints[list(hand.articulated)]
    transforms = np.empty((ARTICULATED_COUNT, 4, 4))
    for i, parent in enumerate(hand.articulated_parents):
        local = np.eye(4)
        local[:3, :3] = rotations[i]
        if parent < 0:
            local[:3, 3] = rest[i] + pose.translation
            transforms[i] = local
        else:
            local[:3, 3] = rest[i] - rest[parent]
            transforms[i] = transforms[parent] @ local
    return transforms


def forward_kinematics(hand: KinematicHand, pose: HandPose) -> np.ndarray:
    """
    Posed positions of all 21 joints

    Args:
        hand: Kinematic hand model
        pose: 51-scalar pose

    Returns:
        21 x 3 joint positions in meters
    """
    transforms = _global_transforms(hand, pose)
    joints = np.empty((JOINT_COUNT, 3))
    joints[list(hand.articulated)] = transforms[:, :3, 3]

    index_of = {joint: i for i, joint in enumerate(hand.articulated)}
    distal = [index_of[int(hand.parents[tip])] for tip in hand.fingertips]
    frames = transforms[distal]
    joints[list(hand.fingertips)] = (
        np.einsum("kij,kj->ki", frames[:, :3, :3], hand.fingertip_offsets) + frames[:, :3, 3]
    )
    return joints


def linear_blend(vertices: np.ndarray, weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """
    Blend per-joint rigid transforms per vertex

    Args:
        vertices: V x 3 rest positions
        weights: V x K convex weights
        transforms: K x 4 x 4 rest-relative transforms

    Returns:
        V x 3 skinned positions
    """
    blended = np.einsum("vk,kij->vij", weights, transforms[:, :3, :])
    return np.einsum("vij,vj->vi", blended[:, :, :3], vertices) + blended[:, :, 3]


def skin_mesh(hand: KinematicHand, pose: HandPose) -> TriMesh:
    """Linear blend skinning of the template surface; faces and label unchanged"""
    transforms = _global_transforms(hand, pose)
    rest = hand.template_joints[list(hand.articulated)]
    relative = transforms.copy()
    relative[:, :3, 3] -= np.einsum("kij,kj->ki", transforms[:, :3, :3], rest)
    vertices = linear_blend(hand.template_mesh.vertices, hand.skinning_weights, relative)
    return hand.template_mesh.with_vertices(vertices)


def apply_object_pose(mesh: TriMesh, pose: ObjectPose) -> TriMesh:
    """Rotate then translate every vertex; the instance label is preserved"""
    vertices = mesh.vertices @ pose.rotation_matrix().T + pose.translation
    return mesh.with_vertices(vertices)


def _double_areas(triangles: np.ndarray) -> np.ndarray:
    edge1 = triangles[:, 1] - triangles[:, 0]
    edge2 = triangles[:, 2] - triangles[:, 0]
    return np.linalg.norm(np.cross(edge1, edge2), axis=1)


def is_watertight(mesh: TriMesh) -> bool:
    """True when every undirected edge is shared by exactly two faces"""
    if not len(mesh.faces):
        return True
    return bool(mesh.surface.is_watertight)


def ray_hit_counts(points: np.ndarray, mesh: TriMesh, direction: np.ndarray = RAY_DIRECTION) -> np.ndarray:
    """Number of faces crossed by a ray from every point along `direction`"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(points) or not len(mesh.faces):
        return np.zeros(len(points), dtype=np.int64)
    # always the exact triangle intersector, never embree
    intersector = RayMeshIntersector(mesh.surface)
    _, index_ray = intersector.intersects_id(
        ray_origins=points,
        ray_directions=np.broadcast_to(direction, points.shape),
        multiple_hits=True,
    )
    return np.bincount(np.asarray(index_ray, dtype=np.int64), minlength=len(points))


def point_in_mesh(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Containment by ray parity along RAY_DIRECTION"""
    return ray_hit_counts(points, mesh) % 2 == 1


def signed_distance(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """
    Signed distance to a closed mesh surface, negative inside

    Args:
        points: K x 3 query points
        mesh: Watertight mesh

    Returns:
        K distances in meters
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(points):
        return np.zeros(0)
    _, distance, _ = trimesh.proximity.closest_point(mesh.surface, points)
    return np.where(point_in_mesh(points, mesh), -distance, distance)


def penetration_depth(hand_mesh: TriMesh, object_mesh: TriMesh) -> float:
    """
    Deepest hand vertex inside the object

    Args:
        hand_mesh: Posed hand surface
        object_mesh: Posed, watertight object surface

    Returns:
        Penetration in meters, 0.0 when nothing is inside

    Raises:
        NonWatertightError: If the object is not edge-manifold
    """
    if not is_watertight(object_mesh):
        raise NonWatertightError("object mesh is not watertight")
    if not len(hand_mesh.vertices) or not len(object_mesh.faces):
        return 0.0

    low, high = object_mesh.bounds()
    hand_low, hand_high = hand_mesh.bounds()
    if np.any(hand_high < low) or np.any(hand_low > high):
        return 0.0

    vertices = hand_mesh.vertices
    candidates = vertices[np.all((vertices >= low) & (vertices <= high), axis=1)]
    if not len(candidates):
        return 0.0
    depth = -signed_distance(candidates, object_mesh)
    return float(max(0.0, depth.max()))


def build_template_hand() -> KinematicHand:
    """
    Procedural low-poly hand bundled with the package

    Every bone is an open octagonal tube of 5 rings; rings are driven by the
    bone's parent joint and blend half-way into the child joint at the far end.
    """
    parents = np.array(HAND_PARENTS)
    joints = np.array(TEMPLATE_JOINTS, dtype=np.float64)
    has_children = np.zeros(JOINT_COUNT, dtype=bool)
    has_children[parents[1:]] = True
    articulated = np.flatnonzero(has_children)
    index_of = {int(joint): i for i, joint in enumerate(articulated)}

    angles = 2.0 * np.pi * np.arange(TUBE_SIDES) / TUBE_SIDES
    vertices, faces, weights = [], [], []
    for child in range(1, JOINT_COUNT):
        parent = int(parents[child])
        start, axis = joints[parent], joints[child] - joints[parent]
        direction = axis / np.linalg.norm(axis)
        helper = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        side = np.cross(direction, helper)
        side /= np.linalg.norm(side)
        up = np.cross(direction, side)
        radius = TUBE_RADII[(child - 1) % 4]

        base = len(vertices)
        for ring in range(TUBE_RINGS):
            s = ring / (TUBE_RINGS - 1)
            center = start + s * axis
            for angle in angles:
                vertices.append(center + radius * (np.cos(angle) * side + np.sin(angle) * up))
                row = np.zeros(ARTICULATED_COUNT)
                blend = 0.5 * max(0.0, (s - 0.5) / 0.5) if child in index_of else 0.0
                row[index_of[parent]] = 1.0 - blend
                if blend:
                    row[index_of[child]] += blend
                weights.append(row)
        for ring in range(TUBE_RINGS - 1):
            for k in range(TUBE_SIDES):
                a = base + ring * TUBE_SIDES + k
                b = base + ring * TUBE_SIDES + (k + 1) % TUBE_SIDES
                faces.append((a, b, b + TUBE_SIDES))
                faces.append((a, b + TUBE_SIDES, a + TUBE_SIDES))

    tips = np.flatnonzero(~has_children)
    return KinematicHand(
        parents=parents,
        template_joints=joints,
        template_mesh=TriMesh(np.array(vertices), np.array(faces), HAND_LABEL),
        skinning_weights=np.array(weights),
        fingertip_offsets=joints[tips] - joints[parents[tips]],
    )


def load_obj(path: PathLike, instance_id: int = OBJECT_LABEL) -> TriMesh:
    """
    Read a Wavefront OBJ file as one triangle mesh

    Polygons are triangulated; normals, texture coordinates and materials are
    ignored. Positions split by texture seams are merged back so edge
    sharing reflects the surface.

    Raises:
        ValidationError: If the file cannot be parsed or holds no faces
    """
    try:
        loaded = trimesh.load(str(path), file_type="obj", process=False, force="mesh")
    except Exception as e:
        raise ValidationError(f"{path}: cannot read OBJ: {e}")
    if not isinstance(loaded, trimesh.Trimesh) or not len(loaded.faces):
        raise ValidationError(f"{path}: no faces")
    if len(np.unique(loaded.vertices, axis=0)) < len(loaded.vertices):
        loaded.merge_vertices(merge_tex=True, merge_norm=True)
    try:
        mesh = TriMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces), instance_id)
    except HOIForgeError as e:
        raise ValidationError(f"{path}: {e}")
    logger.debug("Loaded %s: %d vertices, %d faces", path, len(mesh.vertices), len(mesh.faces))
    return mesh


def hand_to_dict(hand: KinematicHand) -> Dict[str, Any]:
    weights = []
    for row in hand.skinning_weights:
        nonzero = np.flatnonzero(row)
        weights.append([[int(j), float(row[j])] for j in nonzero])
    return {
        "schema": 1,
        "parents": hand.parents.tolist(),
        "template_joints": hand.template_joints.tolist(),
        "fingertip_offsets": hand.fingertip_offsets.tolist(),
        "mesh": {
            "vertices": hand.template_mesh.vertices.tolist(),
            "faces": hand.template_mesh.faces.tolist(),
        },
        "weights": weights,
    }


def hand_from_dict(data: Dict[str, Any]) -> KinematicHand:
    try:
        mesh = TriMesh(data["mesh"]["vertices"], data["mesh"]["faces"], HAND_LABEL)
        weights = np.zeros((len(mesh.vertices), ARTICULATED_COUNT))
        if len(data["weights"]) != len(mesh.vertices):
            raise ValidationError("one weight list per template vertex is required")
        for v, entries in enumerate(data["weights"]):
            for joint, weight in entries:
                weights[v, int(joint)] = float(weight)
        return KinematicHand(
            parents=data["parents"],
            template_joints=data["template_joints"],
            template_mesh=mesh,
            skinning_weights=weights,
            fingertip_offsets=data["fingertip_offsets"],
        )
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise ValidationError(f"malformed hand model: {e}")


def save_hand_json(hand: KinematicHand, path: PathLike) -> None:
    Path(path).write_text(json.dumps(hand_to_dict(hand)), encoding="utf-8")


def load_hand_json(path: PathLike) -> KinematicHand:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON: {e}")
    return hand_from_dict(data)


def load_hand(path: Optional[PathLike] = None) -> KinematicHand:
    """Hand model from a JSON file, or the bundled template when no path is given"""
    if path is None:
        return build_template_hand()
    return load_hand_json(path)
