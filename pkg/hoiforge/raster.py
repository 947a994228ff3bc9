"""
Pinhole projection, z-buffered rasterization of depth and instance labels,
hand-keypoint drawing and ground-truth tracklets
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import trimesh
from PIL import Image

from .exceptions import BehindCameraError, NoForegroundError, ShapeError, ValidationError
from .geometry import HAND_PARENTS, JOINT_COUNT, TriMesh

logger = logging.getLogger(__name__)

NEAR = 0.01
FAR = 10.0
MIN_DEPTH = 1e-6
VISIBILITY_TOLERANCE = 1e-3
DEPTH_UNITS_PER_METER = 10000.0

REFERENCE_SIZE = 480.0
LINE_WIDTH = 3.0
DISC_RADIUS = 4.0
WRIST_COLOR = (255, 255, 255)
FINGER_COLORS = (
    (255, 64, 64),
    (255, 200, 0),
    (64, 255, 64),
    (0, 200, 255),
    (200, 64, 255),
)

PathLike = Union[str, Path]


def _segmentation_palette() -> List[int]:
    palette = [0, 0, 0, 220, 180, 140, 60, 120, 220, 80, 200, 120]
    for label in range(4, 256):
        palette += [(53 * label) % 256, (97 * label) % 256, (151 * label) % 256]
    return palette


SEG_PALETTE = _segmentation_palette()


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera: intrinsics in pixels, world-to-camera extrinsics"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError("image size must be positive")
        if not 0 <= self.cx < self.width or not 0 <= self.cy < self.height:
            raise ValidationError("principal point must lie inside the image")
        try:
            extrinsics = np.array(self.extrinsics, dtype=np.float64).reshape(4, 4)
        except (TypeError, ValueError):
            raise ValidationError("extrinsics must be a 4 x 4 matrix")
        if not np.all(np.isfinite(extrinsics)) or not np.allclose(extrinsics[3], [0, 0, 0, 1]):
            raise ValidationError("extrinsics must be a finite rigid transform")
        extrinsics.setflags(write=False)
        object.__setattr__(self, "extrinsics", extrinsics)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def default(cls) -> "Camera":
        """480 x 720 camera used with the bundled toy assets"""
        return cls(fx=600.0, fy=600.0, cx=360.0, cy=240.0, width=720, height=480)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.extrinsics[:3, :3].T + self.extrinsics[:3, 3]


def project_points(cam: Camera, points: np.ndarray) -> np.ndarray:
    """
    Project world points without raising

    Returns:
        N x 3 array of (u, v, depth); u and v are meaningless where depth <= 0
    """
    local = cam.to_camera(points)
    z = local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * local[:, 0] / z + cam.cx
        v = cam.fy * local[:, 1] / z + cam.cy
    return np.stack([u, v, z], axis=1)


def project_point(cam: Camera, p: Any) -> Tuple[float, float, float]:
    """
    Project one world point to pixel coordinates

    Args:
        cam: Camera
        p: 3-D point in world coordinates (meters)

    Returns:
        (u, v, depth) with depth the camera-space z

    Raises:
        BehindCameraError: If the camera-space z is at most 1e-6 m
    """
    x, y, z = cam.to_camera(p)[0]
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"point at camera depth {z:.3g} m cannot be projected")
    return float(cam.fx * x / z + cam.cx), float(cam.fy * y / z + cam.cy), float(z)


def _pixel_span(low: float, high: float, size: int) -> Optional[Tuple[int, int]]:
    """Inclusive index range of pixels whose centers fall in [low, high]"""
    if not (math.isfinite(low) and math.isfinite(high)):
        return None
    low, high = max(low, -1.0), min(high, size + 1.0)
    start = max(math.ceil(low - 0.5), 0)
    stop = min(math.floor(high - 0.5), size - 1)
    if start > stop:
        return None
    return start, stop


def rasterize(meshes: Sequence[TriMesh], cam: Camera) -> Tuple[np.ndarray, np.ndarray]:
    """
    Z-buffered depth and instance-label maps

    Pixel (i, j) is sampled at (j + 0.5, i + 0.5); depth is interpolated
    perspective-correctly and no faces are culled. Meshes are drawn in
    ascending instance_id and faces in index order with a strict depth test, so
    ties resolve to the lower instance id, then the lower face index.
    A triangle with any corner nearer than the 1 cm near plane is dropped
    whole; triangles are not clipped.

    Args:
        meshes: Posed meshes; instance_id 0 is reserved for background
        cam: Camera

    Returns:
        (depth, seg): H x W float64 meters with 0 as background, H x W uint8 labels
    """
    height, width = cam.shape
    zbuffer = np.full((height, width), np.inf)
    labels = np.zeros((height, width), dtype=np.uint8)

    for mesh in sorted(meshes, key=lambda m: m.instance_id):
        if not 1 <= mesh.instance_id <= 255:
            raise ValidationError(f"instance_id must be in 1..255, got {mesh.instance_id}")
        if not len(mesh.faces):
            continue
        projected = project_points(cam, mesh.vertices)[mesh.faces]
        u, v, z = projected[..., 0], projected[..., 1], projected[..., 2]
        area = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (u[:, 2] - u[:, 0]) * (v[:, 1] - v[:, 0])
        drawable = np.all(z >= NEAR, axis=1) & (np.abs(area) > 1e-12)

        for t in np.flatnonzero(drawable):
            cols = _pixel_span(u[t].min(), u[t].max(), width)
            rows = _pixel_span(v[t].min(), v[t].max(), height)
            if cols is None or rows is None:
                continue
            x = np.arange(cols[0], cols[1] + 1) + 0.5
            y = (np.arange(rows[0], rows[1] + 1) + 0.5)[:, None]
            (u0, u1, u2), (v0, v1, v2), (z0, z1, z2) = u[t], v[t], z[t]
            l0 = ((u1 - x) * (v2 - y) - (u2 - x) * (v1 - y)) / area[t]
            l1 = ((u2 - x) * (v0 - y) - (u0 - x) * (v2 - y)) / area[t]
            l2 = ((u0 - x) * (v1 - y) - (u1 - x) * (v0 - y)) / area[t]
            inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
            if not inside.any():
                continue
            with np.errstate(divide="ignore"):
                depth = 1.0 / (l0 / z0 + l1 / z1 + l2 / z2)
            depth_view = zbuffer[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1]
            label_view = labels[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1]
            closer = inside & (depth <= FAR) & (depth < depth_view)
            depth_view[closer] = depth[closer]
            label_view[closer] = mesh.instance_id

    depth_map = np.where(np.isinf(zbuffer), 0.0, zbuffer)
    return depth_map, labels


def joint_color(joint: int) -> Tuple[int, int, int]:
    if joint == 0:
        return WRIST_COLOR
    return FINGER_COLORS[(joint - 1) // 4]


def _stamp_segment(image: np.ndarray, a: np.ndarray, b: np.ndarray, half_width: float, color) -> None:
    height, width = image.shape[:2]
    cols = _pixel_span(min(a[0], b[0]) - half_width, max(a[0], b[0]) + half_width, width)
    rows = _pixel_span(min(a[1], b[1]) - half_width, max(a[1], b[1]) + half_width, height)
    if cols is None or rows is None:
        return
    x = np.arange(cols[0], cols[1] + 1) + 0.5
    y = (np.arange(rows[0], rows[1] + 1) + 0.5)[:, None]
    direction = b - a
    length_sq = float(direction @ direction)
    if length_sq > 0:
        t = np.clip(((x - a[0]) * direction[0] + (y - a[1]) * direction[1]) / length_sq, 0.0, 1.0)
    else:
        t = np.zeros((len(y), len(x)))
    distance_sq = (x - a[0] - t * direction[0]) ** 2 + (y - a[1] - t * direction[1]) ** 2
    view = image[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1]
    view[distance_sq <= half_width * half_width] = color


def _stamp_disc(image: np.ndarray, center: np.ndarray, radius: float, color) -> None:
    height, width = image.shape[:2]
    cols = _pixel_span(center[0] - radius, center[0] + radius, width)
    rows = _pixel_span(center[1] - radius, center[1] + radius, height)
    if cols is None or rows is None:
        return
    x = np.arange(cols[0], cols[1] + 1) + 0.5
    y = (np.arange(rows[0], rows[1] + 1) + 0.5)[:, None]
    view = image[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1]
    view[(x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius * radius] = color


def render_keypoints(joints3d: np.ndarray, cam: Camera) -> np.ndarray:
    """
    Draw the 21-joint skeleton as an RGB image

    Bones are 3 px wide and joints are discs of radius 4 px at 480 x 720,
    scaled with min(H, W) / 480; bones take the color of their child joint and
    are drawn before the joints. Joints behind the camera are skipped together
    with their bones. No anti-aliasing.

    Args:
        joints3d: 21 x 3 world positions
        cam: Camera

    Returns:
        H x W x 3 uint8 image, black background
    """
    joints3d = np.asarray(joints3d, dtype=np.float64)
    if joints3d.shape != (JOINT_COUNT, 3):
        raise ShapeError(f"expected {JOINT_COUNT} x 3 joints, got {joints3d.shape}")
    if not np.all(np.isfinite(joints3d)):
        raise ValidationError("joints must be finite")

    height, width = cam.shape
    scale = min(height, width) / REFERENCE_SIZE
    image = np.zeros((height, width, 3), dtype=np.uint8)
    projected = project_points(cam, joints3d)
    uv = projected[:, :2]
    visible = projected[:, 2] > MIN_DEPTH

    for child in range(1, JOINT_COUNT):
        parent = HAND_PARENTS[child]
        if visible[parent] and visible[child]:
            _stamp_segment(image, uv[parent], uv[child], 0.5 * LINE_WIDTH * scale, joint_color(child))
    for joint in range(JOINT_COUNT):
        if visible[joint]:
            _stamp_disc(image, uv[joint], DISC_RADIUS * scale, joint_color(joint))
    return image


@dataclass(frozen=True, eq=False)
class Tracklet:
    """Per-frame 2-D pixel positions of one tracked point with visibility flags"""

    points: np.ndarray
    visible: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ShapeError(f"tracklet points must be F x 2, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValidationError("tracklet positions must be finite")
        if self.visible is None:
            visible = np.ones(len(points), dtype=bool)
        else:
            visible = np.array(self.visible, dtype=bool).reshape(-1)
        if len(visible) != len(points):
            raise ShapeError("one visibility flag per frame is required")
        points.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "visible", visible)

    def __len__(self) -> int:
        return len(self.points)


def _canonical_order(meshes: Sequence[TriMesh]) -> List[int]:
    return sorted(
        range(len(meshes)),
        key=lambda i: (
            meshes[i].instance_id,
            len(meshes[i].faces),
            meshes[i].faces.tobytes(),
            meshes[i].vertices.tobytes(),
        ),
    )


def _combined_surface(meshes: Sequence[TriMesh]) -> trimesh.Trimesh:
    """All meshes of one frame as a single surface, faces in list order"""
    offsets = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
    vertices = np.concatenate([m.vertices for m in meshes])
    faces = np.concatenate([m.faces + offset for m, offset in zip(meshes, offsets)])
    return trimesh.Trimesh(vertices=vertices, faces=faces, process=False)


def generate_tracklets(
    mesh_sequence: Sequence[Sequence[TriMesh]],
    cam: Camera,
    n: int,
    seed: int,
    depth_maps: Optional[Sequence[np.ndarray]] = None,
) -> List[Tracklet]:
    """
    Sample surface points at frame 0 and follow them through every frame

    Points are drawn by area-weighted triangle sampling, stay attached to their
    triangle barycentrically and are re-projected each frame. A point is
    visible when its depth is within 1 mm of the depth map at its pixel; points
    behind the camera keep their previous position.

    Args:
        mesh_sequence: Per-frame posed meshes, same topology per instance
        cam: Camera
        n: Number of points
        seed: Sampling seed
        depth_maps: Optional pre-rendered depth maps, one per frame

    Returns:
        n tracklets

    Raises:
        NoForegroundError: If frame 0 renders empty
    """
    frames = [list(frame) for frame in mesh_sequence]
    if not frames:
        raise ValidationError("mesh sequence is empty")
    if depth_maps is not None and len(depth_maps) != len(frames):
        raise ShapeError("one depth map per frame is required")
    order = _canonical_order(frames[0])
    frames = [[frame[i] for i in order] if len(frame) == len(order) else frame for frame in frames]
    for index, frame in enumerate(frames):
        if len(frame) != len(order) or any(
            not np.array_equal(a.faces, b.faces) for a, b in zip(frame, frames[0])
        ):
            raise ShapeError(f"frame {index} does not share the topology of frame 0")

    first_depth = depth_maps[0] if depth_maps is not None else rasterize(frames[0], cam)[0]
    if not np.any(first_depth > 0):
        raise NoForegroundError("frame 0 renders no foreground")

    surface = _combined_surface(frames[0])
    samples, chosen = trimesh.sample.sample_surface(surface, n, seed=seed)
    bary = trimesh.triangles.points_to_barycentric(surface.triangles[chosen], samples)

    height, width = cam.shape
    tracks = np.empty((len(frames), n, 2))
    visible = np.zeros((len(frames), n), dtype=bool)
    previous = np.tile([cam.cx, cam.cy], (n, 1))
    for f, frame in enumerate(frames):
        triangles = np.concatenate([m.triangles for m in frame])[chosen]
        points = np.einsum("nk,nkd->nd", bary, triangles)
        projected = project_points(cam, points)
        in_front = projected[:, 2] > MIN_DEPTH
        uv = np.where(in_front[:, None], projected[:, :2], previous)
        tracks[f] = uv
        previous = uv

        depth = first_depth if f == 0 else (
            depth_maps[f] if depth_maps is not None else rasterize(frame, cam)[0]
        )
        cols = np.floor(uv[:, 0]).astype(np.int64)
        rows = np.floor(uv[:, 1]).astype(np.int64)
        on_image = in_front & (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
        sampled = np.zeros(n)
        sampled[on_image] = depth[rows[on_image], cols[on_image]]
        visible[f] = on_image & (sampled > 0) & (np.abs(projected[:, 2] - sampled) <= VISIBILITY_TOLERANCE)

    logger.debug("Generated %d tracklets over %d frames", n, len(frames))
    return [Tracklet(tracks[:, k], visible[:, k]) for k in range(n)]


def save_depth_png(depth: np.ndarray, path: PathLike) -> None:
    """16-bit PNG in 0.1 mm units, 0 = background"""
    units = np.clip(np.rint(np.asarray(depth) * DEPTH_UNITS_PER_METER), 0, 65535).astype(np.uint16)
    Image.fromarray(units).save(path, format="PNG")


def load_depth_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image).astype(np.float64) / DEPTH_UNITS_PER_METER


def save_depth_pfm(depth: np.ndarray, path: PathLike) -> None:
    """Lossless float32 little-endian PFM, rows stored bottom-to-top"""
    depth = np.asarray(depth, dtype="<f4")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(depth).tobytes())


def load_depth_pfm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise ValidationError(f"{path}: not a single-channel PFM file")
    width, height = (int(x) for x in parts[1].split())
    dtype = "<f4" if float(parts[2]) < 0 else ">f4"
    values = np.frombuffer(parts[3], dtype=dtype, count=width * height).reshape(height, width)
    return np.flipud(values).astype(np.float64)


def save_seg_png(seg: np.ndarray, path: PathLike) -> None:
    """8-bit palette PNG whose pixel value is the label"""
    seg = np.ascontiguousarray(seg, dtype=np.uint8)
    image = Image.frombytes("P", (seg.shape[1], seg.shape[0]), seg.tobytes())
    image.putpalette(SEG_PALETTE)
    image.save(path, format="PNG")


def load_seg_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image).astype(np.uint8)


def save_rgb_png(image: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PNG")


def load_rgb_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image.convert("RGB"))


def tracklets_to_dict(tracks: Sequence[Tracklet]) -> dict:
    return {
        "n": len(tracks),
        "frames": len(tracks[0]) if tracks else 0,
        "tracks": [{"xy": t.points.tolist(), "vis": t.visible.tolist()} for t in tracks],
    }


def save_tracklets(tracks: Sequence[Tracklet], path: PathLike) -> None:
    Path(path).write_text(json.dumps(tracklets_to_dict(tracks)), encoding="utf-8")


def load_tracklets(path: PathLike) -> List[Tracklet]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        tracks = [Tracklet(item["xy"], item["vis"]) for item in data["tracks"]]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValidationError(f"{path}: malformed tracklet file: {e}")
    if len(tracks) != data.get("n", len(tracks)):
        raise ValidationError(f"{path}: track count does not match 'n'")
    return tracks
