"""
Main hoiforge orchestrator with async stage methods
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .base import JobPool
from .conditioning import (
    CUE_KINDS,
    PACKED_CHANNELS,
    CueSet,
    InjectionOperator,
    LatentTensor,
    ProjectionBank,
    concat_channels,
    encode_cue,
    mask_cues,
    perturb_cues,
    save_latent,
    select_cues,
)
from .config import PipelineConfig, default_config
from .exceptions import EmptySetError, HOIForgeError, NoForegroundError, ShapeError, ValidationError
from .geometry import (
    HandPose,
    KinematicHand,
    ObjectPose,
    TriMesh,
    apply_object_pose,
    forward_kinematics,
    load_hand,
    load_obj,
    skin_mesh,
)
from .manifest import ClipManifest, ClipRecord, load_manifest, save_manifest
from .metrics import (
    METRIC_NAMES,
    MetricsReport,
    feature_stats,
    frechet_distance,
    fscores,
    load_features,
    load_joints,
    motion_fidelity,
    mpjpe_root_aligned,
    pa_mpjpe,
    pa_mpvpe,
    rank_and_filter,
    save_joints,
    video_psnr,
    video_ssim,
)
from .raster import (
    Camera,
    Tracklet,
    generate_tracklets,
    load_depth_pfm,
    load_depth_png,
    load_rgb_png,
    load_seg_png,
    load_tracklets,
    rasterize,
    render_keypoints,
    save_depth_pfm,
    save_depth_png,
    save_rgb_png,
    save_seg_png,
    save_tracklets,
)
from .trajectory import (
    Endpoints,
    PoseSequence,
    ValidationReport,
    interpolate_sequence,
    load_endpoints,
    save_endpoints,
    save_pose_sequence,
    validate_sequence,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RenderResult:
    """Rendered conditions of one sequence"""

    cues: CueSet
    tracklets: List[Tracklet]
    joints_mm: np.ndarray


@dataclass
class PackResult:
    """Per-cue latents, their concatenation and the cues dropped by masking"""

    latents: Dict[str, LatentTensor]
    packed: LatentTensor
    dropped: Tuple[str, ...] = ()


@dataclass
class ClipMetrics:
    """Metric values of one clip plus the feature rows it contributes"""

    id: str
    values: Dict[str, float] = field(default_factory=dict)
    fscore_at: Dict[float, float] = field(default_factory=dict)
    frames: int = 0
    tracks: int = 0
    gt_features: Optional[np.ndarray] = None
    gen_features: Optional[np.ndarray] = None


def frame_name(index: int, suffix: str = ".png") -> str:
    return f"{index:06d}{suffix}"


def list_frames(directory: Path, suffix: str = ".png") -> List[Path]:
    if not directory.is_dir():
        raise HOIForgeError(f"frame directory not found: {directory}")
    return sorted(directory.glob(f"*{suffix}"))


def load_frames(directory: PathLike) -> List[np.ndarray]:
    """RGB frames of a PNG directory, sorted by file name"""
    return [load_rgb_png(path) for path in list_frames(Path(directory))]


def load_conditions(directory: PathLike) -> CueSet:
    """
    Read depth/, seg/ and keypoint/ frame directories back into a CueSet

    Raises:
        ShapeError: If the directories hold different frame counts
    """
    directory = Path(directory)
    depth_files = list_frames(directory / "depth", ".png") or list_frames(directory / "depth", ".pfm")
    seg_files = list_frames(directory / "seg")
    keypoint_files = list_frames(directory / "keypoint")
    counts = {"depth": len(depth_files), "seg": len(seg_files), "keypoint": len(keypoint_files)}
    if len(set(counts.values())) != 1:
        detail = ", ".join(f"{directory / kind}: {n} frames" for kind, n in counts.items())
        raise ShapeError(f"condition frame counts differ ({detail})")
    if not depth_files:
        raise ShapeError(f"{directory}: no condition frames")
    load_depth = load_depth_pfm if depth_files[0].suffix == ".pfm" else load_depth_png
    return CueSet(
        depth=np.stack([load_depth(p) for p in depth_files]),
        seg=np.stack([load_seg_png(p) for p in seg_files]),
        keypoint=np.stack([load_rgb_png(p) for p in keypoint_files]),
    )


class HOIForge:
    """
    Pose, condition and evaluation pipeline for hand-object interaction clips

    Components are created on first use from the configuration; stage methods
    are coroutines that fan per-frame and per-clip work out over a JobPool.
    Outputs never depend on the number of jobs.
    """

    def __init__(self, config: Optional[PipelineConfig] = None, jobs: int = 1):
        """
        Initialize the pipeline

        Args:
            config: Pipeline configuration; the bundled default when omitted
            jobs: Worker threads for per-frame and per-clip work
        """
        self.config = config or default_config()
        self._pool = JobPool(jobs)

        self._hand: Optional[KinematicHand] = None
        self._camera: Optional[Camera] = None
        self._object_mesh: Optional[TriMesh] = None
        self._projections: Optional[ProjectionBank] = None

    @property
    def hand(self) -> KinematicHand:
        """Hand model from config, or the bundled template"""
        if self._hand is None:
            self._hand = load_hand(self.config.assets.hand)
        return self._hand

    @property
    def camera(self) -> Camera:
        if self._camera is None:
            self._camera = self.config.camera.build()
        return self._camera

    @property
    def object_mesh(self) -> TriMesh:
        """
        Object mesh from config

        Raises:
            HOIForgeError: If the mesh file does not exist
        """
        if self._object_mesh is None:
            path = self.config.assets.object_mesh
            if not Path(path).is_file():
                raise HOIForgeError(f"object mesh not found: {path}")
            self._object_mesh = load_obj(path)
        return self._object_mesh

    @property
    def projections(self) -> ProjectionBank:
        if self._projections is None:
            self._projections = ProjectionBank()
        return self._projections

    def injector(self, base_channels: int) -> InjectionOperator:
        """Zero-initialized injection operator sized for the packed condition latent"""
        return InjectionOperator(
            base_channels,
            control_channels=PACKED_CHANNELS,
            layers=self.config.conditioning.injection_layers,
            seed=self.config.seeds.injection,
        )

    def _output_dir(self, out_dir: Optional[PathLike]) -> Path:
        return Path(out_dir) if out_dir is not None else Path(self.config.output.directory)

    async def trajgen(
        self,
        endpoints: Union[Endpoints, PathLike, None] = None,
        out_dir: Optional[PathLike] = None,
    ) -> Tuple[PoseSequence, ValidationReport]:
        """
        Interpolate a pose sequence between endpoints and validate it

        Args:
            endpoints: Endpoints or endpoints file; config assets when omitted
            out_dir: Writes poses/sequence.json, poses/endpoints.json and
                poses/validation.json when given

        Returns:
            (sequence, validation report)
        """
        if not isinstance(endpoints, Endpoints):
            path = Path(endpoints) if endpoints is not None else self.config.assets.endpoints
            if not path.is_file():
                raise HOIForgeError(f"endpoints file not found: {path}")
            endpoints = load_endpoints(path)

        logger.info("Generating %d-frame trajectory", self.config.trajectory.frame_count)
        seq = interpolate_sequence(
            endpoints.h0, endpoints.hT, endpoints.o0, endpoints.oT,
            self.config.trajectory, wrist_origin=self.hand.wrist,
        )
        poses_dir = None
        if out_dir is not None:
            poses_dir = Path(out_dir) / "poses"
            poses_dir.mkdir(parents=True, exist_ok=True)
            save_pose_sequence(seq, poses_dir / "sequence.json")
            save_endpoints(endpoints, poses_dir / "endpoints.json")

        report = await self._pool.run(
            validate_sequence, seq, self.hand, self.object_mesh, self.config.trajectory, endpoints
        )
        if poses_dir is not None:
            (poses_dir / "validation.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        if not report.passed:
            logger.warning("Trajectory failed validation (max penetration %.2f mm)", report.max_penetration_mm)
        return seq, report

    def _render_frame(self, frame: Tuple[HandPose, ObjectPose]):
        hand_pose, object_pose = frame
        meshes = [skin_mesh(self.hand, hand_pose), apply_object_pose(self.object_mesh, object_pose)]
        depth, seg = rasterize(meshes, self.camera)
        joints = forward_kinematics(self.hand, hand_pose)
        return meshes, depth, seg, render_keypoints(joints, self.camera), joints

    async def render(self, seq: PoseSequence, out_dir: Optional[PathLike] = None) -> RenderResult:
        """
        Rasterize depth, segmentation and keypoint conditions for every frame

        Also samples ground-truth tracklets from frame 0. When out_dir is given
        the frames go to conditions/{depth,seg,keypoint}/ together with
        tracklets.json and joints.json.
        """
        logger.info("Rendering %d frames at %d x %d", len(seq), self.camera.width, self.camera.height)
        frames = await self._pool.map(self._render_frame, seq.frames)
        depth = [f[1] for f in frames]
        cues = CueSet(
            depth=np.stack(depth),
            seg=np.stack([f[2] for f in frames]),
            keypoint=np.stack([f[3] for f in frames]),
        )
        joints_mm = 1000.0 * np.stack([f[4] for f in frames])

        try:
            tracks = generate_tracklets(
                [f[0] for f in frames], self.camera,
                self.config.conditioning.tracklet_count, self.config.seeds.tracklet,
                depth_maps=depth,
            )
        except NoForegroundError:
            logger.warning("Frame 0 renders no foreground; no tracklets written")
            tracks = []
        result = RenderResult(cues, tracks, joints_mm)
        if out_dir is not None:
            await self._write_conditions(result, Path(out_dir) / "conditions")
        return result

    async def _write_conditions(self, result: RenderResult, directory: Path) -> None:
        for kind in CUE_KINDS:
            (directory / kind).mkdir(parents=True, exist_ok=True)
        pfm = self.config.output.depth_format == "pfm"

        def write(index: int) -> None:
            cues = result.cues
            if pfm:
                save_depth_pfm(cues.depth[index], directory / "depth" / frame_name(index, ".pfm"))
            else:
                save_depth_png(cues.depth[index], directory / "depth" / frame_name(index))
            save_seg_png(cues.seg[index], directory / "seg" / frame_name(index))
            save_rgb_png(cues.keypoint[index], directory / "keypoint" / frame_name(index))

        await self._pool.map(write, range(result.cues.frame_count))
        save_tracklets(result.tracklets, directory / "tracklets.json")
        save_joints(result.joints_mm, directory / "joints.json")
        logger.debug("Wrote %d condition frames to %s", result.cues.frame_count, directory)

    async def pack(self, cues: Union[CueSet, PathLike], out_dir: Optional[PathLike] = None) -> PackResult:
        """
        Encode the three cues to 16-channel latents and concatenate them

        Cues are perturbed by the configured noise, reduced to the active set
        and randomly masked before encoding. When out_dir is given the latents
        go to latents/ and the projection matrices to latents/projections/.
        """
        if not isinstance(cues, CueSet):
            cues = load_conditions(cues)
        cond, seeds = self.config.conditioning, self.config.seeds
        cues = perturb_cues(cues, cond.noise_std, seeds.noise)
        cues = select_cues(cues, cond.active_cues)
        cues, dropped = mask_cues(cues, cond.mask_probability, seeds.mask)

        def encode(kind: str) -> LatentTensor:
            latent = encode_cue(cues.get(kind), kind, seeds.encoder, self.projections)
            return replace(latent, masked=(kind,) if kind in dropped else ())

        latents = await self._pool.map(encode, CUE_KINDS)
        packed = concat_channels(latents)
        logger.info("Packed condition latent %s (masked: %s)", packed.shape, ", ".join(dropped) or "none")

        result = PackResult(dict(zip(CUE_KINDS, latents)), packed, dropped)
        if out_dir is not None:
            directory = Path(out_dir) / "latents"
            directory.mkdir(parents=True, exist_ok=True)
            for kind, latent in result.latents.items():
                save_latent(latent, directory / f"{kind}.f32")
            save_latent(packed, directory / "concat.f32")
            self.projections.save(directory / "projections")
        return result

    def _evaluate_clip(self, record: ClipRecord) -> ClipMetrics:
        result = ClipMetrics(record.id)
        metrics_cfg = self.config.metrics

        if record.has("gt_frames", "generated_frames"):
            gt = load_frames(record.path("gt_frames"))
            generated = load_frames(record.path("generated_frames"))
            result.values["psnr"] = video_psnr(generated, gt)
            result.values["ssim"] = video_ssim(generated, gt)
            result.frames = len(gt)

        if record.has("gt_tracklets", "gen_tracklets"):
            gt_tracks = load_tracklets(record.path("gt_tracklets"))
            gen_tracks = load_tracklets(record.path("gen_tracklets"))
            try:
                result.values["mf"] = motion_fidelity(gt_tracks, gen_tracks, metrics_cfg.static_epsilon)
                result.tracks = len(gen_tracks)
            except EmptySetError:
                logger.warning("Clip %s: empty tracklet set, motion fidelity skipped", record.id)

        if record.has("gt_joints", "pred_joints"):
            gt_joints = load_joints(record.path("gt_joints"))
            pred_joints = load_joints(record.path("pred_joints"))
            result.values["mpjpe_mm"] = mpjpe_root_aligned(pred_joints, gt_joints)
            result.values["pa_mpjpe_mm"] = pa_mpjpe(pred_joints, gt_joints)

        if record.has("gt_vertices", "pred_vertices"):
            gt_vertices = load_joints(record.path("gt_vertices"))
            pred_vertices = load_joints(record.path("pred_vertices"))
            result.values["pa_mpvpe_mm"] = pa_mpvpe(pred_vertices, gt_vertices)
            if len(gt_vertices) != len(pred_vertices):
                raise ShapeError(f"clip {record.id!r}: vertex files hold different frame counts")
            per_frame = [fscores(p, g, metrics_cfg.fscore_thresholds) for p, g in zip(pred_vertices, gt_vertices)]
            result.fscore_at = {t: float(np.mean([f[t] for f in per_frame])) for t in per_frame[0]}

        if record.gt_features is not None:
            result.gt_features = load_features(record.path("gt_features"))
        if record.gen_features is not None:
            result.gen_features = load_features(record.path("gen_features"))
        return result

    async def evaluate(
        self,
        manifest: Union[ClipManifest, PathLike],
        csv_path: Optional[PathLike] = None,
    ) -> Tuple[MetricsReport, List[ClipMetrics]]:
        """
        Evaluate every clip of a manifest and average the per-clip values

        Metrics whose inputs no clip provides are listed as skipped. The
        Frechet distance pools feature rows of all clips per side.

        Args:
            manifest: ClipManifest or JSON-lines manifest path
            csv_path: Optional per-clip CSV destination

        Returns:
            (aggregate report, per-clip metrics)
        """
        if not isinstance(manifest, ClipManifest):
            manifest = load_manifest(manifest)
        logger.info("Evaluating %d clips", len(manifest))
        clips = await self._pool.map(self._evaluate_clip, manifest.records)

        aggregate: Dict[str, float] = {}
        for name in METRIC_NAMES:
            values = [c.values[name] for c in clips if name in c.values]
            if values:
                aggregate[name] = float(np.mean(values))
        fscore_at: Dict[float, float] = {}
        for threshold in self.config.metrics.fscore_thresholds:
            values = [c.fscore_at[threshold] for c in clips if threshold in c.fscore_at]
            if values:
                fscore_at[threshold] = float(np.mean(values))

        gt_rows = [c.gt_features for c in clips if c.gt_features is not None]
        gen_rows = [c.gen_features for c in clips if c.gen_features is not None]
        if gt_rows and gen_rows:
            gt_stats = feature_stats(np.concatenate(gt_rows))
            gen_stats = feature_stats(np.concatenate(gen_rows))
            aggregate["fvd_core"] = frechet_distance(gt_stats, gen_stats)

        skipped = [name for name in METRIC_NAMES if name not in aggregate]
        if not fscore_at:
            skipped.append("fscore_at")
        report = MetricsReport(
            metrics=aggregate,
            fscore_at=fscore_at,
            counts={
                "clips": len(clips),
                "frames": sum(c.frames for c in clips),
                "tracks": sum(c.tracks for c in clips),
            },
            skipped=skipped,
        )
        if csv_path is not None:
            write_clip_csv(clips, csv_path, self.config.metrics.fscore_thresholds)
        return report, clips

    def _pose_error(self, record: ClipRecord) -> float:
        if record.pose_error_mm is not None:
            return record.pose_error_mm
        if record.has("pred_joints", "gt_joints"):
            return mpjpe_root_aligned(load_joints(record.path("pred_joints")), load_joints(record.path("gt_joints")))
        raise ValidationError(f"clip {record.id!r} has neither pose_error_mm nor pred_joints/gt_joints")

    async def filter(
        self,
        manifest: Union[ClipManifest, PathLike],
        discard_fraction: Optional[float] = None,
        out_path: Optional[PathLike] = None,
    ) -> ClipManifest:
        """
        Drop the candidates with the worst pose error

        Retained records keep their manifest order.

        Args:
            manifest: ClipManifest or manifest path
            discard_fraction: Share to discard; config metrics.discard_fraction when omitted
            out_path: Writes the filtered manifest when given
        """
        if not isinstance(manifest, ClipManifest):
            manifest = load_manifest(manifest)
        fraction = self.config.metrics.discard_fraction if discard_fraction is None else discard_fraction
        errors = await self._pool.map(self._pose_error, manifest.records)
        kept = rank_and_filter([(r.id, e) for r, e in zip(manifest.records, errors)], fraction)
        filtered = manifest.subset(kept)
        logger.info("Kept %d of %d candidates", len(filtered), len(manifest))
        if out_path is not None:
            save_manifest(filtered, out_path)
        return filtered

    async def pipeline(
        self,
        endpoints: Union[Endpoints, PathLike, None] = None,
        generated: Optional[PathLike] = None,
        reference: Optional[PathLike] = None,
        out_dir: Optional[PathLike] = None,
    ) -> Dict[str, Any]:
        """
        Run trajectory generation, rendering and packing, then evaluate

        Generated output is optional: its frames/, tracklets.json, joints.json
        and features.f32 are scored against the run's own ground truth and the
        reference directory's frames/ and features.f32.

        Returns:
            The report written to report.json
        """
        out = self._output_dir(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        seq, validation = await self.trajgen(endpoints, out)
        rendered = await self.render(seq, out)
        packed = await self.pack(rendered.cues, out)

        record = self._pipeline_record(out, generated, reference)
        report, _ = await self.evaluate(ClipManifest([record], out))
        data = report.to_dict()
        data["validation"] = validation.to_dict()
        data["latent_shape"] = list(packed.packed.shape)
        data["masked"] = list(packed.dropped)
        (out / "report.json").write_text(json.dumps(data, indent=2), encoding="utf-8")
        logger.info("Pipeline finished; report written to %s", out / "report.json")
        return data

    @staticmethod
    def _pipeline_record(out: Path, generated: Optional[PathLike], reference: Optional[PathLike]) -> ClipRecord:
        values: Dict[str, Any] = {"id": "pipeline"}
        conditions = out / "conditions"
        if generated is not None:
            generated = Path(generated)
            if not generated.is_dir():
                raise HOIForgeError(f"generated directory not found: {generated}")
            if (generated / "tracklets.json").is_file():
                values.update(gt_tracklets=conditions / "tracklets.json", gen_tracklets=generated / "tracklets.json")
            if (generated / "joints.json").is_file():
                values.update(gt_joints=conditions / "joints.json", pred_joints=generated / "joints.json")
            if (generated / "features.f32").is_file():
                values["gen_features"] = generated / "features.f32"
            if reference is not None and (generated / "frames").is_dir():
                values["generated_frames"] = generated / "frames"
        if reference is not None:
            reference = Path(reference)
            if not reference.is_dir():
                raise HOIForgeError(f"reference directory not found: {reference}")
            if "generated_frames" in values and (reference / "frames").is_dir():
                values["gt_frames"] = reference / "frames"
            else:
                values.pop("generated_frames", None)
            if (reference / "features.f32").is_file():
                values["gt_features"] = reference / "features.f32"
        return ClipRecord(**values)

    async def close(self):
        """Release the worker pool"""
        await self._pool.close()

    async def __aenter__(self):
        """Async context manager entry"""
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        """Async context manager exit"""
        await self.close()


def write_clip_csv(clips: Sequence[ClipMetrics], path: PathLike, thresholds: Sequence[float]) -> None:
    """One row per clip: id, every metric name, then one fscore column per threshold"""
    names = [name for name in METRIC_NAMES if name != "fvd_core"]
    header = ["id"] + names + [f"fscore@{t:g}" for t in thresholds]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for clip in clips:
            row = [clip.id] + [clip.values.get(name, "") for name in names]
            row += [clip.fscore_at.get(float(t), "") for t in thresholds]
            writer.writerow(row)
