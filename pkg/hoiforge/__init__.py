"""
hoiforge - poses, rasterized conditions, condition latents and evaluation
metrics for hand-object interaction video generation
"""

__version__ = "0.1.0"
__author__ = "hoiforge contributors"

from .engine import HOIForge
from .config import PipelineConfig, load_config, default_config
from .geometry import HandPose, ObjectPose, TriMesh, KinematicHand, build_template_hand, forward_kinematics, skin_mesh
from .trajectory import Endpoints, PoseSequence, TrajectoryConfig, interpolate_sequence, validate_sequence
from .raster import Camera, Tracklet, rasterize, render_keypoints, generate_tracklets, project_point
from .conditioning import (
    CueSet,
    LatentTensor,
    InjectionOperator,
    encode_cue,
    concat_channels,
    mask_cues,
    inject,
)
from .metrics import (
    JointSet,
    FeatureStats,
    MetricsReport,
    track_correlation,
    motion_fidelity,
    mpjpe_root_aligned,
    procrustes_align,
    pa_mpjpe,
    pa_mpvpe,
    fscore,
    psnr,
    ssim,
    feature_stats,
    frechet_distance,
    rank_and_filter,
)
from .exceptions import HOIForgeError, ValidationError, ShapeError

__all__ = [
    "HOIForge",
    "PipelineConfig",
    "load_config",
    "default_config",
    "HandPose",
    "ObjectPose",
    "TriMesh",
    "KinematicHand",
    "build_template_hand",
    "forward_kinematics",
    "skin_mesh",
    "Endpoints",
    "PoseSequence",
    "TrajectoryConfig",
    "interpolate_sequence",
    "validate_sequence",
    "Camera",
    "Tracklet",
    "rasterize",
    "render_keypoints",
    "generate_tracklets",
    "project_point",
    "CueSet",
    "LatentTensor",
    "InjectionOperator",
    "encode_cue",
    "concat_channels",
    "mask_cues",
    "inject",
    "JointSet",
    "FeatureStats",
    "MetricsReport",
    "track_correlation",
    "motion_fidelity",
    "mpjpe_root_aligned",
    "procrustes_align",
    "pa_mpjpe",
    "pa_mpvpe",
    "fscore",
    "psnr",
    "ssim",
    "feature_stats",
    "frechet_distance",
    "rank_and_filter",
    "HOIForgeError",
    "ValidationError",
    "ShapeError",
]
