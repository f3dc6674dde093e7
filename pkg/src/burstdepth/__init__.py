"""Depth and pose from narrow-baseline bursts.

A short hand-held burst (constant or bracketed exposure) carries enough
parallax to recover camera pose and a dense depth map; the depth then
aligns the burst for denoising, exposure fusion and synthetic refocusing.
"""

from .errors import (
    BurstDepthError,
    ConfigurationError,
    DegenerateBaselineError,
    DegenerateProjectionError,
    InsufficientTracksError,
    PipelineStageError,
    PropagationError,
)
from .geometry import (
    CameraIntrinsics,
    FlowField,
    InverseDepthMap,
    SmallPose,
    TransformVector,
    convert_flow_between_frames,
    flow_from_inverse_depth,
    inverse_depth_from_flow,
    project,
    rotation_align_warp,
    small_rotation_matrix,
    translation_transform_vector,
)
from .matching import ClassicalBackend, LearnedBackend, ResidualFlowInput
from .pipeline import PipelineConfig, PipelineResult, run
from .tracking import FeatureTrack, TrackingConfig

__version__ = "0.1.0"

__all__ = [
    "BurstDepthError",
    "CameraIntrinsics",
    "ClassicalBackend",
    "ConfigurationError",
    "DegenerateBaselineError",
    "DegenerateProjectionError",
    "FeatureTrack",
    "FlowField",
    "InsufficientTracksError",
    "InverseDepthMap",
    "LearnedBackend",
    "PipelineConfig",
    "PipelineResult",
    "PipelineStageError",
    "PropagationError",
    "ResidualFlowInput",
    "SmallPose",
    "TrackingConfig",
    "TransformVector",
    "convert_flow_between_frames",
    "flow_from_inverse_depth",
    "inverse_depth_from_flow",
    "project",
    "rotation_align_warp",
    "run",
    "small_rotation_matrix",
    "translation_transform_vector",
]
