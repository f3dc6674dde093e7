"""End-to-end depth estimation from a burst.

Stages: feature tracking on equalized frames, small-motion bundle
adjustment, rotation alignment of every non-reference frame, sparse-to-
dense propagation of the adjusted points into an initial inverse depth,
then a sequential per-frame flow refinement ordered by ascending baseline.
Each frame's refined flow is converted into the next frame's initial flow
through the transform vectors; the final inverse depth is read off the
last (largest-baseline) frame's flow.

Frames whose transform vector is shorter than the degenerate-baseline
threshold carry no parallax and are skipped with a recorded reason.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import BundleProblem, BundleSolution, solve_lm
from .errors import (
    BurstDepthError,
    DegenerateBaselineError,
    PipelineStageError,
)
from .geometry import (
    CameraIntrinsics,
    FlowField,
    InverseDepthMap,
    MIN_BASELINE_NORM,
    TransformVector,
    convert_flow_between_frames,
    flow_from_inverse_depth,
    inverse_depth_from_flow,
    rotation_align_warp,
    translation_transform_vector,
)
from .matching import ClassicalBackend, EstimatorBackend, ResidualFlowInput, estimate_residual, warp_with_flow
from .propagation import PropagationConfig, propagate
from .tracking import FeatureTrack, TrackingConfig, detect_harris, equalize_burst, track_sequence

MIN_FRAMES = 5


@dataclass(frozen=True)
class PipelineConfig:
    backend: EstimatorBackend = field(default_factory=ClassicalBackend)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    min_baseline: float = MIN_BASELINE_NORM
    # "ascending" processes small baselines first so early frames, whose
    # residuals are easiest, initialize the later ones.
    frame_order_policy: str = "ascending"
    # Average inverse depth over all processed frames instead of reading it
    # from the last frame only.
    average_depth: bool = False
    min_frames: int = MIN_FRAMES


@dataclass
class PipelineDiagnostics:
    skipped_frames: list[tuple[int, str]]
    rms_reprojection: float
    stage_seconds: dict[str, float]
    processing_order: list[int]


@dataclass
class PipelineResult:
    inverse_depth: InverseDepthMap
    poses: BundleSolution
    refined_flows: dict[int, FlowField]
    diagnostics: PipelineDiagnostics

    @property
    def depth(self) -> np.ndarray:
        return self.inverse_depth.depth()


def frame_order(
    transforms: list[TransformVector],
    policy: str = "ascending",
    min_baseline: float = MIN_BASELINE_NORM,
) -> tuple[list[int], list[tuple[int, str]]]:
    """Processing order over frame indices, plus skipped frames with reasons.

    The default policy sorts by ascending |T| (stable, so equal baselines
    keep their original order); degenerate frames are excluded.
    """
    if not transforms:
        raise ValueError("no transform vectors")
    if policy != "ascending":
        raise ValueError(f"unknown frame ordering policy {policy!r}")
    skipped = [
        (i, f"degenerate baseline |T|={t.norm:.3e}")
        for i, t in enumerate(transforms)
        if t.norm < min_baseline
    ]
    usable = [i for i, t in enumerate(transforms) if t.norm >= min_baseline]
    order = sorted(usable, key=lambda i: transforms[i].norm)
    return order, skipped


def run(
    images: list[np.ndarray],
    intrinsics: CameraIntrinsics,
    cfg: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    """Full pipeline on an ordered burst; frame 0 is the reference."""
    if len(images) < cfg.min_frames:
        raise ValueError(f"need at least {cfg.min_frames} frames, got {len(images)}")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValueError("all frames must share dimensions")

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        equalized = equalize_burst(images)
        corners = detect_harris(equalized[0], cfg.tracking)
        tracks = track_sequence(equalized, corners, cfg.tracking)
    except BurstDepthError as exc:
        raise PipelineStageError("tracking", str(exc)) from exc
    timings["tracking"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    problem = BundleProblem.from_tracks(intrinsics, tracks)
    solution = solve_lm(problem)
    timings["bundle_adjustment"] = time.perf_counter() - t0

    return run_with_geometry(images, intrinsics, solution, tracks, cfg, timings)


def run_with_geometry(
    images: list[np.ndarray],
    intrinsics: CameraIntrinsics,
    solution: BundleSolution,
    tracks: list[FeatureTrack],
    cfg: PipelineConfig = PipelineConfig(),
    timings: dict[str, float] | None = None,
) -> PipelineResult:
    """Refinement stages given an existing bundle solution.

    Exposed separately so poses and points can be injected, e.g. to test
    scale covariance of the recovered depth.
    """
    timings = dict(timings or {})
    reference = images[0]

    t0 = time.perf_counter()
    transforms = [
        translation_transform_vector(intrinsics, pose.t) for pose in solution.poses
    ]
    order, skipped = frame_order(
        transforms[1:], cfg.frame_order_policy, cfg.min_baseline
    )
    order = [i + 1 for i in order]
    skipped = [(i + 1, reason) for i, reason in skipped]
    if not order:
        raise PipelineStageError(
            "frame_ordering", "all frames have degenerate baselines (no parallax)"
        )

    aligned: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for i in order:
        aligned[i] = rotation_align_warp(images[i], intrinsics, solution.poses[i].r)
    timings["rotation_alignment"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    full_tracks = [t for t in tracks if t.fully_tracked]
    seeds = []
    for track, point, ok in zip(full_tracks, solution.points, solution.point_valid):
        if ok:
            seeds.append((track.ref_position, 1.0 / point[2]))
    try:
        w_init = propagate(seeds, reference, cfg.propagation)
    except BurstDepthError as exc:
        raise PipelineStageError("propagation", str(exc)) from exc
    timings["propagation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    flow = flow_from_inverse_depth(w_init, transforms[order[0]])
    refined: dict[int, FlowField] = {}
    for step, i in enumerate(order):
        target, target_valid = aligned[i]
        warped, warped_valid = warp_with_flow(target, flow)
        residual = estimate_residual(
            ResidualFlowInput(
                reference=reference,
                warped=warped,
                initial_flow=flow,
                transform=transforms[i],
                target=target,
                warped_valid=warped_valid,
            ),
            cfg.backend,
        )
        # Where the estimator abstains (masked residual) the initial flow
        # is kept; the pixel stays valid through the rest of the loop.
        update = np.where(residual.valid[..., None], residual.data, 0.0)
        flow = FlowField(
            np.where(flow.valid[..., None], flow.data + update, np.nan), flow.valid
        )
        refined[i] = flow
        if step + 1 < len(order):
            flow = convert_flow_between_frames(
                flow, transforms[i], transforms[order[step + 1]]
            )
    timings["flow_refinement"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    last = order[-1]
    if cfg.average_depth:
        num = np.zeros(reference.shape[:2])
        den = 0.0
        valid = np.ones(reference.shape[:2], dtype=bool)
        for i in order:
            t_vec = transforms[i].array
            num += np.where(
                refined[i].valid,
                refined[i].data[:, :, 0] * t_vec[0] + refined[i].data[:, :, 1] * t_vec[1],
                0.0,
            )
            den += float(t_vec @ t_vec)
            valid &= refined[i].valid
        inverse_depth = InverseDepthMap(num / den, valid)
    else:
        inverse_depth = inverse_depth_from_flow(refined[last], transforms[last])
    timings["depth_readout"] = time.perf_counter() - t0

    diagnostics = PipelineDiagnostics(
        skipped_frames=skipped,
        rms_reprojection=solution.final_rms_reprojection,
        stage_seconds=timings,
        processing_order=order,
    )
    return PipelineResult(
        inverse_depth=inverse_depth,
        poses=solution,
        refined_flows=refined,
        diagnostics=diagnostics,
    )
