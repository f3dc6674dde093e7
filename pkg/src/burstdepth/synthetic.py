"""Synthetic burst generation with analytic ground truth.

The scene is two textured fronto-parallel planes: a background plane and a
nearer rectangular patch defined on the reference view.  Frames are
rendered by backward-mapping each output pixel onto a plane (linearized
rotation, exact perspective division) and sampling a smooth random
texture that extends past the image border, so every rendered pixel is
defined.  Layered compositing (near patch over background) handles the
small occlusion/disocclusion bands that narrow baselines produce.

Everything is reproducible from a single seed: texture, trajectory
jitter, per-frame exposure gains and noise draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .applications import add_signal_dependent_noise
from .bundle import BundleProblem
from .geometry import CameraIntrinsics, SmallPose, small_rotation_matrix
from .sampling import pixel_grid, sample_bilinear

# Texture margin (pixels) past each image border; must exceed the largest
# rendered displacement.
_TEXTURE_MARGIN = 48


@dataclass(frozen=True)
class SceneConfig:
    width: int = 640
    height: int = 480
    n_frames: int = 28
    focal: float = 525.0
    background_depth: float = 4.0
    patch_depth: float = 2.5
    # Near-patch rectangle (x0, y0, x1, y1) as fractions of the image.
    patch_rect: tuple[float, float, float, float] = (0.22, 0.30, 0.54, 0.68)
    # Endpoint of the lateral translation ramp, scene units.
    translation: tuple[float, float, float] = (0.0306, 0.0122, 0.0005)
    translation_jitter: float = 0.0006
    rotation_jitter: float = 0.0008
    exposure_gains: tuple[float, ...] | None = None
    noise_sigma: float = 0.0
    seed: int = 1234

    def __post_init__(self):
        if min(self.background_depth, self.patch_depth) <= 0:
            raise ValueError("plane depths must be positive")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        z_min = min(self.background_depth, self.patch_depth)
        if np.linalg.norm(self.translation) > 0.05 * z_min:
            raise ValueError("translation exceeds the small-motion regime")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0
        )


def exposure_ramp(levels: int, lo: float = 0.5, hi: float = 2.0) -> tuple[float, ...]:
    """Geometric gain ladder, e.g. 7 levels covering a 2-stop bracket."""
    if levels < 1:
        raise ValueError("need at least one exposure level")
    return tuple(np.geomspace(lo, hi, levels))


@dataclass
class SyntheticBurst:
    config: SceneConfig
    frames: list[np.ndarray]
    clean_frames: list[np.ndarray]
    poses: list[SmallPose]
    gains: np.ndarray
    gt_depth: np.ndarray            # (H, W) scene units, reference view
    gt_flows: dict[int, np.ndarray] # aligned-frame flow per non-reference frame

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.config.intrinsics


def smooth_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Multi-octave smooth RGB texture in roughly [0.08, 0.45].

    Mid-range intensities leave a 2x exposure gain unclipped, and the
    finest octave keeps local contrast everywhere for matching.
    """
    def octave(sigma):
        f = rng.standard_normal((height, width))
        f = cv2.GaussianBlur(f, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
        return (f - f.min()) / max(f.max() - f.min(), 1e-12)

    base = (
        0.40 * octave(0.9)
        + 0.30 * octave(2.5)
        + 0.18 * octave(8.0)
        + 0.12 * octave(24.0)
    )
    channels = [np.clip(base + 0.10 * (octave(4.0) - 0.5), 0.0, 1.0) for _ in range(3)]
    texture = 0.08 + 0.37 * np.stack(channels, axis=-1)
    return texture.astype(np.float32)


def make_trajectory(cfg: SceneConfig, rng: np.random.Generator) -> list[SmallPose]:
    """Linear translation ramp with slight hand-shake jitter; frame 0 fixed."""
    poses = [SmallPose.identity()]
    t_end = np.asarray(cfg.translation)
    for i in range(1, cfg.n_frames):
        frac = i / (cfg.n_frames - 1)
        t = frac * t_end + rng.normal(0.0, cfg.translation_jitter, 3)
        r = np.clip(rng.normal(0.0, cfg.rotation_jitter, 3), -0.0025, 0.0025)
        poses.append(SmallPose(r, t))
    return poses


def _backward_map(cfg: SceneConfig, pose: SmallPose, z: float):
    """Reference-pixel coordinates seen by each output pixel, for a plane at z."""
    k = cfg.intrinsics
    rot_inv = np.linalg.inv(small_rotation_matrix(pose.r))
    mat = rot_inv @ k.inverse_matrix
    b = rot_inv @ pose.t

    xs, ys = pixel_grid(cfg.height, cfg.width)
    a0 = mat[0, 0] * xs + mat[0, 1] * ys + mat[0, 2]
    a1 = mat[1, 0] * xs + mat[1, 1] * ys + mat[1, 2]
    a2 = mat[2, 0] * xs + mat[2, 1] * ys + mat[2, 2]
    s = (z + b[2]) / a2
    ref_x = k.fx * (s * a0 - b[0]) / z + k.cx
    ref_y = k.fy * (s * a1 - b[1]) / z + k.cy
    return ref_x, ref_y


def _patch_rect_pixels(cfg: SceneConfig) -> tuple[int, int, int, int]:
    x0 = int(round(cfg.patch_rect[0] * cfg.width))
    y0 = int(round(cfg.patch_rect[1] * cfg.height))
    x1 = int(round(cfg.patch_rect[2] * cfg.width))
    y1 = int(round(cfg.patch_rect[3] * cfg.height))
    return x0, y0, x1, y1


def render_burst(cfg: SceneConfig) -> SyntheticBurst:
    rng = np.random.default_rng(cfg.seed)
    m = _TEXTURE_MARGIN
    big_h, big_w = cfg.height + 2 * m, cfg.width + 2 * m

    background = smooth_texture(rng, big_h, big_w)
    patch = smooth_texture(rng, big_h, big_w)
    x0, y0, x1, y1 = _patch_rect_pixels(cfg)
    patch_alpha = np.zeros((big_h, big_w), dtype=np.float64)
    patch_alpha[m + y0 : m + y1, m + x0 : m + x1] = 1.0

    poses = make_trajectory(cfg, rng)
    if cfg.exposure_gains is None:
        gains = np.ones(cfg.n_frames)
    else:
        ladder = np.asarray(cfg.exposure_gains, dtype=np.float64)
        gains = ladder[np.arange(cfg.n_frames) % len(ladder)]

    k = cfg.intrinsics
    xs, ys = pixel_grid(cfg.height, cfg.width)
    norm_x = (xs - k.cx) / k.fx
    norm_y = (ys - k.cy) / k.fy

    gt_depth = np.where(
        patch_alpha[m : m + cfg.height, m : m + cfg.width] > 0.5,
        cfg.patch_depth,
        cfg.background_depth,
    )

    clean_frames: list[np.ndarray] = []
    gt_flows: dict[int, np.ndarray] = {}
    for i, pose in enumerate(poses):
        if i == 0:
            far_x, far_y = xs, ys
            near_x, near_y = xs, ys
        else:
            far_x, far_y = _backward_map(cfg, pose, cfg.background_depth)
            near_x, near_y = _backward_map(cfg, pose, cfg.patch_depth)
        far_col, _ = sample_bilinear(background, far_x + m, far_y + m)
        near_col, _ = sample_bilinear(patch, near_x + m, near_y + m)
        alpha, _ = sample_bilinear(patch_alpha, near_x + m, near_y + m)
        frame = (
            alpha[..., None] * near_col.astype(np.float64)
            + (1.0 - alpha[..., None]) * far_col.astype(np.float64)
        )
        clean_frames.append(frame.astype(np.float32))

        if i > 0:
            # Flow between the reference and the rotation-aligned frame i:
            # the aligned view sees the scene from pose [I | R^-1 t].
            b = np.linalg.inv(small_rotation_matrix(pose.r)) @ pose.t
            px = norm_x * gt_depth
            py = norm_y * gt_depth
            denom = gt_depth + b[2]
            u = k.fx * (px + b[0]) / denom + k.cx
            v = k.fy * (py + b[1]) / denom + k.cy
            gt_flows[i] = np.stack([u - xs, v - ys], axis=-1)

    frames: list[np.ndarray] = []
    noise_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
    for frame, gain in zip(clean_frames, gains):
        shot = np.clip(frame * gain, 0.0, 1.0).astype(np.float32)
        if cfg.noise_sigma > 0:
            shot = add_signal_dependent_noise(shot, cfg.noise_sigma, noise_rng)
        frames.append(shot)

    return SyntheticBurst(
        config=cfg,
        frames=frames,
        clean_frames=clean_frames,
        poses=poses,
        gains=gains,
        gt_depth=gt_depth,
        gt_flows=gt_flows,
    )


@dataclass
class BundleInstance:
    problem: BundleProblem
    gt_poses: list[SmallPose]
    gt_points: np.ndarray


def random_bundle_instance(
    seed: int,
    n_frames: int = 10,
    n_points: int = 300,
    image_size: tuple[int, int] = (640, 480),
    focal: float = 525.0,
    depth_range: tuple[float, float] = (2.0, 6.0),
    max_rotation: float = 0.01,
    baseline_fraction: float = 0.02,
    pixel_noise: float = 0.0,
) -> BundleInstance:
    """A random small-motion bundle problem with exact, in-model tracks.

    Tracks are synthesized with the same linearized-rotation projection the
    solver minimizes, so the ground truth is an exact optimum (up to any
    added pixel noise) and recovery can be asserted tightly.
    """
    rng = np.random.default_rng(seed)
    w, h = image_size
    k = CameraIntrinsics(focal, focal, (w - 1) / 2.0, (h - 1) / 2.0)

    margin = 40.0
    pixels = np.stack(
        [
            rng.uniform(margin, w - margin, n_points),
            rng.uniform(margin, h - margin, n_points),
        ],
        axis=1,
    )
    depths = rng.uniform(*depth_range, n_points)
    coords = k.normalize(pixels)
    points = np.concatenate([coords, np.ones((n_points, 1))], axis=1) * depths[:, None]

    z_min = depth_range[0]
    poses = [SmallPose.identity()]
    for _ in range(1, n_frames):
        r = rng.uniform(-max_rotation, max_rotation, 3)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        direction[2] *= 0.1  # mostly lateral, like a hand-held burst
        t = direction * rng.uniform(0.3, 1.0) * baseline_fraction * z_min
        poses.append(SmallPose(r, t))

    observations = np.zeros((n_frames, n_points, 2))
    for i, pose in enumerate(poses):
        cam = points @ small_rotation_matrix(pose.r).T + pose.t
        observations[i, :, 0] = k.fx * cam[:, 0] / cam[:, 2] + k.cx
        observations[i, :, 1] = k.fy * cam[:, 1] / cam[:, 2] + k.cy
    if pixel_noise > 0:
        observations += rng.normal(0.0, pixel_noise, observations.shape)

    problem = BundleProblem(k, observations)
    return BundleInstance(problem, poses, points)
