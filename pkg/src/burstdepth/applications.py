"""Depth-based burst alignment and its photographic consumers.

Once depth and poses are known, every non-reference frame can be warped to
the reference viewpoint by reprojecting each reference pixel's 3-D point
into the frame and sampling bicubically.  The aligned stack then feeds
weighted-average denoising, multi-resolution exposure fusion, and
synthetic refocusing; evaluation metrics and the signal-dependent noise
model used by the synthetic protocol live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
import scipy.ndimage as ndi

from .geometry import CameraIntrinsics, InverseDepthMap, SmallPose, small_rotation_matrix
from .sampling import luminance, pixel_grid, sample_bicubic

# Gaussian bandwidth of the denoising weights, in [0, 1] intensity units
# (10 gray levels on an 8-bit scale).
DENOISE_SIGMA = 10.0 / 255.0

# Quality measures are floored here before exponentiation so frames with
# zero contrast or saturation still rank by well-exposedness.
_MEASURE_FLOOR = 1e-6


@dataclass
class AlignedBurst:
    """Frames warped to the reference viewpoint, with validity masks."""

    frames: list[np.ndarray]
    masks: list[np.ndarray]

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ValueError("one mask per frame required")


@dataclass(frozen=True)
class FusionConfig:
    contrast_exp: float = 1.0
    saturation_exp: float = 1.0
    exposedness_exp: float = 1.0
    exposedness_sigma: float = 0.2
    pyramid_depth: int | None = None  # default: floor(log2(min dim)) - 2

    def __post_init__(self):
        if min(self.contrast_exp, self.saturation_exp, self.exposedness_exp) < 0:
            raise ValueError("weight exponents must be >= 0")
        if self.pyramid_depth is not None and self.pyramid_depth < 1:
            raise ValueError("pyramid depth must be >= 1")


def align_to_reference(
    originals: list[np.ndarray],
    intrinsics: CameraIntrinsics,
    poses: list[SmallPose],
    depth: InverseDepthMap,
) -> AlignedBurst:
    """Warp each original frame to the reference viewpoint using the depth map.

    For every reference pixel, the 3-D point at its depth is reprojected
    with the frame's pose and the original frame is sampled bicubically
    there.  Pixels with invalid depth, or whose reprojection leaves the
    frame, are masked.  The reference frame passes through unwarped.
    """
    if len(originals) != len(poses):
        raise ValueError("one pose per frame required")
    h, w = originals[0].shape[:2]
    if depth.data.shape != (h, w):
        raise ValueError("depth map must match the reference dimensions")

    z = depth.depth()
    depth_ok = depth.valid & np.isfinite(z)
    z_safe = np.where(depth_ok, z, 1.0)

    xs, ys = pixel_grid(h, w)
    norm_x = (xs - intrinsics.cx) / intrinsics.fx
    norm_y = (ys - intrinsics.cy) / intrinsics.fy
    px = norm_x * z_safe
    py = norm_y * z_safe
    pz = z_safe

    frames = [originals[0]]
    masks = [np.ones((h, w), dtype=bool)]
    for original, pose in zip(originals[1:], poses[1:]):
        rot = small_rotation_matrix(pose.r)
        cam_x = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + pose.t[0]
        cam_y = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + pose.t[1]
        cam_z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + pose.t[2]
        front = cam_z > 1e-12
        cam_z = np.where(front, cam_z, 1.0)
        u = intrinsics.fx * cam_x / cam_z + intrinsics.cx
        v = intrinsics.fy * cam_y / cam_z + intrinsics.cy
        warped, ok = sample_bicubic(original, u, v)
        frames.append(warped)
        masks.append(ok & front & depth_ok)
    return AlignedBurst(frames, masks)


def denoise_weighted_average(
    burst: AlignedBurst, sigma_weight: float = DENOISE_SIGMA
) -> np.ndarray:
    """Per-pixel weighted average of the aligned frames.

    Non-reference weights are exp(-d^2 / (2 sigma^2)) with d the mean RGB
    distance to the reference; the reference itself has weight 1, so
    identical frames reproduce the reference exactly.
    """
    if len(burst.frames) < 2:
        raise ValueError("need at least two frames to denoise")
    ref = burst.frames[0].astype(np.float64)
    acc = np.zeros_like(ref)
    total = np.ones(ref.shape[:2])
    for frame, mask in zip(burst.frames[1:], burst.masks[1:]):
        diff = frame.astype(np.float64) - ref
        d2 = np.mean(diff**2, axis=-1) if diff.ndim == 3 else diff**2
        weight = np.exp(-d2 / (2.0 * sigma_weight**2)) * mask
        acc += weight[..., None] * diff if diff.ndim == 3 else weight * diff
        total += weight
    out = ref + acc / (total[..., None] if ref.ndim == 3 else total)
    return out.astype(burst.frames[0].dtype)


def _quality_weights(frame: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    gray = luminance(frame).astype(np.float64)
    lap = ndi.convolve(
        gray, np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]),
        mode="reflect",
    )
    contrast = np.abs(lap)
    saturation = frame.astype(np.float64).std(axis=-1)
    exposedness = np.exp(
        -((frame.astype(np.float64) - 0.5) ** 2) / (2.0 * cfg.exposedness_sigma**2)
    ).prod(axis=-1)
    return (
        np.maximum(contrast, _MEASURE_FLOOR) ** cfg.contrast_exp
        * np.maximum(saturation, _MEASURE_FLOOR) ** cfg.saturation_exp
        * np.maximum(exposedness, _MEASURE_FLOOR) ** cfg.exposedness_exp
    )


def _pyr_down(img: np.ndarray) -> np.ndarray:
    return cv2.pyrDown(img)


def _pyr_up(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return cv2.pyrUp(img, dstsize=(shape[1], shape[0]))


def normalized_fusion_weights(
    burst: AlignedBurst, cfg: FusionConfig = FusionConfig()
) -> np.ndarray:
    """Per-frame weights, normalized to sum to 1 at every pixel."""
    weights = np.stack(
        [
            _quality_weights(frame, cfg) * mask
            for frame, mask in zip(burst.frames, burst.masks)
        ]
    )
    total = weights.sum(axis=0)
    fallback = total <= 0.0
    if fallback.any():
        valid_any = np.stack(burst.masks).astype(np.float64)
        counts = valid_any.sum(axis=0)
        counts[counts == 0] = 1.0
        uniform = valid_any / counts
        weights[:, fallback] = uniform[:, fallback]
        total = weights.sum(axis=0)
    return weights / total


def exposure_fuse(burst: AlignedBurst, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Multi-resolution blend of the aligned stack by per-pixel quality.

    Weights combine contrast, saturation and well-exposedness; blending
    merges Laplacian pyramids of the frames under Gaussian pyramids of the
    weights, then collapses.  Output is clamped to [0, 1].
    """
    if len(burst.frames) < 2:
        raise ValueError("need at least two frames to fuse")
    h, w = burst.frames[0].shape[:2]
    depth = cfg.pyramid_depth
    if depth is None:
        depth = max(int(math.floor(math.log2(min(h, w)))) - 2, 1)

    weights = normalized_fusion_weights(burst, cfg)

    ref = burst.frames[0].astype(np.float64)
    merged: list[np.ndarray] = []
    for frame, mask, weight in zip(burst.frames, burst.masks, weights):
        # Masked pixels inherit the reference value so pyramid smoothing
        # never bleeds zeros into the blend.
        img = np.where(mask[..., None], frame.astype(np.float64), ref)
        gauss_img = [img]
        gauss_w = [weight]
        for _ in range(depth):
            if min(gauss_img[-1].shape[:2]) < 4:
                break
            gauss_img.append(_pyr_down(gauss_img[-1]))
            gauss_w.append(_pyr_down(gauss_w[-1]))
        laplacian = [
            gauss_img[k] - _pyr_up(gauss_img[k + 1], gauss_img[k].shape[:2])
            for k in range(len(gauss_img) - 1)
        ]
        laplacian.append(gauss_img[-1])
        contribution = [
            lap * gw[..., None] for lap, gw in zip(laplacian, gauss_w)
        ]
        if not merged:
            merged = contribution
        else:
            merged = [m + c for m, c in zip(merged, contribution)]

    out = merged[-1]
    for k in range(len(merged) - 2, -1, -1):
        out = _pyr_up(out, merged[k].shape[:2]) + merged[k]
    return np.clip(out, 0.0, 1.0).astype(burst.frames[0].dtype)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(int(math.ceil(4.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 1e-8:
        return img.astype(np.float64, copy=True)
    kernel = gaussian_kernel(sigma)
    out = img.astype(np.float64, copy=True)
    out = ndi.convolve1d(out, kernel, axis=0, mode="reflect")
    out = ndi.convolve1d(out, kernel, axis=1, mode="reflect")
    return out


def synthetic_refocus(
    image: np.ndarray,
    depth: InverseDepthMap,
    focal_depth: float,
    aperture: float,
    max_layers: int = 32,
) -> np.ndarray:
    """Shallow depth-of-field rendering from the estimated depth.

    Each pixel's blur radius is aperture * |w - w_focus| (proportional to
    its disparity from the focal plane).  The image is decomposed into
    inverse-depth layers, each blurred with its own Gaussian, and
    composited back to front with blurred alpha masks.
    """
    if focal_depth <= 0:
        raise ValueError("focal depth must be positive")
    if aperture < 0:
        raise ValueError("aperture must be >= 0")
    if aperture == 0.0:
        return image.copy()

    w_focus = 1.0 / focal_depth
    w = np.where(depth.valid, depth.data, w_focus)
    levels = np.unique(w)
    if len(levels) > max_layers:
        edges = np.linspace(w.min(), w.max(), max_layers + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        idx = np.clip(np.digitize(w, edges[1:-1]), 0, max_layers - 1)
        w = centers[idx]
        levels = np.unique(w)

    color = image.ndim == 3
    acc = np.zeros_like(image, dtype=np.float64)
    acc_alpha = np.zeros(image.shape[:2], dtype=np.float64)
    # Ascending w = descending depth: far layers first, near layers on top.
    for level in levels:
        mask = (w == level).astype(np.float64)
        sigma = aperture * abs(level - w_focus)
        layer = image * (mask[..., None] if color else mask)
        blurred = _gaussian_blur(layer, sigma)
        alpha = _gaussian_blur(mask, sigma)
        alpha_b = alpha[..., None] if color else alpha
        acc = blurred + (1.0 - alpha_b) * acc
        acc_alpha = alpha + (1.0 - alpha) * acc_alpha

    norm = np.where(acc_alpha > 1e-6, acc_alpha, 1.0)
    out = acc / (norm[..., None] if color else norm)
    return out.astype(image.dtype)


def recolor_depth_range(
    image: np.ndarray, depth_z: np.ndarray, z_min: float, z_max: float
) -> np.ndarray:
    """Depth-range recolor demo: keep color inside [z_min, z_max], gray out the rest."""
    gray = luminance(image)
    selected = np.isfinite(depth_z) & (depth_z >= z_min) & (depth_z <= z_max)
    out = np.repeat(gray[..., None], 3, axis=-1).astype(np.float64)
    out[selected] = image[selected]
    return out.astype(image.dtype)


def rmse(estimate: np.ndarray, ground_truth: np.ndarray, valid: np.ndarray) -> float:
    """Root mean square error over the jointly valid pixels."""
    if estimate.shape != ground_truth.shape or estimate.shape != valid.shape:
        raise ValueError("maps and mask must share dimensions")
    if not valid.any():
        raise ValueError("no valid pixels")
    diff = estimate[valid] - ground_truth[valid]
    return float(np.sqrt(np.mean(diff**2)))


def bad_pixel_rate(
    estimate: np.ndarray, ground_truth: np.ndarray, valid: np.ndarray
) -> float:
    """Percentage of valid pixels whose error reaches 10% of the max depth.

    The threshold is 0.10 * max ground-truth depth over valid pixels;
    pixels with |error| >= threshold count as bad.
    """
    if estimate.shape != ground_truth.shape or estimate.shape != valid.shape:
        raise ValueError("maps and mask must share dimensions")
    if not valid.any():
        raise ValueError("no valid pixels")
    threshold = 0.10 * float(ground_truth[valid].max())
    bad = np.abs(estimate[valid] - ground_truth[valid]) >= threshold
    return float(100.0 * bad.mean())


def add_signal_dependent_noise(
    image: np.ndarray, sigma: float, seed: int | np.random.Generator = 0
) -> np.ndarray:
    """Shot-noise-like corruption: per-pixel std sigma * sqrt(intensity).

    Intensities must lie in [0, 1]; the output is clamped back to [0, 1]
    and is deterministic for a fixed seed.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return image.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = sigma * np.sqrt(np.clip(image, 0.0, 1.0))
    noisy = image + rng.standard_normal(image.shape) * std
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


def psnr(image: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((image.astype(np.float64) - reference.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak**2 / mse)


def median_scale(
    estimate: np.ndarray, ground_truth: np.ndarray, valid: np.ndarray
) -> float:
    """Scale factor median(gt / est): recovered depth is defined up to scale."""
    ok = valid & (estimate > 0) & np.isfinite(estimate) & np.isfinite(ground_truth)
    if not ok.any():
        raise ValueError("no valid pixels for scale alignment")
    return float(np.median(ground_truth[ok] / estimate[ok]))
