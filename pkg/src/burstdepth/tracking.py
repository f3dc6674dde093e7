"""Harris corner extraction and pyramidal KLT tracking across the burst.

Tracking runs on histogram-equalized frames so that exposure changes
between shots do not starve the matcher; the equalized images are used
only here, never for depth estimation or the photographic applications.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InsufficientTracksError
from .sampling import luminance


@dataclass(frozen=True)
class TrackingConfig:
    harris_k: float = 0.04
    corner_count_target: int = 500
    min_corner_distance: float = 10.0
    klt_window: int = 21
    pyramid_levels: int = 3
    # Mean absolute window residual (8-bit levels) above which a track is
    # dropped.  Equalization amplifies sensor noise, so this sits above the
    # ~50-level residual of heavily noisy frames but well below the >100 of
    # genuine mistracks (occlusion, blank frames).
    max_klt_error: float = 60.0
    # Relative Harris response threshold; responses below this fraction of
    # the strongest corner are discarded.
    harris_quality: float = 0.01
    # Fewer surviving full-length tracks than this aborts the pipeline.
    min_tracks: int = 50

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        for name in ("harris_k", "corner_count_target", "min_corner_distance",
                     "klt_window", "max_klt_error", "harris_quality"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FeatureTrack:
    """One reference-frame feature and its positions across all frames.

    positions[0] equals ref_position; once a frame is lost every later
    frame is lost too, and lost positions are NaN.
    """

    ref_position: np.ndarray
    positions: np.ndarray
    status: np.ndarray

    @property
    def fully_tracked(self) -> bool:
        return bool(self.status.all())


def to_gray_u8(image: np.ndarray) -> np.ndarray:
    """Float [0, 1] image (gray or RGB) to an 8-bit grayscale image."""
    if image.dtype == np.uint8:
        return image
    gray = luminance(image)
    return np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)


def histogram_equalize(image: np.ndarray) -> np.ndarray:
    """Equalize an 8-bit grayscale image with the plain CDF rule.

    out = round(cdf(v) * 255).  The mapping is monotone; a constant image
    maps to full scale (its CDF is 1 everywhere).
    """
    if image.dtype != np.uint8:
        raise ValueError("histogram_equalize expects a uint8 image")
    hist = np.bincount(image.ravel(), minlength=256)
    cdf = np.cumsum(hist) / image.size
    lut = np.rint(cdf * 255.0).astype(np.uint8)
    return lut[image]


def detect_harris(image: np.ndarray, cfg: TrackingConfig) -> np.ndarray:
    """Harris corners, strongest first, non-max suppressed.

    Returns an (N, 2) float array of (x, y) positions with
    N <= cfg.corner_count_target; an empty result is valid (a constant
    image has no corners).
    """
    corners = cv2.goodFeaturesToTrack(
        image,
        maxCorners=cfg.corner_count_target,
        qualityLevel=cfg.harris_quality,
        minDistance=cfg.min_corner_distance,
        blockSize=3,
        useHarrisDetector=True,
        k=cfg.harris_k,
    )
    if corners is None:
        return np.zeros((0, 2), dtype=np.float64)
    return corners.reshape(-1, 2).astype(np.float64)


def _in_bounds(points: np.ndarray, width: int, height: int) -> np.ndarray:
    # Strict interior: tracked positions must have full interpolation support.
    return (
        (points[:, 0] > 0.0)
        & (points[:, 0] < width - 1.0)
        & (points[:, 1] > 0.0)
        & (points[:, 1] < height - 1.0)
    )


def track_sequence(
    images: list[np.ndarray], corners: np.ndarray, cfg: TrackingConfig
) -> list[FeatureTrack]:
    """Chain KLT frame to frame from the reference through the sequence.

    `images` are the equalized 8-bit frames, reference first.  Each track
    records a subpixel position per frame; a track is lost when KLT fails,
    its residual error exceeds cfg.max_klt_error, or it leaves the image,
    and stays lost afterwards.  Raises InsufficientTracksError when fewer
    than cfg.min_tracks survive the full sequence.
    """
    if len(images) < 2:
        raise ValueError("need at least two frames to track")
    h, w = images[0].shape[:2]
    for img in images[1:]:
        if img.shape[:2] != (h, w):
            raise ValueError("all frames must share dimensions")

    n_frames = len(images)
    n_pts = len(corners)
    positions = np.full((n_pts, n_frames, 2), np.nan, dtype=np.float64)
    status = np.zeros((n_pts, n_frames), dtype=bool)
    positions[:, 0] = corners
    status[:, 0] = True

    lk_params = dict(
        winSize=(cfg.klt_window, cfg.klt_window),
        maxLevel=cfg.pyramid_levels - 1,
        criteria=(cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01),
    )

    prev_pts = corners.astype(np.float32).reshape(-1, 1, 2)
    alive = np.ones(n_pts, dtype=bool)
    for i in range(1, n_frames):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        nxt, ok, err = cv2.calcOpticalFlowPyrLK(
            images[i - 1], images[i], prev_pts[idx], None, **lk_params
        )
        nxt = nxt.reshape(-1, 2)
        ok = ok.ravel().astype(bool)
        err = err.ravel()
        ok &= err <= cfg.max_klt_error
        ok &= _in_bounds(nxt.astype(np.float64), w, h)

        kept = idx[ok]
        positions[kept, i] = nxt[ok]
        status[kept, i] = True
        alive[idx[~ok]] = False
        prev_pts[kept, 0] = nxt[ok]

    tracks = [
        FeatureTrack(positions[j, 0].copy(), positions[j].copy(), status[j].copy())
        for j in range(n_pts)
    ]
    n_full = sum(t.fully_tracked for t in tracks)
    if n_full < cfg.min_tracks:
        raise InsufficientTracksError(
            f"{n_full} full-length tracks, need at least {cfg.min_tracks}"
        )
    return tracks


def equalize_burst(frames: list[np.ndarray]) -> list[np.ndarray]:
    """Luminance + histogram equalization of every frame, for tracking only."""
    return [histogram_equalize(to_gray_u8(f)) for f in frames]
