"""Camera model and the closed-form transforms linking rotation,
translation, optical flow and inverse depth in a narrow-baseline burst.

Conventions
-----------
Pixel coordinates u = (u, v): u is the column (rightward), v the row
(downward), origin at the top-left pixel center.  Homogeneous pixel
vectors are [u, v, 1].  Normalized image coordinates x satisfy
[u, v, 1] = K [x, y, 1].

Per-frame motion relative to the reference is a small rotation r
(radians) and a translation t (scene units).  Rotation matrices are
linearized around the identity, which is accurate to O(|r|^2) and keeps
the bundle objective polynomial in the pose parameters.

Inverse depth w = 1/z is the estimation variable: after rotation
alignment, a pixel's optical flow toward frame i is v = T_i * w with the
frame's transform vector

    T_i = (fx*tx + cx*tz,  fy*ty + cy*tz),

so flow fields and inverse-depth maps convert back and forth through T
and its pseudo-inverse.  Transform vectors shorter than
`MIN_BASELINE_NORM` pixels are treated as degenerate: the conversion
divides by |T|^2 and would amplify noise without bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBaselineError, DegenerateProjectionError
from .sampling import pixel_grid, sample_bicubic

# Below this |T| (pixels * scene units) a frame carries no usable parallax.
MIN_BASELINE_NORM = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not all(np.isfinite([self.fx, self.fy, self.cx, self.cy])):
            raise ValueError("intrinsics must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, pixels: np.ndarray) -> np.ndarray:
        """Pixel coordinates (..., 2) to normalized image coordinates."""
        pixels = np.asarray(pixels, dtype=np.float64)
        return np.stack(
            [(pixels[..., 0] - self.cx) / self.fx, (pixels[..., 1] - self.cy) / self.fy],
            axis=-1,
        )

    def denormalize(self, coords: np.ndarray) -> np.ndarray:
        """Normalized image coordinates (..., 2) to pixel coordinates."""
        coords = np.asarray(coords, dtype=np.float64)
        return np.stack(
            [coords[..., 0] * self.fx + self.cx, coords[..., 1] * self.fy + self.cy],
            axis=-1,
        )


@dataclass(frozen=True)
class SmallPose:
    """Linearized pose: rotation vector r (radians) and translation t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64).reshape(3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.t))):
            raise ValueError("pose components must be finite")

    @classmethod
    def identity(cls) -> "SmallPose":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class TransformVector:
    """The 2-vector mapping inverse depth to optical flow for one frame."""

    tx: float
    ty: float

    @property
    def array(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def norm(self) -> float:
        return float(np.hypot(self.tx, self.ty))

    @property
    def degenerate(self) -> bool:
        return self.norm < MIN_BASELINE_NORM


def _apply_sentinel(data: np.ndarray, valid: np.ndarray) -> np.ndarray:
    out = np.array(data, dtype=np.float64)
    out[~valid] = np.nan
    return out


@dataclass
class FlowField:
    """Per-pixel 2-vector flow (du, dv) in pixels on the reference grid.

    Invalid pixels carry NaN in `data` and False in `valid`.
    """

    data: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError("flow data must be (H, W, 2)")
        if self.valid is None:
            self.valid = np.ones(self.data.shape[:2], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.data.shape[:2]:
            raise ValueError("validity mask must match flow dimensions")
        if not self.valid.all():
            self.data = _apply_sentinel(self.data, self.valid)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class InverseDepthMap:
    """Per-pixel inverse depth w = 1/z on the reference grid.

    Negative values on valid pixels are clamped to zero at construction:
    the scene is in front of the camera, and noisy flow can otherwise
    produce small negative w.  Invalid pixels carry NaN.
    """

    data: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("inverse depth data must be (H, W)")
        if self.valid is None:
            self.valid = np.ones(self.data.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.data.shape:
            raise ValueError("validity mask must match map dimensions")
        self.data = np.maximum(self.data, 0.0, where=self.valid, out=np.array(self.data))
        if not self.valid.all():
            self.data = _apply_sentinel(self.data, self.valid)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def depth(self, min_w: float = 1e-12) -> np.ndarray:
        """Depth z = 1/w; pixels with w <= min_w or invalid become NaN."""
        z = np.full_like(self.data, np.nan)
        ok = self.valid & (self.data > min_w)
        z[ok] = 1.0 / self.data[ok]
        return z


def project(point3: np.ndarray) -> np.ndarray:
    """Perspective division [a, b, c] -> [a/c, b/c]."""
    p = np.asarray(point3, dtype=np.float64).reshape(3)
    if p[2] == 0.0:
        raise DegenerateProjectionError("cannot project a point with zero depth")
    return p[:2] / p[2]


def small_rotation_matrix(r: np.ndarray) -> np.ndarray:
    """First-order rotation matrix I + [r]x for a small rotation vector."""
    rx, ry, rz = np.asarray(r, dtype=np.float64).reshape(3)
    return np.array(
        [
            [1.0, -rz, ry],
            [rz, 1.0, -rx],
            [-ry, rx, 1.0],
        ]
    )


def rotation_align_warp(
    image: np.ndarray, intrinsics: CameraIntrinsics, r: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Warp a frame so its optical axis matches the reference frame's.

    Every output pixel u is sampled bicubically from the source at the
    projection of K R(r) K^-1 [u, v, 1].  Samples falling outside the
    source are masked invalid, not clamped; with r = 0 the warp is an
    exact identity.  Returns (warped, valid).
    """
    if image.size == 0:
        raise ValueError("image must be nonempty")
    h, w = image.shape[:2]
    mat = intrinsics.matrix @ small_rotation_matrix(r) @ intrinsics.inverse_matrix
    xs, ys = pixel_grid(h, w)
    sx = mat[0, 0] * xs + mat[0, 1] * ys + mat[0, 2]
    sy = mat[1, 0] * xs + mat[1, 1] * ys + mat[1, 2]
    sz = mat[2, 0] * xs + mat[2, 1] * ys + mat[2, 2]
    front = sz > 1e-12
    sz_safe = np.where(front, sz, 1.0)
    warped, valid = sample_bicubic(image, sx / sz_safe, sy / sz_safe)
    return warped, valid & front


def translation_transform_vector(
    intrinsics: CameraIntrinsics, t: np.ndarray
) -> TransformVector:
    """Transform vector T = (fx*tx + cx*tz, fy*ty + cy*tz) for translation t."""
    tx, ty, tz = np.asarray(t, dtype=np.float64).reshape(3)
    return TransformVector(
        intrinsics.fx * tx + intrinsics.cx * tz,
        intrinsics.fy * ty + intrinsics.cy * tz,
    )


def flow_from_inverse_depth(w: InverseDepthMap, transform: TransformVector) -> FlowField:
    """Flow toward a frame: v = T w per pixel.  Masks propagate."""
    data = np.stack([w.data * transform.tx, w.data * transform.ty], axis=-1)
    return FlowField(data, w.valid.copy())


def _check_baseline(transform: TransformVector) -> None:
    if transform.degenerate:
        raise DegenerateBaselineError(
            f"|T| = {transform.norm:.3e} below {MIN_BASELINE_NORM:.0e}; "
            "frame carries no usable parallax"
        )


def inverse_depth_from_flow(
    flow: FlowField, transform: TransformVector
) -> InverseDepthMap:
    """Least-squares inverse depth w = (T . v) / |T|^2 per pixel.

    This is the pseudo-inverse of v = T w: the flow component orthogonal
    to T is discarded.  Raises DegenerateBaselineError for |T| below the
    threshold.
    """
    _check_baseline(transform)
    t = transform.array
    w = (flow.data[:, :, 0] * t[0] + flow.data[:, :, 1] * t[1]) / (t @ t)
    return InverseDepthMap(np.where(flow.valid, w, 0.0), flow.valid.copy())


def convert_flow_between_frames(
    flow_prev: FlowField,
    transform_prev: TransformVector,
    transform_next: TransformVector,
) -> FlowField:
    """Re-express a frame's flow as the next frame's initial flow.

    v' = T_next (T_prev^+ v): project onto the previous transform vector to
    recover inverse depth, then map through the next one.  Scaling both
    transform vectors by the same factor leaves the output unchanged.
    """
    _check_baseline(transform_prev)
    tp = transform_prev.array
    w = (flow_prev.data[:, :, 0] * tp[0] + flow_prev.data[:, :, 1] * tp[1]) / (tp @ tp)
    w = np.where(flow_prev.valid, w, 0.0)
    data = np.stack([w * transform_next.tx, w * transform_next.ty], axis=-1)
    return FlowField(data, flow_prev.valid.copy())
