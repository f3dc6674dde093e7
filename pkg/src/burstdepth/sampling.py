"""Subpixel image sampling.

Both samplers share the same validity convention: a sample is valid when
its continuous position lies inside the source support [0, W-1] x [0, H-1].
Kernel taps that fall outside the image are clamped to the border rows and
columns; positions outside the support are masked invalid instead of being
clamped, so downstream averages never see extrapolated values.

The cubic kernel is Catmull-Rom (cubic convolution with a = -0.5).  At
integer sample positions both kernels reduce exactly to a copy of the
source pixel, so an identity warp is lossless.
"""

from __future__ import annotations

import numpy as np

_CUBIC_A = -0.5


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance of an RGB image; grayscale passes through."""
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return (
            0.299 * image[:, :, 0] + 0.587 * image[:, :, 1] + 0.114 * image[:, :, 2]
        ).astype(image.dtype)
    raise ValueError(f"expected HxW or HxWx3 image, got shape {image.shape}")


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid of pixel-center coordinates (x columns, y rows), float64."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys


def _cubic_weights(frac: np.ndarray) -> list[np.ndarray]:
    """Kernel weights for the 4 taps at offsets -1, 0, 1, 2."""
    a = _CUBIC_A
    w = []
    for offset in (-1, 0, 1, 2):
        t = np.abs(frac - offset)
        near = (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
        far = a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
        w.append(np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0)))
    return w


def sample_bicubic(
    image: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample `image` at continuous positions (xs, ys).

    Returns (values, valid).  `values` has the sample-grid shape (plus the
    channel axis for color images) and the image dtype; invalid samples are 0.
    """
    if not np.issubdtype(image.dtype, np.floating):
        raise ValueError("samplers expect a floating-point image")
    h, w = image.shape[:2]
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    wx = _cubic_weights(xs - x0)
    wy = _cubic_weights(ys - y0)

    color = image.ndim == 3
    acc_shape = xs.shape + ((image.shape[2],) if color else ())
    acc = np.zeros(acc_shape, dtype=np.float64)
    src = image.astype(np.float64, copy=False)
    for j, dy in enumerate((-1, 0, 1, 2)):
        yy = np.clip(y0 + dy, 0, h - 1)
        row_w = wy[j]
        for i, dx in enumerate((-1, 0, 1, 2)):
            xx = np.clip(x0 + dx, 0, w - 1)
            weight = row_w * wx[i]
            taps = src[yy, xx]
            acc += taps * (weight[..., None] if color else weight)

    acc[~valid] = 0.0
    return acc.astype(image.dtype, copy=False), valid


def sample_bilinear(
    image: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear counterpart of :func:`sample_bicubic`; same conventions."""
    if not np.issubdtype(image.dtype, np.floating):
        raise ValueError("samplers expect a floating-point image")
    h, w = image.shape[:2]
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)

    src = image.astype(np.float64, copy=False)
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    acc = top * (1.0 - fy) + bot * fy

    acc[~valid] = 0.0
    return acc.astype(image.dtype, copy=False), valid
