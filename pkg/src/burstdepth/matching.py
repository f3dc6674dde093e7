"""Residual flow estimation between the reference and a warped target.

Rotation alignment leaves each pixel one degree of freedom: its flow must
lie along the frame's transform vector T.  The classical backend exploits
that directly, searching a 1-D displacement along T/|T| that maximizes
zero-mean NCC over a local patch; because NCC discards per-patch gain and
offset, the search is insensitive to exposure changes between shots.  The
learned backend runs the small convolutional network instead and is
interchangeable behind the same contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import cv2
import numpy as np

from .errors import DegenerateBaselineError
from .geometry import FlowField, TransformVector
from .sampling import luminance, pixel_grid, sample_bilinear

# Patches whose intensity variance falls below this are treated as
# untextured and masked: the 1-D search is undefined on them.
MIN_PATCH_VARIANCE = 1e-6


@dataclass(frozen=True)
class ClassicalBackend:
    """Constrained zero-mean NCC matcher along the transform direction.

    The raw per-pixel search is aggregated with a confidence-weighted box
    filter before use: window matching carries one measurement per patch,
    not per pixel, and the leftover per-pixel jitter would otherwise be
    amplified by every flow conversion in the frame loop (the conversions
    scale flows by baseline ratios, and sub-patch detail is invisible to
    the next frame's matcher).  Aggregation also fills pixels whose own
    NCC failed from confident neighbors in the same window.
    """

    patch: int = 11
    search_range: float = 3.0
    step: float = 0.5
    ncc_threshold: float = 0.5
    aggregate: bool = True


@dataclass(frozen=True)
class LearnedBackend:
    """Wraps a trained residual-flow network (see :mod:`network`)."""

    net: object  # torch.nn.Module; kept untyped so torch loads lazily


EstimatorBackend = Union[ClassicalBackend, LearnedBackend]


@dataclass
class ResidualFlowInput:
    """Input stack for residual estimation.

    reference, warped and initial_flow share dimensions and conceptually
    form the 8-channel input of the learned backend.  `transform` supplies
    the search direction for the classical backend; `target` optionally
    carries the unwarped (rotation-aligned) frame so the classical matcher
    can sample it once instead of resampling the warped image.
    """

    reference: np.ndarray
    warped: np.ndarray
    initial_flow: FlowField
    transform: Optional[TransformVector] = None
    target: Optional[np.ndarray] = None
    warped_valid: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = self.reference.shape[:2]
        if self.warped.shape[:2] != shape or (
            self.initial_flow.data.shape[:2] != shape
        ):
            raise ValueError("reference, warped and flow must share dimensions")


def warp_with_flow(image: np.ndarray, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sampling of `image` at p + flow(p); returns (warped, valid).

    Out-of-bounds samples and invalid flow pixels are masked.
    """
    h, w = image.shape[:2]
    xs, ys = pixel_grid(h, w)
    du = np.where(flow.valid, flow.data[:, :, 0], 0.0)
    dv = np.where(flow.valid, flow.data[:, :, 1], 0.0)
    warped, valid = sample_bilinear(image, xs + du, ys + dv)
    return warped, valid & flow.valid


def parabola_peak_offset(s_minus: np.ndarray, s_zero: np.ndarray, s_plus: np.ndarray):
    """Vertex offset in [-1, 1] sample units of the parabola through
    (-1, s_minus), (0, s_zero), (1, s_plus); exact for quadratic scores."""
    denom = s_minus + s_plus - 2.0 * s_zero
    safe = np.abs(denom) > 1e-12
    offset = np.where(safe, (s_minus - s_plus) / np.where(safe, 2.0 * denom, 1.0), 0.0)
    return np.clip(offset, -1.0, 1.0)


def _window_stats(img: np.ndarray, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed mean and variance via box filtering."""
    mean = cv2.boxFilter(img, -1, (patch, patch), borderType=cv2.BORDER_REFLECT)
    sq = cv2.boxFilter(img * img, -1, (patch, patch), borderType=cv2.BORDER_REFLECT)
    return mean, np.maximum(sq - mean * mean, 0.0)


def _search_along_transform(
    reference: np.ndarray,
    target: np.ndarray,
    v_init: FlowField,
    transform: TransformVector,
    patch: int,
    search_range: float,
    step: float,
    ncc_threshold: float,
):
    """Per-pixel 1-D NCC search; returns (delta, best_score, valid, direction)."""
    if transform.degenerate:
        raise DegenerateBaselineError("cannot search along a degenerate baseline")

    ref_l = np.ascontiguousarray(luminance(reference), dtype=np.float64)
    tgt_l = np.ascontiguousarray(luminance(target), dtype=np.float64)
    h, w = ref_l.shape
    direction = transform.array / transform.norm

    n_steps = max(int(round(search_range / step)), 1)
    deltas = np.arange(-n_steps, n_steps + 1) * step

    xs, ys = pixel_grid(h, w)
    base_x = xs + np.where(v_init.valid, v_init.data[:, :, 0], 0.0)
    base_y = ys + np.where(v_init.valid, v_init.data[:, :, 1], 0.0)

    ref_mean, ref_var = _window_stats(ref_l, patch)
    textured = ref_var > MIN_PATCH_VARIANCE

    scores = np.full((len(deltas), h, w), -np.inf)
    searchable = textured.copy()
    for k, delta in enumerate(deltas):
        samp, ok = sample_bilinear(tgt_l, base_x + delta * direction[0],
                                   base_y + delta * direction[1])
        # Constant-zero padding: any window touching the image border (or
        # covering out-of-bounds samples) is rejected outright.  Reflected
        # padding would fabricate plausible but wrong statistics there.
        cov_ok = cv2.boxFilter(ok.astype(np.float64), -1, (patch, patch),
                               borderType=cv2.BORDER_CONSTANT)
        window_ok = cov_ok > 1.0 - 1e-9
        # A pixel is searchable only when every candidate can be scored:
        # a one-sided window near the border happily locks onto a wrong
        # displacement with high confidence when the truth is unreachable.
        searchable &= window_ok
        t_mean, t_var = _window_stats(samp, patch)
        cross = cv2.boxFilter(ref_l * samp, -1, (patch, patch),
                              borderType=cv2.BORDER_REFLECT)
        denom = np.sqrt(ref_var * t_var)
        good = window_ok & textured & (denom > MIN_PATCH_VARIANCE)
        scores[k] = np.where(
            good, (cross - ref_mean * t_mean) / np.where(good, denom, 1.0), -np.inf
        )

    best = np.argmax(scores, axis=0)
    best_score = np.take_along_axis(scores, best[None], axis=0)[0]

    lo = np.maximum(best - 1, 0)
    hi = np.minimum(best + 1, len(deltas) - 1)
    s_minus = np.take_along_axis(scores, lo[None], axis=0)[0]
    s_plus = np.take_along_axis(scores, hi[None], axis=0)[0]
    with np.errstate(invalid="ignore"):
        interior = (
            (best > 0)
            & (best < len(deltas) - 1)
            & np.isfinite(s_minus)
            & np.isfinite(s_plus)
        )
        offset = np.where(
            interior, parabola_peak_offset(np.nan_to_num(s_minus, nan=-1.0, neginf=-1.0),
                                           np.nan_to_num(best_score, nan=-1.0, neginf=-1.0),
                                           np.nan_to_num(s_plus, nan=-1.0, neginf=-1.0)),
            0.0,
        )
    delta_star = deltas[best] + offset * step
    valid = v_init.valid & np.isfinite(best_score) & (best_score >= ncc_threshold)
    # Trustworthy pixels additionally have every candidate scored and the
    # peak strictly inside the search range.
    trusted = valid & searchable & interior
    return delta_star, best_score, valid, trusted, direction


def constrained_match(
    reference: np.ndarray,
    target: np.ndarray,
    v_init: FlowField,
    transform: TransformVector,
    patch: int = 11,
    search_range: float = 3.0,
    step: float = 0.5,
    ncc_threshold: float = 0.5,
) -> FlowField:
    """Residual flow along T/|T| maximizing windowed zero-mean NCC.

    For every pixel the target is sampled at p + v_init(p) + delta * T/|T|
    for delta on a regular grid spanning [-search_range, +search_range];
    the best score is refined to subpixel precision with a parabola fit.
    Pixels whose best NCC falls below `ncc_threshold`, whose reference
    patch is untextured, or whose candidate windows leave the target are
    masked.  The returned residual is delta * T/|T|, exactly parallel to T.
    """
    delta_star, _, valid, _, direction = _search_along_transform(
        reference, target, v_init, transform, patch, search_range, step, ncc_threshold
    )
    residual = np.stack(
        [delta_star * direction[0], delta_star * direction[1]], axis=-1
    )
    residual[~valid] = 0.0
    return FlowField(residual, valid)


def _aggregate_delta(
    delta: np.ndarray,
    score: np.ndarray,
    valid: np.ndarray,
    ncc_threshold: float,
    patch: int,
):
    """Confidence-weighted window average of the matched displacements."""
    conf = np.where(valid, np.maximum(score - ncc_threshold, 0.0) + 1e-3, 0.0)
    num = cv2.boxFilter(conf * delta, -1, (patch, patch),
                        borderType=cv2.BORDER_REFLECT)
    den = cv2.boxFilter(conf, -1, (patch, patch), borderType=cv2.BORDER_REFLECT)
    filled = den > 1e-8
    smoothed = np.where(filled, num / np.where(filled, den, 1.0), 0.0)
    return smoothed, filled


def estimate_residual(inp: ResidualFlowInput, backend: EstimatorBackend) -> FlowField:
    """Residual flow such that initial_flow + residual aligns warped to reference."""
    if isinstance(backend, ClassicalBackend):
        if inp.transform is None:
            raise ValueError("classical backend needs the frame's transform vector")
        if inp.target is not None:
            # Single-interpolation path: sample the aligned target directly.
            target, v_init = inp.target, inp.initial_flow
        else:
            target = inp.warped
            v_init = FlowField(
                np.zeros(inp.reference.shape[:2] + (2,)), inp.initial_flow.valid.copy()
            )
        delta, score, valid, trusted, direction = _search_along_transform(
            inp.reference, target, v_init, inp.transform,
            backend.patch, backend.search_range, backend.step, backend.ncc_threshold,
        )
        if backend.aggregate:
            delta, filled = _aggregate_delta(
                delta, score, trusted, backend.ncc_threshold, backend.patch
            )
            valid = filled & v_init.valid
        else:
            valid = trusted
        residual = np.stack(
            [delta * direction[0], delta * direction[1]], axis=-1
        )
        residual[~valid] = 0.0
        return FlowField(residual, valid)
    if isinstance(backend, LearnedBackend):
        from . import network

        residual = network.forward_residual(
            backend.net, inp.reference, inp.warped, inp.initial_flow.data
        )
        valid = inp.initial_flow.valid.copy()
        if inp.warped_valid is not None:
            valid &= inp.warped_valid
        data = np.where(valid[..., None], residual, 0.0)
        return FlowField(data, valid)
    raise TypeError(f"unknown backend {type(backend).__name__}")
