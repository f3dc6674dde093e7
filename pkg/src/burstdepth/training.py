"""Toy-scale training harness for the residual-flow network.

Generates synthetic (reference, target, flow) triples whose ground-truth
flow is linear in a smooth inverse-depth field, degrades the flow into an
initial estimate, and trains the network to predict the residual with an
average-endpoint-error loss under ADAM.

Augmentation mirrors the usual optical-flow recipe: random rotation and
zoom applied consistently to images and flow vectors, additive color
jitter, and Gaussian noise whose standard deviation is itself drawn from
the positive half of a normal distribution.  Fine-tuning mode draws the
color jitter independently for the reference and the target, synthesizing
pairs with mismatched camera settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import cv2
import numpy as np
import torch

from .network import ResidualFlowNet, normalize_stack
from .sampling import pixel_grid, sample_bilinear


@dataclass
class FlowSample:
    reference: np.ndarray   # (H, W, 3) float32 in [0, 1]
    target: np.ndarray      # (H, W, 3) float32 in [0, 1]
    flow_gt: np.ndarray     # (H, W, 2) float64, reference -> target
    flow_init: np.ndarray   # (H, W, 2) float64, degraded flow
    valid: np.ndarray       # (H, W) bool


@dataclass(frozen=True)
class TrainingConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    learning_rate: float = 1e-4
    dropped_learning_rate: float = 1e-5
    lr_drop_epoch: int = 60
    fine_tune: bool = False
    fine_tune_lr: float = 1e-5
    rotation_range_deg: float = 17.0
    scale_range: tuple[float, float] = (1.0, 2.0)
    noise_sigma: float = 0.1
    jitter_sigma: float = 0.4
    augment: bool = True
    batch_size: int = 4
    iterations: int = 200
    seed: int = 0


@dataclass
class TrainingResult:
    losses: list[float]
    initial_epe: float
    final_epe: float


def _smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    field = rng.standard_normal((h, w))
    field = cv2.GaussianBlur(field, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    lo, hi = field.min(), field.max()
    return (field - lo) / max(hi - lo, 1e-12)


def make_toy_sample(rng: np.random.Generator, size: int = 64) -> FlowSample:
    """One synthetic pair: flow = w * T for a smooth inverse-depth field w."""
    h = w = size
    channels = []
    base = _smooth_field(rng, h, w, 1.5)
    for _ in range(3):
        channels.append(0.15 + 0.7 * np.clip(base + 0.25 * _smooth_field(rng, h, w, 3.0) - 0.125, 0.0, 1.0))
    target = np.stack(channels, axis=-1).astype(np.float32)

    w_field = 0.05 + 0.25 * _smooth_field(rng, h, w, 8.0)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    norm = rng.uniform(2.0, 8.0)
    transform = norm * np.array([math.cos(angle), math.sin(angle)])
    flow_gt = np.stack([w_field * transform[0], w_field * transform[1]], axis=-1)

    xs, ys = pixel_grid(h, w)
    reference, valid = sample_bilinear(
        target, xs + flow_gt[:, :, 0], ys + flow_gt[:, :, 1]
    )

    # Degrade the flow into the kind of coarse initialization the network
    # sees at inference: heavily smoothed inverse depth plus a small bias.
    w_coarse = cv2.GaussianBlur(w_field, (0, 0), 12.0, borderType=cv2.BORDER_REFLECT)
    w_coarse += rng.normal(0.0, 0.02)
    flow_init = np.stack([w_coarse * transform[0], w_coarse * transform[1]], axis=-1)

    return FlowSample(reference.astype(np.float32), target, flow_gt, flow_init, valid)


def make_toy_dataset(
    count: int, size: int = 64, seed: int = 0
) -> list[FlowSample]:
    rng = np.random.default_rng(seed)
    return [make_toy_sample(rng, size) for _ in range(count)]


def rotate_scale_sample(sample: FlowSample, angle_deg: float, scale: float) -> FlowSample:
    """Rotate and zoom a sample; flow vectors rotate and scale with it.

    With angle 0 and scale 1 the sample is returned unchanged (bit-exact).
    """
    if angle_deg == 0.0 and scale == 1.0:
        return sample
    h, w = sample.valid.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    xs, ys = pixel_grid(h, w)
    dx, dy = xs - cx, ys - cy
    # Inverse map of "rotate by theta, zoom by scale" about the center.
    src_x = cx + (cos_t * dx + sin_t * dy) / scale
    src_y = cy + (-sin_t * dx + cos_t * dy) / scale

    ref, ok_r = sample_bilinear(sample.reference, src_x, src_y)
    tgt, ok_t = sample_bilinear(sample.target, src_x, src_y)
    gt, _ = sample_bilinear(sample.flow_gt, src_x, src_y)
    init, _ = sample_bilinear(sample.flow_init, src_x, src_y)
    old_valid, _ = sample_bilinear(sample.valid.astype(np.float64), src_x, src_y)

    def rotate_vectors(flow):
        u = scale * (cos_t * flow[:, :, 0] - sin_t * flow[:, :, 1])
        v = scale * (sin_t * flow[:, :, 0] + cos_t * flow[:, :, 1])
        return np.stack([u, v], axis=-1)

    valid = ok_r & ok_t & (old_valid > 0.999)
    return FlowSample(
        ref.astype(np.float32), tgt.astype(np.float32),
        rotate_vectors(gt), rotate_vectors(init), valid,
    )


def color_jitter(image: np.ndarray, brightness: float, contrast: float,
                 saturation: float) -> np.ndarray:
    """Additive brightness, contrast about mid-gray, saturation about luma."""
    out = (image.astype(np.float64) - 0.5) * (1.0 + contrast) + 0.5 + brightness
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (1.0 + saturation) * (out - gray)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def add_gaussian_noise(image: np.ndarray, rng: np.random.Generator,
                       sigma_scale: float) -> np.ndarray:
    # The per-image noise level is |N(0, sigma_scale)| (half-normal draw).
    sigma = abs(rng.normal(0.0, sigma_scale))
    noisy = image + rng.normal(0.0, sigma, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def augment_sample(
    sample: FlowSample, cfg: TrainingConfig, rng: np.random.Generator
) -> FlowSample:
    """Full augmentation pipeline; with cfg.augment False, the identity."""
    if not cfg.augment:
        return sample
    angle = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)
    scale = rng.uniform(*cfg.scale_range)
    out = rotate_scale_sample(sample, angle, scale)

    jitter = lambda: rng.normal(0.0, cfg.jitter_sigma, size=3)
    j_ref = jitter()
    j_tgt = jitter() if cfg.fine_tune else j_ref
    reference = color_jitter(out.reference, *j_ref)
    target = color_jitter(out.target, *j_tgt)
    reference = add_gaussian_noise(reference, rng, cfg.noise_sigma)
    target = add_gaussian_noise(target, rng, cfg.noise_sigma)
    return replace(out, reference=reference, target=target)


def _batch_tensors(samples: list[FlowSample]):
    stacks, targets, valids = [], [], []
    for s in samples:
        warped, warp_ok = _warp_target(s)
        stacks.append(normalize_stack(s.reference, warped, s.flow_init))
        targets.append((s.flow_gt - s.flow_init).transpose(2, 0, 1))
        valids.append(s.valid & warp_ok)
    x = torch.from_numpy(np.stack(stacks))
    t = torch.from_numpy(np.stack(targets).astype(np.float32))
    v = torch.from_numpy(np.stack(valids))
    return x, t, v


def _warp_target(sample: FlowSample):
    h, w = sample.valid.shape
    xs, ys = pixel_grid(h, w)
    warped, ok = sample_bilinear(
        sample.target, xs + sample.flow_init[:, :, 0], ys + sample.flow_init[:, :, 1]
    )
    return warped.astype(np.float32), ok


def _epe(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    err = torch.sqrt(((pred - target) ** 2).sum(dim=1) + 1e-12)
    mask = valid.to(err.dtype)
    return (err * mask).sum() / mask.sum().clamp_min(1.0)


def evaluate_epe(net: ResidualFlowNet, samples: list[FlowSample]) -> float:
    """Mean endpoint error of predicted residuals over raw samples."""
    total, count = 0.0, 0
    with torch.no_grad():
        for s in samples:
            x, t, v = _batch_tensors([s])
            total += float(_epe(net(x), t, v))
            count += 1
    return total / max(count, 1)


def train_toy(
    net: ResidualFlowNet, dataset: list[FlowSample], cfg: TrainingConfig
) -> TrainingResult:
    """ADAM training on the toy dataset; returns the per-iteration loss curve."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    eval_subset = dataset[: min(len(dataset), 64)]
    initial_epe = evaluate_epe(net, eval_subset)

    base_lr = cfg.fine_tune_lr if cfg.fine_tune else cfg.learning_rate
    optimizer = torch.optim.Adam(
        net.parameters(), lr=base_lr, betas=(cfg.beta1, cfg.beta2)
    )

    losses: list[float] = []
    samples_seen = 0
    for _ in range(cfg.iterations):
        epoch = samples_seen / max(len(dataset), 1)
        if not cfg.fine_tune and epoch >= cfg.lr_drop_epoch:
            for group in optimizer.param_groups:
                group["lr"] = cfg.dropped_learning_rate

        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [augment_sample(dataset[i], cfg, rng) for i in idx]
        x, t, v = _batch_tensors(batch)

        optimizer.zero_grad()
        loss = _epe(net(x), t, v)
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        samples_seen += cfg.batch_size

    final_epe = evaluate_epe(net, eval_subset)
    return TrainingResult(losses=losses, initial_epe=initial_epe, final_epe=final_epe)
