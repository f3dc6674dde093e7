"""Matplotlib renderings of depth maps and evaluation reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_CMAP = "turbo"


def colorize_depth(depth: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Map a depth array to float RGB with the turbo colormap.

    Near is warm, far is cold (values are negated before mapping); invalid
    pixels render black.
    """
    if valid is None:
        valid = np.isfinite(depth)
    valid = valid & np.isfinite(depth)
    out = np.zeros(depth.shape + (3,), dtype=np.float32)
    if valid.any():
        lo, hi = np.percentile(depth[valid], [1.0, 99.0])
        span = max(hi - lo, 1e-12)
        norm = np.clip((depth - lo) / span, 0.0, 1.0)
        cmap = plt.get_cmap(_CMAP)
        colored = cmap(1.0 - norm)[..., :3].astype(np.float32)
        out[valid] = colored[valid]
    return out


def save_depth_figure(path, depth: np.ndarray, valid: np.ndarray | None = None,
                      title: str = "estimated depth") -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5), dpi=120)
    shown = np.where(valid if valid is not None else np.isfinite(depth), depth, np.nan)
    im = ax.imshow(shown, cmap=_CMAP + "_r")
    ax.set_title(title)
    ax.axis("off")
    fig.colorbar(im, ax=ax, fraction=0.046, label="depth (scene units)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_eval_report(path, estimate: np.ndarray, ground_truth: np.ndarray,
                     valid: np.ndarray, metrics: dict[str, float]) -> None:
    """Side-by-side depth comparison with an error panel."""
    error = np.where(valid, estimate - ground_truth, np.nan)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4.2), dpi=120)
    panels = [
        (np.where(valid, estimate, np.nan), "estimate", _CMAP + "_r"),
        (np.where(valid, ground_truth, np.nan), "ground truth", _CMAP + "_r"),
        (error, "signed error", "coolwarm"),
    ]
    for ax, (img, title, cmap) in zip(axes, panels):
        im = ax.imshow(img, cmap=cmap)
        ax.set_title(title)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    line = "   ".join(f"{k}={v:.4g}" for k, v in metrics.items())
    fig.suptitle(line, fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
