"""Sparse-to-dense inverse depth propagation on the reference image.

Solves the anchored, color-weighted Laplacian system

    minimize  c2 * sum_seeds (w_p - w^_p)^2
            + c1 * sum_edges a_pq (w_p - w_q)^2,

with affinity a_pq = exp(-(I_p - I_q)^2 / (2 sigma_c^2)) between
neighboring pixels of the luminance guide.  The normal equations are
symmetric positive definite whenever at least one seed exists, since the
Gaussian affinities are strictly positive and keep the pixel lattice
connected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp

from .errors import DegenerateBaselineError, PropagationError
from .geometry import FlowField, InverseDepthMap, TransformVector, flow_from_inverse_depth
from .sampling import luminance

# Target relative residual of the linear solve.
_SOLVE_TOL = 1e-12
# Grids at or below this many pixels use a direct sparse factorization.
_DIRECT_SOLVE_LIMIT = 10000


@dataclass(frozen=True)
class PropagationConfig:
    smoothness_weight: float = 1.0   # c1
    data_weight: float = 10.0        # c2
    color_sigma: float = 0.2         # sigma_c, on [0, 1] luminance
    neighborhood: int = 4

    def __post_init__(self):
        if min(self.smoothness_weight, self.data_weight, self.color_sigma) <= 0:
            raise ValueError("propagation weights must be positive")
        if self.neighborhood not in (4, 8):
            raise ValueError("neighborhood must be 4- or 8-connected")


def _edge_list(height: int, width: int, neighborhood: int):
    idx = np.arange(height * width).reshape(height, width)
    pairs = [
        (idx[:, :-1].ravel(), idx[:, 1:].ravel()),
        (idx[:-1, :].ravel(), idx[1:, :].ravel()),
    ]
    if neighborhood == 8:
        pairs.append((idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()))
        pairs.append((idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()))
    left = np.concatenate([p for p, _ in pairs])
    right = np.concatenate([q for _, q in pairs])
    return left, right


def propagate(
    seeds: list[tuple[np.ndarray, float]] | np.ndarray,
    guide: np.ndarray,
    cfg: PropagationConfig = PropagationConfig(),
) -> InverseDepthMap:
    """Densify sparse inverse-depth samples over a color guide.

    `seeds` is either a list of ((x, y), w) pairs or an (N, 3) array of
    [x, y, w] rows; positions are rounded to the nearest pixel and
    multiple seeds on one pixel accumulate.  Raises PropagationError when
    no seed falls inside the image.
    """
    lum = np.asarray(luminance(guide), dtype=np.float64)
    h, w = lum.shape

    if isinstance(seeds, np.ndarray):
        seed_rows = seeds.reshape(-1, 3)
    else:
        seed_rows = np.array([[p[0], p[1], val] for p, val in seeds], dtype=np.float64)
    if seed_rows.size == 0:
        raise PropagationError("no seeds to propagate")

    px = np.rint(seed_rows[:, 0]).astype(np.int64)
    py = np.rint(seed_rows[:, 1]).astype(np.int64)
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    if not inside.any():
        raise PropagationError("no seeds inside the image")
    flat = py[inside] * w + px[inside]
    values = seed_rows[inside, 2]

    n = h * w
    seed_count = np.bincount(flat, minlength=n).astype(np.float64)
    seed_sum = np.bincount(flat, weights=values, minlength=n)

    left, right = _edge_list(h, w, cfg.neighborhood)
    diff = lum.ravel()[left] - lum.ravel()[right]
    affinity = np.exp(-(diff**2) / (2.0 * cfg.color_sigma**2))

    c1, c2 = cfg.smoothness_weight, cfg.data_weight
    # Laplacian of the affinity graph plus the seed anchors on the diagonal.
    laplacian_diag = np.bincount(left, weights=affinity, minlength=n) + np.bincount(
        right, weights=affinity, minlength=n
    )
    diag = np.arange(n)
    rows = np.concatenate([left, right, diag])
    cols = np.concatenate([right, left, diag])
    data = np.concatenate(
        [-c1 * affinity, -c1 * affinity, c1 * laplacian_diag + c2 * seed_count]
    )
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    rhs = c2 * seed_sum

    solution = _solve_spd(matrix, rhs)
    return InverseDepthMap(solution.reshape(h, w))


def _solve_spd(matrix: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    if matrix.shape[0] <= _DIRECT_SOLVE_LIMIT:
        return sp.linalg.spsolve(matrix.tocsc(), rhs)
    ml = pyamg.smoothed_aggregation_solver(matrix, symmetry="symmetric")
    x = ml.solve(rhs, tol=_SOLVE_TOL, accel="cg", maxiter=400)
    residual = np.linalg.norm(matrix @ x - rhs)
    if residual > 1e-8 * max(np.linalg.norm(rhs), 1.0):
        # AMG stalled; refine with a direct factorization of the system.
        x = sp.linalg.spsolve(matrix.tocsc(), rhs)
    return x


def initial_flow_for_frame(
    w_init: InverseDepthMap, transform: TransformVector
) -> FlowField:
    """The first frame's initial flow: propagated inverse depth through T."""
    if transform.degenerate:
        raise DegenerateBaselineError("initial frame has a degenerate baseline")
    return flow_from_inverse_depth(w_init, transform)
