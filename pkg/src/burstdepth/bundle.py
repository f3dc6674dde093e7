"""Joint pose and sparse-structure estimation for small camera motion.

Minimizes the reprojection error of tracked features under the linearized
rotation model with Levenberg-Marquardt.  The reference frame's pose is
pinned to zero (gauge fixing); global scale remains free, so recovered
translations and points are meaningful only up to a common factor.

The normal equations have the usual arrowhead structure (poses couple to
points only through individual observations); each step eliminates the
point blocks with a Schur complement and solves the small reduced camera
system densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import CameraIntrinsics, SmallPose
from .tracking import FeatureTrack

# Points pushed behind the camera keep a finite objective: the projection
# depth is clamped here, which also pushes the optimizer forward again.
MIN_PROJECTION_DEPTH = 1e-6

DEFAULT_INITIAL_DEPTH = 100.0

_LAMBDA_INIT = 1e-3
_LAMBDA_MAX = 1e10
_LAMBDA_MIN = 1e-12


@dataclass(frozen=True)
class BundleProblem:
    """Observed pixel positions of m features across n frames.

    observations has shape (n, m, 2); frame 0 is the reference.
    """

    intrinsics: CameraIntrinsics
    observations: np.ndarray
    initial_depth: float = DEFAULT_INITIAL_DEPTH

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 3 or obs.shape[2] != 2:
            raise ValueError("observations must be (n_frames, n_points, 2)")
        if obs.shape[0] < 2:
            raise ValueError("need at least two frames")
        if obs.shape[1] < 1:
            raise ValueError("need at least one feature")
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_tracks(
        cls,
        intrinsics: CameraIntrinsics,
        tracks: list[FeatureTrack],
        initial_depth: float = DEFAULT_INITIAL_DEPTH,
    ) -> "BundleProblem":
        """Build a problem from the fully tracked features only."""
        full = [t for t in tracks if t.fully_tracked]
        if not full:
            raise ValueError("no fully tracked features")
        obs = np.stack([t.positions for t in full], axis=1)
        return cls(intrinsics, obs, initial_depth)

    @property
    def n_frames(self) -> int:
        return self.observations.shape[0]

    @property
    def n_points(self) -> int:
        return self.observations.shape[1]

    @property
    def n_params(self) -> int:
        return 6 * self.n_frames + 3 * self.n_points


@dataclass
class BundleSolution:
    poses: list[SmallPose]
    points: np.ndarray
    point_valid: np.ndarray
    final_rms_reprojection: float
    iterations: int
    converged: bool


def initialize(problem: BundleProblem) -> np.ndarray:
    """Initial parameter vector: zero poses, points on the reference rays.

    Each point is the reference observation's normalized coordinates
    scaled by the fixed initial depth, so reference-frame residuals start
    at exactly zero.
    """
    coords = problem.intrinsics.normalize(problem.observations[0])
    points = np.concatenate(
        [coords, np.ones((problem.n_points, 1))], axis=1
    ) * problem.initial_depth
    params = np.zeros(problem.n_params)
    params[6 * problem.n_frames :] = points.ravel()
    return params


def _unpack(params: np.ndarray, problem: BundleProblem):
    n, m = problem.n_frames, problem.n_points
    poses = params[: 6 * n].reshape(n, 6)
    points = params[6 * n :].reshape(m, 3)
    return poses[:, :3], poses[:, 3:], points


def _rotation_stack(r: np.ndarray) -> np.ndarray:
    n = r.shape[0]
    rot = np.zeros((n, 3, 3))
    rot[:, 0, 0] = rot[:, 1, 1] = rot[:, 2, 2] = 1.0
    rot[:, 0, 1] = -r[:, 2]
    rot[:, 0, 2] = r[:, 1]
    rot[:, 1, 0] = r[:, 2]
    rot[:, 1, 2] = -r[:, 0]
    rot[:, 2, 0] = -r[:, 1]
    rot[:, 2, 1] = r[:, 0]
    return rot


def _camera_points(params, problem):
    """Per-observation camera-frame points p = R(r_i) X_j + t_i, (n, m, 3)."""
    r, t, points = _unpack(params, problem)
    rot = _rotation_stack(r)
    return np.einsum("nab,mb->nma", rot, points) + t[:, None, :], rot, points


def _residual_grid(params: np.ndarray, problem: BundleProblem) -> np.ndarray:
    """Residuals (observed - projected), shape (n, m, 2)."""
    k = problem.intrinsics
    p, _, _ = _camera_points(params, problem)
    pz = np.maximum(p[..., 2], MIN_PROJECTION_DEPTH)
    proj = np.stack(
        [k.fx * p[..., 0] / pz + k.cx, k.fy * p[..., 1] / pz + k.cy], axis=-1
    )
    return problem.observations - proj


def residuals(params: np.ndarray, problem: BundleProblem) -> np.ndarray:
    """Flat residual vector, 2 entries per (frame, feature) observation.

    Ordering is frame-major: observation (i, j) occupies entries
    2*(i*m + j) and 2*(i*m + j) + 1.
    """
    return _residual_grid(params, problem).ravel()


def _jacobian_blocks(params: np.ndarray, problem: BundleProblem):
    """Residual derivatives: pose blocks (n, m, 2, 6), point blocks (n, m, 2, 3).

    The reference frame's pose block is identically zero (pinned gauge).
    """
    k = problem.intrinsics
    p, rot, points = _camera_points(params, problem)
    n, m = problem.n_frames, problem.n_points

    pz_raw = p[..., 2]
    pz = np.maximum(pz_raw, MIN_PROJECTION_DEPTH)
    free = (pz_raw >= MIN_PROJECTION_DEPTH).astype(np.float64)

    # d(projection)/dp, with the depth derivative disabled where clamped.
    dproj = np.zeros((n, m, 2, 3))
    dproj[..., 0, 0] = k.fx / pz
    dproj[..., 0, 2] = -k.fx * p[..., 0] / pz**2 * free
    dproj[..., 1, 1] = k.fy / pz
    dproj[..., 1, 2] = -k.fy * p[..., 1] / pz**2 * free

    # dp/dr = -[X]x (from p = X + r x X + t), shared across frames.
    dp_dr = np.zeros((m, 3, 3))
    dp_dr[:, 0, 1] = points[:, 2]
    dp_dr[:, 0, 2] = -points[:, 1]
    dp_dr[:, 1, 0] = -points[:, 2]
    dp_dr[:, 1, 2] = points[:, 0]
    dp_dr[:, 2, 0] = points[:, 1]
    dp_dr[:, 2, 1] = -points[:, 0]

    pose_jac = np.zeros((n, m, 2, 6))
    pose_jac[..., :3] = -np.einsum("nmab,mbc->nmac", dproj, dp_dr)
    pose_jac[..., 3:] = -dproj
    pose_jac[0] = 0.0

    point_jac = -np.einsum("nmab,nbc->nmac", dproj, rot)
    return pose_jac, point_jac


def analytic_jacobian(params: np.ndarray, problem: BundleProblem) -> sp.csr_matrix:
    """Sparse residual Jacobian, rows ordered like :func:`residuals`.

    Columns are [pose_0 .. pose_{n-1}, X_0 .. X_{m-1}]; the reference pose
    columns are structurally zero.
    """
    n, m = problem.n_frames, problem.n_points
    pose_jac, point_jac = _jacobian_blocks(params, problem)

    obs_rows = 2 * (np.arange(n)[:, None] * m + np.arange(m)[None, :])

    rows_p = np.broadcast_to(
        (obs_rows[1:, :, None, None] + np.array([0, 1])[None, None, :, None]),
        (n - 1, m, 2, 6),
    )
    cols_p = np.broadcast_to(
        (6 * np.arange(1, n))[:, None, None, None] + np.arange(6)[None, None, None, :],
        (n - 1, m, 2, 6),
    )
    rows_x = np.broadcast_to(
        (obs_rows[:, :, None, None] + np.array([0, 1])[None, None, :, None]),
        (n, m, 2, 3),
    )
    cols_x = np.broadcast_to(
        (6 * n + 3 * np.arange(m))[None, :, None, None] + np.arange(3)[None, None, None, :],
        (n, m, 2, 3),
    )

    rows = np.concatenate([rows_p.ravel(), rows_x.ravel()])
    cols = np.concatenate([cols_p.ravel(), cols_x.ravel()])
    data = np.concatenate([pose_jac[1:].ravel(), point_jac.ravel()])
    return sp.csr_matrix(
        (data, (rows, cols)), shape=(2 * n * m, problem.n_params)
    )


def _solve_step(pose_jac, point_jac, res, lam, n, m):
    """One damped normal-equation solve via the point Schur complement."""
    g_pose = np.einsum("nmab,nma->nb", pose_jac, res)
    g_point = np.einsum("nmab,nma->mb", point_jac, res)

    u_blocks = np.einsum("nmab,nmac->nbc", pose_jac, pose_jac)[1:]
    v_blocks = np.einsum("nmab,nmac->mbc", point_jac, point_jac)
    w_blocks = np.einsum("nmab,nmac->nmbc", pose_jac, point_jac)[1:]

    di = np.arange(6)
    u_blocks[:, di, di] *= 1.0 + lam
    dj = np.arange(3)
    v_blocks[:, dj, dj] *= 1.0 + lam

    try:
        v_inv = np.linalg.inv(v_blocks)
    except np.linalg.LinAlgError:
        return None

    y = np.einsum("nmab,mbc->nmac", w_blocks, v_inv)
    schur = -np.einsum("amij,bmkj->abik", y, w_blocks)
    ia = np.arange(n - 1)
    schur[ia, ia] += u_blocks
    schur = schur.transpose(0, 2, 1, 3).reshape(6 * (n - 1), 6 * (n - 1))

    rhs = (-g_pose[1:] + np.einsum("nmab,mb->na", y, g_point)).ravel()
    try:
        delta_pose = np.linalg.solve(schur, rhs)
    except np.linalg.LinAlgError:
        return None
    dp = delta_pose.reshape(n - 1, 6)

    back = -g_point - np.einsum("nmab,na->mb", w_blocks, dp)
    delta_point = np.einsum("mab,mb->ma", v_inv, back)

    delta = np.zeros(6 * n + 3 * m)
    delta[6 : 6 * n] = delta_pose
    delta[6 * n :] = delta_point.ravel()
    return delta


def solve_lm(
    problem: BundleProblem,
    max_iterations: int = 200,
    gradient_tol: float = 1e-10,
    relative_cost_tol: float = 1e-12,
) -> BundleSolution:
    """Levenberg-Marquardt solve of the reprojection objective.

    Accepted steps never increase the cost.  Terminates on a small
    gradient, a relative cost decrease below `relative_cost_tol`, or the
    iteration cap; a solver that runs out of iterations still returns the
    best parameters found, flagged converged=False.
    """
    n, m = problem.n_frames, problem.n_points
    params = initialize(problem)
    res = _residual_grid(params, problem)
    cost = 0.5 * float(np.sum(res**2))
    lam = _LAMBDA_INIT
    converged = False
    iterations = 0
    ever_stepped = False

    for _ in range(max_iterations):
        iterations += 1
        pose_jac, point_jac = _jacobian_blocks(params, problem)
        g_pose = np.einsum("nmab,nma->nb", pose_jac, res)
        g_point = np.einsum("nmab,nma->mb", point_jac, res)
        g_max = max(
            np.abs(g_pose[1:]).max() if n > 1 else 0.0, np.abs(g_point).max()
        )
        if g_max < gradient_tol:
            converged = True
            break

        stepped = False
        while lam <= _LAMBDA_MAX:
            delta = _solve_step(pose_jac, point_jac, res, lam, n, m)
            if delta is not None:
                trial = params + delta
                trial_res = _residual_grid(trial, problem)
                trial_cost = 0.5 * float(np.sum(trial_res**2))
                if np.isfinite(trial_cost) and trial_cost < cost:
                    rel_decrease = (cost - trial_cost) / max(cost, 1e-300)
                    params, res, cost = trial, trial_res, trial_cost
                    lam = max(lam * 0.1, _LAMBDA_MIN)
                    stepped = ever_stepped = True
                    if rel_decrease < relative_cost_tol:
                        converged = True
                    break
            lam *= 10.0
        if not stepped:
            # Damping blew up: no step decreases the cost any further, so
            # the achievable relative decrease is below tolerance.
            converged = ever_stepped
            break
        if converged:
            break

    r, t, points = _unpack(params, problem)
    poses = [SmallPose(r[i].copy(), t[i].copy()) for i in range(n)]
    rms = float(np.sqrt(np.sum(res**2) / (n * m)))
    return BundleSolution(
        poses=poses,
        points=points.copy(),
        point_valid=points[:, 2] > 0.0,
        final_rms_reprojection=rms,
        iterations=iterations,
        converged=converged,
    )
