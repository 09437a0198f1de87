"""Absolute pose from 2D-3D correspondences: P3P inside RANSAC, then LM polish."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import MIN_DEPTH, Camera, Pose, Quaternion, skew


class PoseEstimationError(RuntimeError):
    """RANSAC could not produce a pose; ``reason`` is a short tag."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Correspondences:
    """Column-wise 2D-3D correspondences.

    Row ``i`` links query pixel ``pixels[i]`` to 3D point ``point_ids[i]``
    located at ``points[i]``, found through reference image
    ``source_images[i]``.
    """

    pixels: np.ndarray
    points: np.ndarray
    point_ids: np.ndarray
    source_images: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        n = len(self.pixels)
        if not (len(self.points) == len(self.point_ids) == len(self.source_images)
                == len(self.scores) == n):
            raise ValueError("correspondence columns differ in length")
        if not (np.all(np.isfinite(self.pixels)) and np.all(np.isfinite(self.points))):
            raise ValueError("correspondences must be finite")

    def __len__(self) -> int:
        return len(self.pixels)

    @classmethod
    def from_arrays(cls, pixels, points, point_ids=None, source_images=None, scores=None):
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(pixels)
        if point_ids is None:
            point_ids = np.arange(n)
        if source_images is None:
            source_images = np.full(n, -1)
        if scores is None:
            scores = np.ones(n)
        return cls(pixels, points, np.asarray(point_ids, dtype=np.int64),
                   np.asarray(source_images, dtype=np.int64), np.asarray(scores, dtype=np.float64))

    def subset(self, idx) -> "Correspondences":
        return Correspondences(self.pixels[idx], self.points[idx], self.point_ids[idx],
                               self.source_images[idx], self.scores[idx])


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 10_000
    reprojection_threshold: float = 12.0
    confidence: float = 0.9999
    min_inliers: int = 12
    seed: int = 0
    refine: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.reprojection_threshold > 0:
            raise ValueError("reprojection_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be >= 4")


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    inlier_indices: np.ndarray
    iterations_used: int
    mean_reprojection_error: float
    refinement_converged: bool = True

    @property
    def num_inliers(self) -> int:
        return len(self.inlier_indices)


# --------------------------------------------------------------------- P3P


def _kabsch(world: np.ndarray, cam: np.ndarray):
    """R, t minimizing ||R @ world + t - cam|| (rows are points)."""
    mw, mc = world.mean(axis=0), cam.mean(axis=0)
    H = (world - mw).T @ (cam - mc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mc - R @ mw


def _polish_distances(s, a2, b2, c2, ca, cb, cg, iters=3):
    # Newton on the three law-of-cosines equations
    s = np.array(s, dtype=np.float64)
    for _ in range(iters):
        s1, s2, s3 = s
        f = np.array([s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2,
                      s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - b2,
                      s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - c2])
        J = np.array([[0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
                      [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                      [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0]])
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.max(np.abs(step)) < 1e-15 * max(1.0, np.max(np.abs(s))):
            break
    return s


def p3p_bearings(bearings, world_points):
    """Grunert's P3P for unit bearings ``(3, 3)`` and world points ``(3, 3)``.

    Returns a list of ``(R, t)`` with ``bearing_i ∝ R @ P_i + t``.
    """
    P = np.asarray(world_points, dtype=np.float64)
    f = np.asarray(bearings, dtype=np.float64)
    scale = max(np.linalg.norm(P[1] - P[0]), np.linalg.norm(P[2] - P[0]), 1e-300)
    if np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0])) <= 1e-10 * scale * scale:
        return []

    a2 = float(np.sum((P[1] - P[2]) ** 2))
    b2 = float(np.sum((P[0] - P[2]) ** 2))
    c2 = float(np.sum((P[0] - P[1]) ** 2))
    if min(a2, b2, c2) <= 0.0:
        return []
    ca = float(f[1] @ f[2])
    cb = float(f[0] @ f[2])
    cg = float(f[0] @ f[1])

    # s2 = u*s1, s3 = v*s1; eliminating u leaves a quartic in v.
    p = (a2 - c2) / b2
    q = (a2 + c2) / b2
    A4 = (p - 1) ** 2 - 4 * c2 / b2 * ca * ca
    A3 = 4 * (p * (1 - p) * cb - (1 - q) * ca * cg + 2 * c2 / b2 * ca * ca * cb)
    A2 = 2 * (p * p - 1 + 2 * p * p * cb * cb + 2 * (b2 - c2) / b2 * ca * ca
              - 4 * q * ca * cb * cg + 2 * (b2 - a2) / b2 * cg * cg)
    A1 = 4 * (-p * (1 + p) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - q) * ca * cg)
    A0 = (1 + p) ** 2 - 4 * a2 / b2 * cg * cg
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or np.all(coeffs == 0.0):
        return []

    solutions = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-6 * (1.0 + abs(root.real)):
            continue
        v = root.real
        for _ in range(2):
            fv = np.polyval(coeffs, v)
            dfv = np.polyval(np.polyder(coeffs), v)
            if dfv == 0.0:
                break
            v -= fv / dfv
        if v <= 0.0:
            continue
        den = 2 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((p - 1) * v * v - 2 * p * cb * v + 1 + p) / den
        if u <= 0.0:
            continue
        d = 1 + v * v - 2 * v * cb
        if d <= 0.0:
            continue
        s1 = math.sqrt(b2 / d)
        s = _polish_distances((s1, u * s1, v * s1), a2, b2, c2, ca, cb, cg)
        if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
            continue
        R, t = _kabsch(P, f * s[:, None])
        if not np.all(np.isfinite(R)):
            continue
        solutions.append((R, t))

    unique = []
    for R, t in solutions:
        if not any(np.allclose(R, R2, atol=1e-9) and np.allclose(t, t2, atol=1e-9) for R2, t2 in unique):
            unique.append((R, t))
    return unique


def p3p_solve(pixels, points, camera: Camera) -> list:
    """All P3P pose candidates for three pixel/point pairs."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(3, 2)
    points = np.asarray(points, dtype=np.float64).reshape(3, 3)
    if not (np.all(np.isfinite(pixels)) and np.all(np.isfinite(points))):
        return []
    poses = []
    for R, t in p3p_bearings(camera.bearings(pixels), points):
        try:
            poses.append(Pose.from_Rt(R, t))
        except ValueError:
            continue
    return poses


# ------------------------------------------------------------ reprojection


def reprojection_errors(pose_R, pose_t, camera: Camera, points, pixels) -> np.ndarray:
    """Per-point pixel error; ``inf`` for points behind the camera."""
    Xc = points @ pose_R.T + pose_t
    z = Xc[:, 2]
    err = np.full(len(points), np.inf)
    ok = z > MIN_DEPTH
    u = camera.fx * Xc[ok, 0] / z[ok] + camera.cx
    v = camera.fy * Xc[ok, 1] / z[ok] + camera.cy
    err[ok] = np.hypot(u - pixels[ok, 0], v - pixels[ok, 1])
    return err


def reprojection_residuals(R, t, camera: Camera, points, pixels) -> np.ndarray:
    """Stacked ``(u - u_obs, v - v_obs)`` residuals, shape ``(2N,)``."""
    Xc = points @ R.T + t
    z = Xc[:, 2]
    u = camera.fx * Xc[:, 0] / z + camera.cx
    v = camera.fy * Xc[:, 1] / z + camera.cy
    return np.column_stack([u - pixels[:, 0], v - pixels[:, 1]]).ravel()


def reprojection_jacobian(R, t, camera: Camera, points) -> np.ndarray:
    """Jacobian ``(2N, 6)`` of the residuals w.r.t. ``(dw, dt)``.

    The update is ``R <- exp([dw]x) R``, ``t <- t + dt``.
    """
    RX = points @ R.T
    Xc = RX + t
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    iz = 1.0 / z
    n = len(points)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = camera.fx * iz
    dproj[:, 0, 2] = -camera.fx * x * iz * iz
    dproj[:, 1, 1] = camera.fy * iz
    dproj[:, 1, 2] = -camera.fy * y * iz * iz
    # d(exp([dw]x) RX)/d(dw) at 0 is -[RX]x
    dX_dw = np.zeros((n, 3, 3))
    dX_dw[:, 0, 1], dX_dw[:, 0, 2] = RX[:, 2], -RX[:, 1]
    dX_dw[:, 1, 0], dX_dw[:, 1, 2] = -RX[:, 2], RX[:, 0]
    dX_dw[:, 2, 0], dX_dw[:, 2, 1] = RX[:, 1], -RX[:, 0]
    J = np.zeros((n, 2, 6))
    J[:, :, :3] = dproj @ dX_dw
    J[:, :, 3:] = dproj
    return J.reshape(2 * n, 6)


def _rodrigues(w) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + math.sin(theta) / theta * K + (1 - math.cos(theta)) / theta ** 2 * K @ K


def _cost(R, t, camera, points, pixels) -> float:
    Xc = points @ R.T + t
    if np.any(Xc[:, 2] <= MIN_DEPTH):
        return math.inf
    r = reprojection_residuals(R, t, camera, points, pixels)
    return float(r @ r)


def refine_pose(initial: Pose, points, pixels, camera: Camera, max_iterations: int = 50,
                rel_tol: float = 1e-10, return_info: bool = False):
    """Levenberg-Marquardt on the summed squared reprojection error.

    Steps that do not lower the cost are rejected, so the result never has
    a higher cost than ``initial``. With ``return_info`` the per-iteration
    cost history and a convergence flag are also returned.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(points) < 4:
        raise ValueError("refinement needs at least 4 correspondences")
    R, t = initial.R, initial.t
    cost = _cost(R, t, camera, points, pixels)
    history = [cost]
    converged = False
    if not math.isfinite(cost):
        return (initial, history, False) if return_info else initial
    lam = None
    for _ in range(max_iterations):
        if cost == 0.0:
            converged = True
            break
        r = reprojection_residuals(R, t, camera, points, pixels)
        J = reprojection_jacobian(R, t, camera, points)
        H = J.T @ J
        g = J.T @ r
        if lam is None:
            lam = 1e-3 * float(np.max(np.diag(H)))
        improved = False
        for _ in range(10):
            try:
                delta = -np.linalg.solve(H + lam * np.diag(np.diag(H)), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = _rodrigues(delta[:3]) @ R
            t_new = t + delta[3:]
            new_cost = _cost(R_new, t_new, camera, points, pixels)
            if new_cost < cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        rel = (cost - new_cost) / cost
        R, t, cost = R_new, t_new, new_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if rel < rel_tol:
            converged = True
            break
    # re-orthonormalize accumulated rotation
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    pose = Pose.from_Rt(R, t)
    if _cost(pose.R, pose.t, camera, points, pixels) > history[0]:
        pose = initial
    if return_info:
        return pose, history, converged
    return pose


# ------------------------------------------------------------------ RANSAC


def ransac_iteration_bound(inlier_ratio: float, confidence: float, sample_size: int = 3) -> float:
    """Standard number of draws needed to hit one clean sample."""
    w = inlier_ratio ** sample_size
    if w <= 0.0:
        return math.inf
    if w >= 1.0:
        return 0.0
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def ransac_pnp(corr: Correspondences, camera: Camera, config: RansacConfig = RansacConfig()) -> PoseEstimate:
    """Seeded hypothesize-and-verify PnP.

    Raises :class:`PoseEstimationError` with reason ``"insufficient
    correspondences"``, ``"degenerate geometry"`` or ``"too few inliers"``.
    """
    n = len(corr)
    if n < 4:
        raise PoseEstimationError("insufficient correspondences")
    pts, pix = corr.points, corr.pixels
    bearings = camera.bearings(pix)
    thr = config.reprojection_threshold
    rng = np.random.default_rng(config.seed)

    best_count = -1
    best_Rt = None
    best_mask = None
    bound = math.inf
    it = 0
    any_model = False
    while it < config.max_iterations and it < bound:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        for R, t in p3p_bearings(bearings[sample], pts[sample]):
            any_model = True
            err = reprojection_errors(R, t, camera, pts, pix)
            mask = err <= thr
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_Rt = (R, t)
                best_mask = mask
                bound = ransac_iteration_bound(count / n, config.confidence)

    if not any_model:
        raise PoseEstimationError("degenerate geometry")
    if best_count < config.min_inliers:
        raise PoseEstimationError("too few inliers")

    R, t = best_Rt
    pose = Pose.from_Rt(R, t)
    mask = best_mask
    converged = True
    if config.refine:
        for _ in range(3):
            idx = np.flatnonzero(mask)
            pose, _, converged = refine_pose(pose, pts[idx], pix[idx], camera, return_info=True)
            new_mask = reprojection_errors(pose.R, pose.t, camera, pts, pix) <= thr
            if np.array_equal(new_mask, mask):
                break
            mask = new_mask

    err = reprojection_errors(pose.R, pose.t, camera, pts, pix)
    mask = err <= thr
    inliers = np.flatnonzero(mask)
    if len(inliers) < config.min_inliers:
        raise PoseEstimationError("too few inliers")
    return PoseEstimate(pose, inliers, it, float(err[inliers].mean()), converged)
