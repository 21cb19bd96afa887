"""Point-cloud containers, exact nearest-neighbor indexing, PCA normal
estimation, robust point-to-plane ICP, and RANSAC similarity registration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometryError,
    InvalidArgumentError,
    RegistrationError,
)
from .geometry import (
    RigidTransform,
    Rotation,
    SimilarityTransform,
    as_points,
    huber,
    huber_weights,
    weighted_umeyama,
)

DEFAULT_HUBER_DELTA = 0.01   # meters; residuals beyond ~1 cm treated as outliers
DEFAULT_MAX_CORR_DIST = 0.05  # meters; reject gross mismatches outright
DEFAULT_RANSAC_ROUNDS = 512


@dataclass
class PointCloud:
    """Points with optional unit normals and per-point weights."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = as_points(self.points)
        n = self.points.shape[0]
        if self.normals is not None:
            self.normals = as_points(self.normals)
            if self.normals.shape[0] != n:
                raise InvalidArgumentError("normals length must match points")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise InvalidArgumentError("normals must have unit norm within 1e-6")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (n,):
                raise InvalidArgumentError("weights length must match points")
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise InvalidArgumentError("weights must be finite and non-negative")

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, transform) -> "PointCloud":
        """Apply a rigid or similarity transform; normals rotate, never scale."""
        pts = transform.apply(self.points)
        nrm = None
        if self.normals is not None:
            nrm = transform.rotation.apply(self.normals)
        return PointCloud(points=pts, normals=nrm, weights=self.weights)


@dataclass(frozen=True)
class Correspondence:
    src_index: int
    dst_index: int
    distance: float

    def __post_init__(self):
        if self.src_index < 0 or self.dst_index < 0:
            raise InvalidArgumentError("correspondence indices must be non-negative")
        if self.distance < 0:
            raise InvalidArgumentError("correspondence distance must be non-negative")


@dataclass
class RegistrationReport:
    transform: SimilarityTransform
    rms_residual: float
    inlier_fraction: float
    iterations: int
    converged: bool
    # fixed-correspondence objective (before, after) per inner solve
    objective_curve: list = None

    def __post_init__(self):
        if self.rms_residual < 0:
            raise InvalidArgumentError("rms_residual must be non-negative")
        if not (0.0 <= self.inlier_fraction <= 1.0):
            raise InvalidArgumentError("inlier_fraction must lie in [0, 1]")
        if self.objective_curve is None:
            self.objective_curve = []


class SpatialIndex:
    """Exact nearest-neighbor index over a point cloud (k-d tree)."""

    def __init__(self, points: np.ndarray):
        pts = as_points(points)
        if pts.shape[0] == 0:
            raise InvalidArgumentError("cannot index an empty cloud")
        self._points = pts
        self._tree = cKDTree(pts)

    def query(self, points):
        """Nearest neighbor of each query point; returns (distances, indices)."""
        d, i = self._tree.query(np.asarray(points, dtype=float))
        return np.atleast_1d(d), np.atleast_1d(i)

    def query_k(self, points, k: int):
        d, i = self._tree.query(np.asarray(points, dtype=float), k=k)
        return d, i

    def __len__(self) -> int:
        return self._points.shape[0]


def build_index(cloud: PointCloud) -> SpatialIndex:
    if len(cloud) == 0:
        raise InvalidArgumentError("cannot index an empty cloud")
    return SpatialIndex(cloud.points)


def estimate_normals(cloud: PointCloud, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from PCA over the k nearest neighbors.

    Normals are oriented toward ``viewpoint`` (default the origin, i.e.
    the camera center for camera-frame clouds).
    """
    n = len(cloud)
    if k < 3:
        raise InvalidArgumentError(f"k must be at least 3, got {k}")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds cloud size {n}")
    vp = np.asarray(viewpoint, dtype=float)
    index = build_index(cloud)
    _, idx = index.query_k(cloud.points, k)
    idx = np.atleast_2d(idx)
    nbrs = cloud.points[idx]                           # (n, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]                            # smallest eigenvalue
    flip = np.einsum("ij,ij->i", normals, vp[None, :] - cloud.points) < 0.0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(points=cloud.points.copy(), normals=normals, weights=cloud.weights)


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        return np.eye(3) + k
    a = w / theta
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _p2pl_objective(pts, q, n, delta):
    r = np.einsum("ij,ij->i", n, pts - q)
    return float(np.mean(huber(r, delta))), r


def icp_point_to_plane(
    src: PointCloud,
    dst: PointCloud,
    init: Optional[RigidTransform] = None,
    delta: float = DEFAULT_HUBER_DELTA,
    max_iters: int = 50,
    max_corr_dist: float = DEFAULT_MAX_CORR_DIST,
) -> RegistrationReport:
    """Robust point-to-plane ICP of src onto dst (dst must carry normals).

    Minimizes mean huber(n . (T x - y)) with correspondences refreshed per
    iteration and rejected beyond ``max_corr_dist``. Each linearized step is
    damped so the fixed-correspondence objective never increases.
    """
    if dst.normals is None:
        raise InvalidArgumentError("destination cloud must carry normals")
    if max_iters < 1:
        raise InvalidArgumentError("max_iters must be at least 1")
    if init is None:
        init = RigidTransform.identity()

    tree = cKDTree(dst.points)
    rot = init.rotation.as_matrix()
    trans = init.translation.copy()
    n_src = len(src)
    converged = False
    prev_obj = None
    rms = 0.0
    inlier_fraction = 0.0
    curve = []
    it = 0

    for it in range(1, max_iters + 1):
        moved = src.points @ rot.T + trans
        dists, idx = tree.query(moved)
        keep = dists <= max_corr_dist
        n_keep = int(keep.sum())
        if n_keep == 0:
            report = RegistrationReport(
                transform=SimilarityTransform(1.0, Rotation.from_matrix(rot), trans),
                rms_residual=float(np.sqrt(np.mean(dists ** 2))),
                inlier_fraction=0.0,
                iterations=it,
                converged=False,
                objective_curve=curve,
            )
            raise RegistrationError(
                f"no correspondences within {max_corr_dist} m at iteration {it}", report
            )
        p = moved[keep]
        q = dst.points[idx[keep]]
        nrm = dst.normals[idx[keep]]
        inlier_fraction = n_keep / n_src

        f0, r = _p2pl_objective(p, q, nrm, delta)
        w = huber_weights(r, delta)
        jac = np.hstack([np.cross(p, nrm), nrm])        # (m, 6)
        wj = jac * w[:, None]
        a = jac.T @ wj + 1e-12 * np.eye(6)
        b = -(wj.T @ r)
        xi = np.linalg.solve(a, b)

        # damp the Gauss-Newton step so the fixed-correspondence objective
        # is non-increasing
        alpha = 1.0
        best = None
        for _ in range(30):
            dr = _rodrigues(alpha * xi[:3])
            r_new = dr @ rot
            t_new = dr @ trans + alpha * xi[3:]
            moved_fixed = src.points[keep] @ r_new.T + t_new
            f_new, _ = _p2pl_objective(moved_fixed, q, nrm, delta)
            if f_new <= f0 + 1e-15:
                best = (r_new, t_new, f_new, alpha)
                break
            alpha *= 0.5
        if best is None:
            curve.append((f0, f0))
            converged = True
            rms = float(np.sqrt(np.mean(r ** 2)))
            break
        rot, trans, f_after, alpha = best
        curve.append((f0, f_after))
        rms = float(np.sqrt(np.mean(r ** 2)))

        step = float(np.linalg.norm(alpha * xi))
        if step < 1e-7 or (prev_obj is not None and abs(prev_obj - f_after) < 1e-9):
            converged = True
            break
        prev_obj = f_after

    # final residual stats with fresh correspondences
    moved = src.points @ rot.T + trans
    dists, idx = tree.query(moved)
    keep = dists <= max_corr_dist
    if np.any(keep):
        r = np.einsum("ij,ij->i", dst.normals[idx[keep]], moved[keep] - dst.points[idx[keep]])
        rms = float(np.sqrt(np.mean(r ** 2)))
        inlier_fraction = float(keep.mean())

    return RegistrationReport(
        transform=SimilarityTransform(1.0, Rotation.from_matrix(rot), trans),
        rms_residual=rms,
        inlier_fraction=inlier_fraction,
        iterations=it,
        converged=converged,
        objective_curve=curve,
    )


def ransac_similarity(
    src: PointCloud,
    dst: PointCloud,
    correspondences,
    inlier_thresh: float,
    max_rounds: int = DEFAULT_RANSAC_ROUNDS,
    seed: int = 0,
) -> RegistrationReport:
    """Similarity registration from putative correspondences via RANSAC.

    Samples 3 correspondences per round, fits a scaled Umeyama model,
    scores by inlier count under ``inlier_thresh``, and refits on the best
    inlier set. Deterministic for a fixed seed.
    """
    corr = list(correspondences)
    if len(corr) < 3:
        raise InvalidArgumentError("at least 3 correspondences required")
    if inlier_thresh <= 0:
        raise InvalidArgumentError("inlier_thresh must be positive")
    src_idx = np.array([c.src_index for c in corr])
    dst_idx = np.array([c.dst_index for c in corr])
    if src_idx.max() >= len(src) or dst_idx.max() >= len(dst):
        raise InvalidArgumentError("correspondence index out of range")
    s_pts = src.points[src_idx]
    d_pts = dst.points[dst_idx]
    n_corr = len(corr)

    rng = np.random.default_rng(seed)
    best_count = 0
    best_rms = np.inf
    best_mask = None
    for _ in range(max_rounds):
        sample = rng.choice(n_corr, size=3, replace=False)
        try:
            model = weighted_umeyama(s_pts[sample], d_pts[sample], with_scale=True)
        except DegenerateGeometryError:
            continue
        err = np.linalg.norm(model.apply(s_pts) - d_pts, axis=1)
        mask = err < inlier_thresh
        count = int(mask.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean(err[mask] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_mask = count, rms, mask

    if best_mask is None or best_count < 3:
        report = RegistrationReport(
            transform=SimilarityTransform.identity(),
            rms_residual=best_rms if np.isfinite(best_rms) else 0.0,
            inlier_fraction=best_count / n_corr,
            iterations=max_rounds,
            converged=False,
        )
        raise RegistrationError(
            f"best inlier count {best_count} below minimum of 3", report
        )

    refined = weighted_umeyama(s_pts[best_mask], d_pts[best_mask], with_scale=True)
    err = np.linalg.norm(refined.apply(s_pts) - d_pts, axis=1)
    mask = err < inlier_thresh
    if int(mask.sum()) < 3:
        mask = best_mask
    rms = float(np.sqrt(np.mean(err[mask] ** 2)))
    return RegistrationReport(
        transform=refined,
        rms_residual=rms,
        inlier_fraction=float(mask.mean()),
        iterations=max_rounds,
        converged=True,
    )
