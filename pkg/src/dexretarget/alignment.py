"""Demonstration depth calibration and per-frame hand alignment.

Calibration fits one similarity transform from predicted-depth object
geometry to true-depth object geometry and applies it to every frame.
Per-frame alignment then estimates a scale factor and a small rigid
correction that register the skeleton-sampled hand cloud against the
observed cloud and depth map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    AlignmentError,
    InvalidArgumentError,
    LossUndefinedError,
    SolverStartError,
)
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    RigidTransform,
    Rotation,
    backproject_depth,
    huber,
    pseudo_huber,
    splat_depth,
    weighted_umeyama,
)
from .hand_model import HandFrame, HandTrajectory
from .pointcloud import PointCloud, build_index
from .solver import BoxProblem, SolverOptions, make_fd_gradient, minimize_box
from .synthetic import sample_hand_surface

log = logging.getLogger(__name__)

# box for the 7 alignment parameters: log-scale plus a 6-vector twist
# (rotation vector, translation) around the identity correction
LOG_SCALE_BOUNDS = (np.log(0.3), np.log(3.0))
TWIST_BOUND = 0.5


@dataclass
class AlignConfig:
    huber_delta: float = 0.01
    lambda_rend: float = 1.0
    lambda_reg: float = 0.1
    outer_iters: int = 10
    inner_iters: int = 25
    splat_footprint: int = 3
    # small step: the depth term carries pixel-scale curvature, and the
    # gradient audit compares finite differences at two separate steps
    fd_eps: float = 5e-8

    def __post_init__(self):
        for name in ("huber_delta", "lambda_rend", "lambda_reg", "fd_eps"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise InvalidArgumentError("iteration counts must be positive")


@dataclass
class HandAlignment:
    """Per-frame scale and rigid correction with residual diagnostics."""

    frame_index: int
    sigma: float
    correction: RigidTransform
    icp_residual: float
    depth_residual: float
    converged: bool

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidArgumentError("sigma must be positive")
        if self.icp_residual < 0 or self.depth_residual < 0:
            raise InvalidArgumentError("residuals must be non-negative")

    @classmethod
    def initial(cls, frame_index: int = 0) -> "HandAlignment":
        return cls(frame_index, 1.0, RigidTransform.identity(), 0.0, 0.0, False)


@dataclass
class FrameObservation:
    """One observed frame: hand cloud (with normals for alignment),
    depth map, and the hand-region pixel mask."""

    cloud: PointCloud
    depth: DepthImage
    hand_mask: np.ndarray

    def __post_init__(self):
        self.hand_mask = np.asarray(self.hand_mask, dtype=bool)
        if self.hand_mask.shape != self.depth.values.shape:
            raise InvalidArgumentError("hand mask dimensions must match the depth image")


def params_encode(sigma: float, correction: RigidTransform) -> np.ndarray:
    return np.concatenate((
        [np.log(sigma)],
        correction.rotation.as_rotvec(),
        correction.translation,
    ))


def params_decode(x: np.ndarray):
    sigma = float(np.exp(x[0]))
    correction = RigidTransform(Rotation.from_rotvec(x[1:4]), x[4:7])
    return sigma, correction


def apply_scaled_correction(points: np.ndarray, sigma: float,
                            correction: RigidTransform) -> np.ndarray:
    """The alignment action on points: sigma * (R p + t)."""
    return sigma * correction.apply(points)


def calibrate_depth_sequence(
    frames,
    obj_cloud_true: PointCloud,
    obj_cloud_pred: PointCloud,
    intrinsics: CameraIntrinsics,
    weights=None,
    with_scale: bool = True,
):
    """Fit the similarity aligning predicted object points onto true
    object points and apply it to every frame's cloud and depth map.

    ``frames`` is a sequence of (PointCloud, DepthImage) pairs; the two
    object clouds must be in pointwise correspondence. Depth maps are
    re-rendered by transforming their backprojection (footprint 1), which
    is exact for ray-preserving corrections such as pure depth scaling.
    """
    if len(obj_cloud_true) != len(obj_cloud_pred):
        raise InvalidArgumentError("object clouds must be in pointwise correspondence")
    transform = weighted_umeyama(
        obj_cloud_pred.points, obj_cloud_true.points, weights=weights, with_scale=with_scale
    )
    calibrated = []
    for cloud, depth in frames:
        new_cloud = cloud.transformed(transform)
        pts = backproject_depth(depth, intrinsics)
        new_depth = splat_depth(transform.apply(pts), intrinsics, footprint=1)
        calibrated.append((new_cloud, new_depth))
    return transform, calibrated


def icp_alignment_loss(
    hand_cloud: PointCloud,
    observed: PointCloud,
    sigma: float,
    correction: RigidTransform,
    delta: float = 0.01,
    index=None,
) -> float:
    """Mean Huber point-to-plane residual of the scaled, corrected hand
    cloud against its nearest observed neighbors."""
    if observed.normals is None:
        raise InvalidArgumentError("observed cloud must carry normals")
    if len(hand_cloud) == 0 or len(observed) == 0:
        raise LossUndefinedError("clouds must be non-empty")
    if index is None:
        index = build_index(observed)
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    _, idx = index.query(moved)
    r = np.einsum("ij,ij->i", observed.normals[idx], moved - observed.points[idx])
    return float(np.mean(huber(r, delta)))


def depth_consistency_loss(
    hand_cloud: PointCloud,
    sigma: float,
    correction: RigidTransform,
    observed_depth: DepthImage,
    hand_mask: np.ndarray,
    intrinsics: CameraIntrinsics,
    footprint: int = 3,
) -> float:
    """Mean absolute depth difference between the splatted hand cloud and
    the observed depth over the hand-region pixels valid in both."""
    hand_mask = np.asarray(hand_mask, dtype=bool)
    if hand_mask.shape != observed_depth.values.shape:
        raise InvalidArgumentError("hand mask dimensions must match the depth image")
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    rendered = splat_depth(moved, intrinsics, footprint)
    omega = rendered.valid & observed_depth.valid & hand_mask
    if not np.any(omega):
        raise LossUndefinedError("no overlapping valid hand pixels")
    return float(np.mean(np.abs(rendered.values[omega] - observed_depth.values[omega])))


_MIN_DEPTH = 0.01  # meters; reject configurations that push the hand to the camera


def smooth_depth_residuals(points: np.ndarray, depth: DepthImage, mask: np.ndarray,
                           intrinsics: CameraIntrinsics) -> np.ndarray:
    """Differentiable per-point depth discrepancies against an observed map.

    Each point samples the observed depth at its continuous projection with
    a C2 separable kernel gated by the valid-and-masked pixels, giving a
    residual that is twice continuously differentiable in the point
    coordinates and fades to zero as the projection leaves the supported
    region. Returns one residual per point (zero for unsupported points);
    +inf rows flag points closer than the minimum depth.
    """
    pts = np.asarray(points, dtype=float)
    z = pts[:, 2]
    if np.any(z < _MIN_DEPTH):
        out = np.zeros(len(pts))
        out[z < _MIN_DEPTH] = np.inf
        return out
    h, w = depth.values.shape
    support = depth.valid & np.asarray(mask, dtype=bool)
    u = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    iu = np.floor(u).astype(int)
    iv = np.floor(v).astype(int)

    # separable C2 kernel of radius 2 px: wide and smooth enough that
    # finite-difference probes see a polynomial-like landscape
    radius = 2.0
    taps = (-1, 0, 1, 2)

    def kernel(frac):
        t = np.clip((radius - np.abs(frac)) / radius, 0.0, 1.0)
        return t ** 3 * (t * (6.0 * t - 15.0) + 10.0)

    wu = [kernel(u - (iu + d)) for d in taps]
    wv = [kernel(v - (iv + d)) for d in taps]
    su = np.sum(wu, axis=0)
    sv = np.sum(wv, axis=0)
    r = np.zeros(len(pts))
    for ku, du in enumerate(taps):
        cu = iu + du
        in_u = (cu >= 0) & (cu < w)
        cu_c = np.clip(cu, 0, w - 1)
        for kv, dv in enumerate(taps):
            cv = iv + dv
            inside = in_u & (cv >= 0) & (cv < h)
            cv_c = np.clip(cv, 0, h - 1)
            gate = inside & support[cv_c, cu_c]
            wk = np.where(gate, (wu[ku] / su) * (wv[kv] / sv), 0.0)
            r += wk * (z - depth.values[cv_c, cu_c])
    return r


def _total_objective(x, hand_cloud, corr_pts, corr_nrm, depth_img, mask,
                     intrinsics, cfg):
    """Fixed-correspondence alignment objective at parameter vector x.

    Smooth surrogate penalties keep the landscape kink-free for the
    finite-difference solver; the reported residuals still use the exact
    losses.
    """
    sigma, correction = params_decode(x)
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    r = np.einsum("ij,ij->i", corr_nrm, moved - corr_pts)
    icp = float(np.mean(pseudo_huber(r, cfg.huber_delta)))
    dres = smooth_depth_residuals(moved, depth_img, mask, intrinsics)
    if not np.all(np.isfinite(dres)):
        return np.inf
    rend = float(np.mean(pseudo_huber(dres, cfg.huber_delta)))
    reg = float(x[1:] @ x[1:])
    return icp + cfg.lambda_rend * rend + cfg.lambda_reg * reg


def alignment_problem(
    hand_cloud: PointCloud,
    observation: FrameObservation,
    intrinsics: CameraIntrinsics,
    cfg: AlignConfig,
    at: Optional[np.ndarray] = None,
) -> BoxProblem:
    """Box problem over (log sigma, twist) with correspondences frozen at
    the given parameters (identity by default). Used both by the solver
    rounds and by the gradient audit."""
    if observation.cloud.normals is None:
        raise InvalidArgumentError("observed cloud must carry normals")
    obs_index = build_index(observation.cloud)
    x0 = params_encode(1.0, RigidTransform.identity()) if at is None else np.asarray(at, float)
    sigma, correction = params_decode(x0)
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    _, idx = obs_index.query(moved)
    corr_pts = observation.cloud.points[idx]
    corr_nrm = observation.cloud.normals[idx]

    def objective(x):
        return _total_objective(
            x, hand_cloud, corr_pts, corr_nrm,
            observation.depth, observation.hand_mask, intrinsics, cfg,
        )

    lo = np.concatenate(([LOG_SCALE_BOUNDS[0]], -TWIST_BOUND * np.ones(6)))
    hi = np.concatenate(([LOG_SCALE_BOUNDS[1]], TWIST_BOUND * np.ones(6)))
    return BoxProblem(lower=lo, upper=hi, objective=objective,
                      gradient=make_fd_gradient(objective, cfg.fd_eps))


def _fresh_objective(x, hand_cloud, observation, obs_index, intrinsics, cfg):
    """Alignment objective with correspondences refreshed at x."""
    sigma, correction = params_decode(x)
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    _, idx = obs_index.query(moved)
    r = np.einsum("ij,ij->i", observation.cloud.normals[idx], moved - observation.cloud.points[idx])
    icp = float(np.mean(pseudo_huber(r, cfg.huber_delta)))
    dres = smooth_depth_residuals(moved, observation.depth, observation.hand_mask, intrinsics)
    if not np.all(np.isfinite(dres)):
        return np.inf
    rend = float(np.mean(pseudo_huber(dres, cfg.huber_delta)))
    reg = float(x[1:] @ x[1:])
    return icp + cfg.lambda_rend * rend + cfg.lambda_reg * reg


def alignment_objective_value(
    hand_cloud: PointCloud,
    observation: FrameObservation,
    intrinsics: CameraIntrinsics,
    cfg: AlignConfig,
    sigma: float,
    correction: RigidTransform,
) -> float:
    """The total alignment objective (fresh correspondences) at the given
    parameters; the quantity align_hand_frame minimizes."""
    obs_index = build_index(observation.cloud)
    x = params_encode(sigma, correction)
    return _fresh_objective(x, hand_cloud, observation, obs_index, intrinsics, cfg)


# deterministic scale candidates scanned before the local solve; the
# scale/depth ambiguity of the objective creates basins the local solver
# cannot cross on its own
_SCALE_GRID = np.exp(np.linspace(LOG_SCALE_BOUNDS[0] + 0.05,
                                 LOG_SCALE_BOUNDS[1] - 0.05, 17))


def align_hand_frame(
    hand: HandFrame,
    hand_cloud: PointCloud,
    observation: FrameObservation,
    intrinsics: CameraIntrinsics,
    init: Optional[HandAlignment] = None,
    cfg: Optional[AlignConfig] = None,
) -> HandAlignment:
    """Estimate (sigma, rigid correction) registering the hand cloud to
    one observed frame.

    Minimizes a robust point-to-plane term plus a depth-consistency term
    plus a squared-twist regularizer over 7 box-constrained parameters,
    refreshing nearest-neighbor correspondences every outer round (the
    solver sees smooth surrogate penalties; reported residuals use the
    exact losses). The returned parameters never score worse, on the
    refreshed objective, than the initialization.
    """
    if cfg is None:
        cfg = AlignConfig()
    if observation.cloud.normals is None:
        raise InvalidArgumentError("observed cloud must carry normals")
    if init is None:
        init = HandAlignment.initial(hand.frame_index)

    obs_index = build_index(observation.cloud)
    x = params_encode(init.sigma, init.correction)
    lo = np.concatenate(([LOG_SCALE_BOUNDS[0]], -TWIST_BOUND * np.ones(6)))
    hi = np.concatenate(([LOG_SCALE_BOUNDS[1]], TWIST_BOUND * np.ones(6)))
    x = np.clip(x, lo, hi)

    def fresh(xv):
        return _fresh_objective(xv, hand_cloud, observation, obs_index, intrinsics, cfg)

    # the depth overlap must be non-empty at the starting parameters
    sigma0, corr0 = params_decode(x)
    moved0 = apply_scaled_correction(hand_cloud.points, sigma0, corr0)
    rendered0 = splat_depth(moved0, intrinsics, cfg.splat_footprint)
    omega0 = rendered0.valid & observation.depth.valid & observation.hand_mask
    f_best = fresh(x)
    if not np.any(omega0) or not np.isfinite(f_best):
        raise AlignmentError(
            "alignment objective undefined at initialization (no overlapping hand pixels)",
            frame_index=hand.frame_index,
            diagnostics={"sigma": init.sigma, "overlap_pixels": int(omega0.sum())},
        )
    # coarse scan over the scale axis picks the starting basin; the
    # initialization remains a candidate so the result never regresses
    for g in _SCALE_GRID:
        cand = x.copy()
        cand[0] = np.log(g)
        fc = fresh(cand)
        if np.isfinite(fc) and fc < f_best:
            f_best = fc
            x = cand
    x_best = x.copy()
    solver_converged = False
    opts = SolverOptions(max_iters=cfg.inner_iters, fd_eps=cfg.fd_eps)

    for _ in range(cfg.outer_iters):
        problem = alignment_problem(hand_cloud, observation, intrinsics, cfg, at=x)
        try:
            report = minimize_box(problem, x, opts)
        except SolverStartError as exc:
            raise AlignmentError(
                f"alignment solver could not start: {exc}",
                frame_index=hand.frame_index,
            ) from exc
        step = float(np.linalg.norm(report.x_star - x))
        x = report.x_star
        solver_converged = report.converged
        f_now = fresh(x)
        if np.isfinite(f_now) and f_now < f_best:
            f_best = f_now
            x_best = x.copy()
        if step < 1e-7:
            break

    sigma, correction = params_decode(x_best)
    moved = apply_scaled_correction(hand_cloud.points, sigma, correction)
    _, idx = obs_index.query(moved)
    r = np.einsum("ij,ij->i", observation.cloud.normals[idx],
                  moved - observation.cloud.points[idx])
    icp_rms = float(np.sqrt(np.mean(r ** 2)))
    rendered = splat_depth(moved, intrinsics, cfg.splat_footprint)
    omega = rendered.valid & observation.depth.valid & observation.hand_mask
    depth_res = float(np.mean(np.abs(rendered.values[omega] - observation.depth.values[omega]))) \
        if np.any(omega) else 0.0
    return HandAlignment(
        frame_index=hand.frame_index,
        sigma=sigma,
        correction=correction,
        icp_residual=icp_rms,
        depth_residual=depth_res,
        converged=solver_converged,
    )


def align_trajectory(
    trajectory: HandTrajectory,
    observations,
    intrinsics: CameraIntrinsics,
    cfg: Optional[AlignConfig] = None,
    n_surface_points: int = 500,
    seed: int = 0,
    warm_start: bool = True,
) -> list:
    """Align every frame, warm-starting each from the previous solution.

    With ``warm_start`` off every frame initializes from (sigma=1,
    identity) and frames become independent.
    """
    observations = list(observations)
    if len(observations) != len(trajectory):
        raise InvalidArgumentError(
            f"observation count {len(observations)} does not match frame count {len(trajectory)}"
        )
    if cfg is None:
        cfg = AlignConfig()
    results = []
    prev: Optional[HandAlignment] = None
    for frame, obs in zip(trajectory.frames, observations):
        if len(obs.cloud) == 0:
            raise AlignmentError(
                f"frame {frame.frame_index}: empty observation cloud",
                frame_index=frame.frame_index,
            )
        sampled = PointCloud(points=sample_hand_surface(
            frame.joints, n_surface_points, seed=seed + frame.frame_index,
            visible_from=(0.0, 0.0, 0.0)))
        init = None
        if warm_start and prev is not None:
            init = HandAlignment(frame.frame_index, prev.sigma, prev.correction,
                                 0.0, 0.0, False)
        try:
            result = align_hand_frame(frame, sampled, obs, intrinsics, init=init, cfg=cfg)
        except AlignmentError as exc:
            raise AlignmentError(
                f"frame {frame.frame_index}: {exc}",
                frame_index=frame.frame_index,
                diagnostics=exc.diagnostics,
            ) from exc
        results.append(result)
        prev = result
        log.debug("frame %d: sigma=%.4f icp=%.5f depth=%.5f",
                  frame.frame_index, result.sigma, result.icp_residual,
                  result.depth_residual)
    return results
