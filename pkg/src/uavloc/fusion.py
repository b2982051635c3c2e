"""Joint pose estimation: world-from-VO alignment and the fused local bundle adjustment.

Camera poses are stored as ``vo_from_camera`` (rotation R, centre C), so a
point M projects through ``X_c = R^T (M - C)``. Pose increments act as
``R <- R exp([dtheta]x)`` and ``C <- C + dc`` with parameter order
``(dtheta, dc)``.

The LBA cost is

    f = 1/2 sum ||z - pi(K X_c)||^2 + sum w_G ||q - (s R_a p + t_a)||^2

where ``p`` is the camera centre of a fixed frame expressed through its
reference keyframe. The second sum carries no 1/2, so inside the solver its
residuals are scaled by sqrt(2 w_G).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uavloc.errors import AlignmentFailed, InvalidArgument, NotFound
from uavloc.geometry import Pose6, rotation_angle, skew, so3_exp
from uavloc.io import append_jsonl

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# similarity alignment


@dataclass(frozen=True)
class Sim3:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.R, float).reshape(3, 3)
        t = np.asarray(self.t, float).reshape(3)
        if not self.s > 0:
            raise InvalidArgument("scale must be positive")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", float(self.s))

    def apply(self, p):
        return self.s * np.asarray(p, float) @ self.R.T + self.t

    def transform_pose(self, pose: Pose6) -> Pose6:
        """Rotation composed, translation mapped; the scale only touches translation."""
        return Pose6.from_rt(self.R @ pose.R, self.apply(pose.t), "world_from_camera")

    def difference(self, other: "Sim3"):
        """(rotation angle, translation distance, |scale difference|) between two transforms."""
        return (
            rotation_angle(self.R.T @ other.R),
            float(np.linalg.norm(self.t - other.t)),
            abs(self.s - other.s),
        )

    def to_dict(self):
        return {"R": self.R.tolist(), "t": self.t.tolist(), "s": self.s}


def align_trajectories(q, p, with_scale=True, weights=None):
    """Closed-form (R, t, s) minimising sum w_i ||q_i - (s R p_i + t)||^2.

    Centroids are removed, R comes from the SVD of the cross-covariance with
    reflection correction, and s from the singular values. Without weights this
    is the usual unweighted fit. Raises AlignmentFailed for fewer than three
    pairs or a covariance of rank < 2.
    """
    q = np.asarray(q, float).reshape(-1, 3)
    p = np.asarray(p, float).reshape(-1, 3)
    if len(q) != len(p):
        raise InvalidArgument("q and p must be index-aligned")
    w = np.ones(len(p)) if weights is None else np.asarray(weights, float).reshape(-1)
    if len(w) != len(p) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidArgument("weights must be finite, non-negative and one per pair")
    if np.count_nonzero(w > 0) < 3:
        raise AlignmentFailed(f"need >= 3 weighted pairs, got {np.count_nonzero(w > 0)}")
    w = w / w.sum()
    mq = w @ q
    mp = w @ p
    Q = q - mq
    P = p - mp
    S = (Q * w[:, None]).T @ P
    U, D, Vt = np.linalg.svd(S)
    if not D[0] > 0 or D[1] <= 1e-12 * D[0]:
        raise AlignmentFailed("degenerate configuration (rank < 2)")
    E = np.ones(3)
    E[2] = np.sign(np.linalg.det(U) * np.linalg.det(Vt)) or 1.0
    R = (U * E) @ Vt
    if with_scale:
        var_p = float(w @ np.sum(P * P, axis=1))
        s = float(D @ E) / var_p
    else:
        s = 1.0
    t = mq - s * R @ mp
    return R, t, s


def fit_scale_translation(q, p, R, with_scale=True, weights=None):
    """(t, s) minimising sum w_i ||q_i - (s R p_i + t)||^2 for a given rotation R."""
    q = np.asarray(q, float).reshape(-1, 3)
    p = np.asarray(p, float).reshape(-1, 3)
    w = np.ones(len(p)) if weights is None else np.asarray(weights, float).reshape(-1)
    if len(p) == 0 or w.sum() <= 0:
        raise AlignmentFailed("no weighted pairs")
    w = w / w.sum()
    mq, mp = w @ q, w @ p
    Pr = (p - mp) @ R.T
    var_p = float(w @ np.sum(Pr * Pr, axis=1))
    s = 1.0
    if with_scale:
        if var_p <= 1e-12:
            raise AlignmentFailed("pairs coincide, scale undetermined")
        s = float(w @ np.sum((q - mq) * Pr, axis=1)) / var_p
    return mq - s * R @ mp, s


def lateral_spread(p):
    """Second principal standard deviation of a point set (metres)."""
    P = np.asarray(p, float).reshape(-1, 3)
    if len(P) < 3:
        return 0.0
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    return float(sv[1] / np.sqrt(len(P)))


# ---------------------------------------------------------------------------
# residuals and Jacobians


def reprojection_residual(T: Pose6, M, z, camera):
    """``z - pi(K (R_T M + t_T))`` for an extrinsic ``T`` (camera from world).

    Returns ``(residual, valid)``; non-positive depth gives ``valid = False`` and
    a NaN residual.
    """
    Xc = T.R @ np.asarray(M, float) + T.t
    if Xc[2] <= 0:
        return np.full(2, np.nan), False
    uv = (camera.K @ Xc)[:2] / Xc[2]
    return np.asarray(z, float) - uv, True


def _project(K, Xc):
    Z = Xc[:, 2]
    u = K[0, 0] * Xc[:, 0] / Z + K[0, 2]
    v = K[1, 1] * Xc[:, 1] / Z + K[1, 2]
    return np.column_stack([u, v])


def _proj_jacobian(K, Xc):
    X, Y, Z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    fx, fy = K[0, 0], K[1, 1]
    P = np.zeros((len(Xc), 2, 3))
    P[:, 0, 0] = fx / Z
    P[:, 0, 2] = -fx * X / Z**2
    P[:, 1, 1] = fy / Z
    P[:, 1, 2] = -fy * Y / Z**2
    return P


def _skew_batch(v):
    S = np.zeros((len(v), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -v[:, 2], v[:, 1]
    S[:, 1, 0], S[:, 1, 2] = v[:, 2], -v[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -v[:, 1], v[:, 0]
    return S


@dataclass
class LBAProblem:
    """Flat arrays describing one window; poses are ``vo_from_camera``."""

    K: np.ndarray
    cam_R: np.ndarray  # (C, 3, 3)
    cam_C: np.ndarray  # (C, 3)
    cam_fixed: np.ndarray  # (C,) bool
    points: np.ndarray  # (P, 3)
    obs_cam: np.ndarray  # (O,)
    obs_pt: np.ndarray  # (O,)
    obs_z: np.ndarray  # (O, 2)
    glob_cam: np.ndarray = field(default_factory=lambda: np.zeros(0, int))  # (G,)
    glob_c_rel: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    glob_q: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    glob_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sim3: Sim3 = field(default_factory=Sim3)
    optimize_points: bool = True

    def copy(self):
        return LBAProblem(
            self.K, self.cam_R.copy(), self.cam_C.copy(), self.cam_fixed.copy(), self.points.copy(),
            self.obs_cam, self.obs_pt, self.obs_z, self.glob_cam, self.glob_c_rel, self.glob_q,
            self.glob_w, self.sim3, self.optimize_points,
        )


def camera_points(prob: LBAProblem):
    R = prob.cam_R[prob.obs_cam]
    d = prob.points[prob.obs_pt] - prob.cam_C[prob.obs_cam]
    return np.einsum("nji,nj->ni", R, d)


def residuals(prob: LBAProblem):
    """(reprojection residuals (O, 2), valid mask (O,), global residuals (G, 3))."""
    Xc = camera_points(prob)
    valid = Xc[:, 2] > 1e-9
    r = np.full((len(Xc), 2), np.nan)
    r[valid] = prob.obs_z[valid] - _project(prob.K, Xc[valid])
    eg = global_residuals(prob)
    return r, valid, eg


def global_residuals(prob: LBAProblem):
    if len(prob.glob_cam) == 0:
        return np.zeros((0, 3))
    R = prob.cam_R[prob.glob_cam]
    p = prob.cam_C[prob.glob_cam] + np.einsum("nij,nj->ni", R, prob.glob_c_rel)
    return prob.glob_q - prob.sim3.apply(p)


def cost(prob: LBAProblem, mask=None):
    r, valid, eg = residuals(prob)
    m = valid if mask is None else mask
    if mask is not None and np.any(mask & ~valid):
        return np.inf
    return 0.5 * float(np.sum(r[m] ** 2)) + float(np.sum(prob.glob_w * np.sum(eg**2, axis=1)))


def jacobians(prob: LBAProblem):
    """Analytic Jacobians of the raw residuals.

    Returns ``(J_cam (O, 2, 6), J_pt (O, 2, 3), JG_cam (G, 3, 6))`` for the
    reprojection residual ``z - pi`` and the global residual
    ``q - (s R_a p + t_a)``.
    """
    R = prob.cam_R[prob.obs_cam]
    Xc = camera_points(prob)
    P = _proj_jacobian(prob.K, Xc)
    Rt = np.transpose(R, (0, 2, 1))
    J_cam = np.empty((len(Xc), 2, 6))
    J_cam[:, :, :3] = -P @ _skew_batch(Xc)
    J_cam[:, :, 3:] = P @ Rt
    J_pt = -P @ Rt
    G = len(prob.glob_cam)
    JG = np.empty((G, 3, 6))
    if G:
        sRa = prob.sim3.s * prob.sim3.R
        Rg = prob.cam_R[prob.glob_cam]
        JG[:, :, :3] = sRa[None] @ Rg @ _skew_batch(prob.glob_c_rel)
        JG[:, :, 3:] = -sRa[None]
    return J_cam, J_pt, JG


def apply_increment(prob: LBAProblem, d_cam, d_pt):
    """Return a copy with pose increments (F, 6) on free cameras and point increments."""
    out = prob.copy()
    free = np.nonzero(~prob.cam_fixed)[0]
    for k, c in enumerate(free):
        out.cam_R[c] = prob.cam_R[c] @ so3_exp(d_cam[k, :3])
        out.cam_C[c] = prob.cam_C[c] + d_cam[k, 3:]
    if d_pt is not None:
        out.points = prob.points + d_pt
    return out


# ---------------------------------------------------------------------------
# Levenberg-Marquardt with Schur elimination of the points


@dataclass(frozen=True)
class LMParams:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iterations: int = 20
    rel_tolerance: float = 1e-8
    max_solve_failures: int = 5


@dataclass
class LMReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    lambdas: list = field(default_factory=list)
    accepted_costs: list = field(default_factory=list)
    accepted: int = 0
    status: str = ""
    seconds: float = 0.0

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "lambdas": self.lambdas,
            "accepted_costs": self.accepted_costs,
            "accepted": self.accepted,
            "status": self.status,
            "seconds": self.seconds,
        }


def _normal_equations(prob: LBAProblem, mask):
    r, _, eg = residuals(prob)
    J_cam, J_pt, JG = jacobians(prob)
    free = ~prob.cam_fixed
    fidx = -np.ones(len(prob.cam_fixed), int)
    fidx[free] = np.arange(int(free.sum()))
    nf = int(free.sum())
    npt = len(prob.points)

    o = mask & free[prob.obs_cam]
    k = fidx[prob.obs_cam]
    U = np.zeros((nf, 6, 6))
    gc = np.zeros((nf, 6))
    np.add.at(U, k[o], np.einsum("nai,naj->nij", J_cam[o], J_cam[o]))
    np.add.at(gc, k[o], np.einsum("nai,na->ni", J_cam[o], r[o]))
    if len(prob.glob_cam):
        sw = np.sqrt(2.0 * prob.glob_w)
        JGs = JG * sw[:, None, None]
        egs = eg * sw[:, None]
        g_ok = free[prob.glob_cam]
        kg = fidx[prob.glob_cam]
        np.add.at(U, kg[g_ok], np.einsum("nai,naj->nij", JGs[g_ok], JGs[g_ok]))
        np.add.at(gc, kg[g_ok], np.einsum("nai,na->ni", JGs[g_ok], egs[g_ok]))

    V = np.zeros((npt, 3, 3))
    gp = np.zeros((npt, 3))
    W = np.zeros((npt, 3, nf, 6))
    if prob.optimize_points:
        m = mask
        np.add.at(V, prob.obs_pt[m], np.einsum("nai,naj->nij", J_pt[m], J_pt[m]))
        np.add.at(gp, prob.obs_pt[m], np.einsum("nai,na->ni", J_pt[m], r[m]))
        np.add.at(W, (prob.obs_pt[o], slice(None), k[o]), np.einsum("nai,naj->nij", J_pt[o], J_cam[o]))
    return U, gc, V, gp, W


def _solve_damped(U, gc, V, gp, W, lam, optimize_points):
    nf = U.shape[0]
    Ud = U.reshape(nf, 6, 6).copy()
    idx = np.arange(6)
    Ud[:, idx, idx] += lam * np.maximum(Ud[:, idx, idx], 1e-9)
    Ufull = np.zeros((6 * nf, 6 * nf))
    for i in range(nf):
        Ufull[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] = Ud[i]
    gcf = gc.reshape(-1)
    if not optimize_points or V.shape[0] == 0:
        dc = np.linalg.solve(Ufull, -gcf) if nf else np.zeros(0)
        return dc.reshape(nf, 6), None
    Vd = V.copy()
    j = np.arange(3)
    Vd[:, j, j] += lam * np.maximum(Vd[:, j, j], 1e-9) + 1e-12
    Vinv = np.linalg.inv(Vd)
    Wf = W.reshape(len(V), 3, 6 * nf)
    if nf:
        WtVinv = np.einsum("pai,pab->pib", Wf, Vinv)  # (P, 6F, 3)
        S = Ufull - np.einsum("pib,pbj->ij", WtVinv, Wf)
        rhs = -gcf + np.einsum("pib,pb->i", WtVinv, gp)
        dc = np.linalg.solve(S, rhs)
    else:
        dc = np.zeros(0)
    dp = -np.einsum("pab,pb->pa", Vinv, gp + (Wf @ dc if nf else 0.0))
    if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(dp))):
        raise np.linalg.LinAlgError("non-finite step")
    return dc.reshape(nf, 6), dp


def levenberg_marquardt(prob: LBAProblem, params: LMParams = LMParams()):
    """Minimise the fused cost; returns (optimised problem, LMReport).

    Damping multiplies the diagonal (Marquardt scaling). Rejected steps raise
    lambda; accepted ones lower it. Observations with non-positive depth at the
    linearisation point are dropped for that iteration. After
    ``max_solve_failures`` consecutive singular solves the input is returned
    unchanged.
    """
    t0 = time.perf_counter()
    rep = LMReport()
    lam = params.lambda0
    _, valid, _ = residuals(prob)
    cur = cost(prob, valid)
    rep.initial_cost = cur
    rep.accepted_costs.append(cur)
    best = prob
    failures = 0
    for it in range(params.max_iterations):
        rep.iterations = it + 1
        rep.lambdas.append(lam)
        if cur == 0.0:
            rep.status = "zero cost"
            break
        _, valid, _ = residuals(best)
        try:
            U, gc, V, gp, W = _normal_equations(best, valid)
            dc, dp = _solve_damped(U, gc, V, gp, W, lam, best.optimize_points)
        except np.linalg.LinAlgError:
            failures += 1
            lam *= params.lambda_up
            if failures >= params.max_solve_failures:
                rep.status = "aborted: singular normal equations"
                rep.final_cost = rep.initial_cost
                rep.seconds = time.perf_counter() - t0
                return prob, rep
            continue
        failures = 0
        trial = apply_increment(best, dc, dp)
        new = cost(trial, valid)
        if new < cur:
            rel = (cur - new) / max(cur, 1e-300)
            best, cur = trial, new
            rep.accepted += 1
            rep.accepted_costs.append(cur)
            lam /= params.lambda_down
            if rel < params.rel_tolerance:
                rep.status = "converged"
                break
        else:
            lam *= params.lambda_up
    else:
        rep.status = "max iterations"
    rep.final_cost = cur
    rep.seconds = time.perf_counter() - t0
    return best, rep


# ---------------------------------------------------------------------------
# fusion state


@dataclass
class FixPair:
    frame_id: int
    kf_id: int
    c_rel: np.ndarray  # paired VO point, in its reference keyframe frame
    q: np.ndarray  # absolute fix, world frame
    weight: float  # w_G used by the fusion
    confidence: float  # adaptive confidence from the matcher


class FusionState:
    """Paired fix/keyframe trajectories, the world-from-VO transform and LBA bookkeeping."""

    def __init__(self, vo=None, fix_interval_k=10, with_scale=True, history_cap=0,
                 min_spread=1.0, weighted_alignment=True, poses_only=False, lm_params=LMParams(),
                 pairing="axis", scale_from_fixes=True, local_history=3, local_extent=15.0):
        if fix_interval_k < 1:
            raise InvalidArgument("fix_interval_k must be >= 1")
        self.vo = vo
        self.fix_interval_k = int(fix_interval_k)
        self.with_scale = bool(with_scale)
        self.history_cap = int(history_cap)
        self.min_spread = float(min_spread)
        self.weighted_alignment = bool(weighted_alignment)
        self.poses_only = bool(poses_only)
        self.lm_params = lm_params
        if pairing not in ("axis", "centre"):
            raise InvalidArgument(f"unknown pairing {pairing!r}")
        self.pairing = pairing
        self.scale_from_fixes = bool(scale_from_fixes)
        self.local_history = int(local_history)
        self.local_extent = float(local_extent)
        self.pairs: list = []
        self.world_from_vo: Optional[Sim3] = None
        self.lba_window: list = []
        self.lba_reports: list = []
        self.diagnostics_path = None

    # the two index-aligned trajectories
    def _recent(self):
        return self.pairs[-self.history_cap :] if self.history_cap > 0 else self.pairs

    def p_of(self, pair: FixPair):
        kf = self.vo.keyframes[pair.kf_id]
        return kf.pose_vo.t + kf.pose_vo.R @ pair.c_rel

    @property
    def q_list(self):
        return np.array([pr.q for pr in self._recent()]).reshape(-1, 3)

    @property
    def p_list(self):
        return np.array([self.p_of(pr) for pr in self._recent()]).reshape(-1, 3)

    @property
    def weights(self):
        return np.array([pr.weight for pr in self._recent()])

    @property
    def ready(self):
        """True once a transform exists and the paired positions are well spread."""
        return self.world_from_vo is not None and lateral_spread(self.p_list) >= self.min_spread

    def add_fix(self, fix, weight=None):
        """Pair an absolute fix with the VO position of the same frame."""
        if self.vo is None or fix.frame_id not in self.vo.frame_poses:
            raise NotFound(f"no VO pose for frame {fix.frame_id}")
        kf_id, rel = self.vo.frame_poses[fix.frame_id]
        w = fix.confidence if weight is None else float(weight)
        if not 0.0 <= w <= 1.0:
            raise InvalidArgument("fix weight must lie in [0, 1]")
        p_rel = rel.t.copy()
        if self.pairing == "axis" and getattr(self.vo, "plane", None) is not None:
            p_rel = rel.t + rel.R @ axis_point_offset(self.vo.vo_pose(fix.frame_id), self.vo.plane)
        pr = FixPair(fix.frame_id, kf_id, p_rel, np.asarray(fix.position_world, float).copy(),
                     w, fix.confidence)
        self.pairs.append(pr)
        self.realign()
        return pr

    def realign(self):
        """Re-estimate world_from_vo; on failure the previous transform is kept."""
        if len(self.pairs) < 3:
            return False
        w = self.weights if self.weighted_alignment else None
        q, p = self.q_list, self.p_list
        try:
            R, t, s = align_trajectories(q, p, self.with_scale, w)
            n = self.local_history
            if n > 0:
                # grow the window until it spans enough ground to fix the scale
                while n < len(q) and np.linalg.norm(np.ptp(q[-n:], axis=0)) < self.local_extent:
                    n += 1
            if 0 < n < len(q):
                # rotation from the long history, scale and offset from the newest fixes
                t2, s2 = fit_scale_translation(q[-n:], p[-n:], R, self.with_scale,
                                               None if w is None else w[-n:])
                if s2 > 0:
                    t, s = t2, s2
        except AlignmentFailed:
            return False
        self.world_from_vo = Sim3(R, t, s)
        return True


def axis_point_offset(pose: Pose6, plane):
    """Camera-frame offset from the camera centre to the point an absolute fix measures.

    A fix locates the ground point under the optical axis and takes its height
    from the altimeter, so its VO counterpart is that ground point lifted back
    by the camera height along the plane normal. For a nadir camera the offset
    is zero.
    """
    n, c = plane
    n = np.asarray(n, float)
    C, R = pose.t, pose.R
    h = c - n @ C
    if h < 0:
        n, c, h = -n, -c, -h
    a = R[:, 2]
    na = n @ a
    if na <= 1e-6:
        return np.zeros(3)
    off = (h / na) * a - h * n
    return R.T @ off


def world_pose_of(frame_id, state: FusionState) -> Pose6:
    """World pose of a frame: the VO pose pushed through world_from_vo."""
    if state.vo is None or frame_id not in state.vo.frame_poses:
        raise NotFound(f"no VO pose for frame {frame_id}")
    if state.world_from_vo is None:
        raise AlignmentFailed("world_from_vo not estimated yet")
    return state.world_from_vo.transform_pose(state.vo.vo_pose(frame_id))


def build_window_problem(vo, state: Optional[FusionState], kf_ids=None, poses_only=False):
    """Collect window keyframes, their points, fixed anchor keyframes and global terms."""
    kf_ids = vo.window() if kf_ids is None else list(kf_ids)
    window = set(kf_ids)
    pids = sorted({
        int(pid)
        for k in kf_ids
        for pid in vo.keyframes[k].point_ids
        if int(pid) in vo.points and vo.points[int(pid)].observation_count >= 2
    })
    anchors = sorted({k for pid in pids for k in vo.points[pid].observations if k not in window})
    n_glob = 0
    if state is not None and state.world_from_vo is not None and state.scale_from_fixes:
        n_glob = len({pr.frame_id for pr in state._recent() if pr.kf_id in window and pr.weight > 0})
    if n_glob >= 2:
        # a single fixed camera leaves the monocular scale free for the fixes to set
        anchors = anchors[-1:]
        cams = anchors + sorted(window)
        fixed = np.zeros(len(cams), bool)
        fixed[0] = True
    else:
        # two fixed cameras pin the monocular similarity gauge
        cams = anchors + sorted(window)
        fixed = np.array([c in anchors for c in cams], bool)
        for i in range(len(cams)):
            if fixed.sum() >= 2:
                break
            fixed[i] = True
    cidx = {c: i for i, c in enumerate(cams)}
    pidx = {p: i for i, p in enumerate(pids)}
    oc, op, oz = [], [], []
    for pid in pids:
        for k, px in vo.points[pid].observations.items():
            if k in cidx:
                oc.append(cidx[k])
                op.append(pidx[pid])
                oz.append(px)
    prob = LBAProblem(
        vo.K,
        np.array([vo.keyframes[c].pose_vo.R for c in cams]).reshape(-1, 3, 3),
        np.array([vo.keyframes[c].pose_vo.t for c in cams]).reshape(-1, 3),
        fixed,
        np.array([vo.points[p].position_vo for p in pids]).reshape(-1, 3),
        np.array(oc, int),
        np.array(op, int),
        np.array(oz, float).reshape(-1, 2),
        optimize_points=not poses_only,
    )
    if state is not None and state.world_from_vo is not None:
        g = [pr for pr in state._recent() if pr.kf_id in cidx and not fixed[cidx[pr.kf_id]]]
        if g:
            prob.glob_cam = np.array([cidx[pr.kf_id] for pr in g], int)
            prob.glob_c_rel = np.array([pr.c_rel for pr in g])
            prob.glob_q = np.array([pr.q for pr in g])
            prob.glob_w = np.array([pr.weight for pr in g])
            prob.sim3 = state.world_from_vo
    return prob, cams, pids


def fused_lba(vo, state: FusionState, kf_ids=None, log_path=None):
    """One fused local bundle adjustment over the VO window.

    Refreshes world_from_vo, optimises free keyframe poses and points against
    reprojection and confidence-weighted global residuals, writes the result
    back into the VO map and refreshes world_from_vo again.
    """
    kf_ids = vo.window() if kf_ids is None else list(kf_ids)
    if len(kf_ids) < 2:
        raise InvalidArgument("LBA needs at least two keyframes")
    state.realign()
    prob, cams, pids = build_window_problem(vo, state, kf_ids, state.poses_only)
    state.lba_window = list(kf_ids)
    if len(prob.obs_cam) == 0 or prob.cam_fixed.all():
        rep = LMReport(status="nothing to optimise")
    else:
        out, rep = levenberg_marquardt(prob, state.lm_params)
        for i, c in enumerate(cams):
            if not prob.cam_fixed[i]:
                kf = vo.keyframes[c]
                kf.pose_vo = Pose6.from_rt(out.cam_R[i], out.cam_C[i], kf.pose_vo.frame)
        if prob.optimize_points:
            for i, p in enumerate(pids):
                vo.points[p].position_vo = out.points[i]
    state.realign()
    entry = {
        "keyframes": [int(k) for k in kf_ids],
        "n_points": len(pids),
        "n_observations": int(len(prob.obs_cam)),
        "n_global": int(len(prob.glob_cam)),
        **{k: v for k, v in rep.to_dict().items() if k != "seconds"},  # keep the log reproducible
    }
    state.lba_reports.append(entry)
    path = log_path or state.diagnostics_path
    if path is not None:
        append_jsonl(path, entry)
    return rep
