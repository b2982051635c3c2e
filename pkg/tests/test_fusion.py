from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from uavloc.errors import AlignmentFailed, InvalidArgument, NotFound
from uavloc.fusion import (
    FusionState,
    LBAProblem,
    LMParams,
    Sim3,
    align_trajectories,
    apply_increment,
    cost,
    fit_scale_translation,
    global_residuals,
    jacobians,
    levenberg_marquardt,
    reprojection_residual,
    residuals,
    world_pose_of,
)
from uavloc.geometry import Pose6, so3_exp
from uavloc.pipeline import run_pipeline, simulate

from tests.conftest import small_config

NADIR = np.diag([1.0, -1.0, -1.0])  # vo_from_camera for a camera looking straight down
K = np.array([[160.0, 0, 127.5], [0, 160.0, 127.5], [0, 0, 1]])


def random_sim3(rng, scale=True):
    return Sim3(Rotation.random(random_state=rng.integers(2**31)).as_matrix(),
                rng.normal(0, 20, 3), rng.uniform(0.2, 5.0) if scale else 1.0)


def synthetic_problem(rng, n_cams=4, n_pts=40, fixed=2, noise=0.0):
    """Cameras 40 m above a ground patch, all observing every point."""
    C = np.column_stack([np.arange(n_cams) * 3.0, rng.normal(0, 1, n_cams), 40 + rng.normal(0, 1, n_cams)])
    R = np.array([NADIR @ so3_exp(rng.normal(0, 0.03, 3)) for _ in range(n_cams)])
    pts = np.column_stack([rng.uniform(-10, 10 + 3 * n_cams, n_pts), rng.uniform(-10, 10, n_pts),
                           rng.normal(0, 0.5, n_pts)])
    oc, op, oz = [], [], []
    for c in range(n_cams):
        Xc = (pts - C[c]) @ R[c]
        uv = (Xc @ K.T)[:, :2] / Xc[:, 2:]
        for p in range(n_pts):
            oc.append(c)
            op.append(p)
            oz.append(uv[p] + rng.normal(0, noise, 2))
    cam_fixed = np.arange(n_cams) < fixed
    return LBAProblem(K, R, C, cam_fixed, pts, np.array(oc), np.array(op), np.array(oz))


def with_fixes(prob, weight=1.0, q=None):
    out = prob.copy()
    free = np.nonzero(~prob.cam_fixed)[0]
    out.glob_cam = free
    out.glob_c_rel = np.zeros((len(free), 3))
    out.glob_q = prob.cam_C[free].copy() if q is None else np.asarray(q, float)
    out.glob_w = np.full(len(free), float(weight))
    return out


# -- similarity alignment ----------------------------------------------------


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 40))
def test_alignment_recovers_an_exact_similarity(seed, n):
    rng = np.random.default_rng(seed)
    S = random_sim3(rng)
    p = rng.normal(0, 10, (n, 3))
    R, t, s = align_trajectories(S.apply(p), p)
    assert np.allclose(R, S.R, atol=1e-8) and np.allclose(t, S.t, atol=1e-6)
    assert abs(s - S.s) < 1e-9 * S.s
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


@given(seed=st.integers(0, 2**31 - 1))
def test_alignment_is_equivariant(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(0, 10, (25, 3))
    q = p + rng.normal(0, 0.5, p.shape)
    G = random_sim3(rng)
    R1, t1, s1 = align_trajectories(q, p)
    R2, t2, s2 = align_trajectories(G.apply(q), p)
    assert np.allclose(R2, G.R @ R1, atol=1e-8)
    assert np.isclose(s2, G.s * s1, rtol=1e-9)
    assert np.allclose(t2, G.apply(t1), atol=1e-6)


def test_rotation_matches_scipy_kabsch(rng):
    p = rng.normal(0, 10, (30, 3))
    q = Sim3(so3_exp([0.3, -0.2, 1.0]), [1, 2, 3]).apply(p) + rng.normal(0, 0.3, p.shape)
    R, _, _ = align_trajectories(q, p, with_scale=False)
    ref, _ = Rotation.align_vectors(q - q.mean(0), p - p.mean(0))
    assert np.allclose(R, ref.as_matrix(), atol=1e-9)


def test_alignment_without_scale_keeps_unit_scale(rng):
    p = rng.normal(0, 10, (10, 3))
    _, _, s = align_trajectories(3.0 * p, p, with_scale=False)
    assert s == 1.0


def test_planar_mirror_never_gives_a_reflection(rng):
    p = np.column_stack([rng.normal(0, 10, (20, 2)), np.zeros(20)])
    q = p * [1, -1, 1]
    R, _, _ = align_trajectories(q, p)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_zero_weight_ignores_an_outlier(rng):
    p = rng.normal(0, 10, (12, 3))
    S = random_sim3(rng)
    q = S.apply(p)
    q[5] += 100.0
    w = np.ones(12)
    w[5] = 0.0
    R, t, s = align_trajectories(q, p, weights=w)
    assert np.allclose(R, S.R, atol=1e-8) and np.isclose(s, S.s)


def test_degenerate_alignments_fail():
    with pytest.raises(AlignmentFailed):
        align_trajectories([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [1, 0, 0]])
    line = np.outer(np.arange(6.0), [1.0, 2.0, 0.0])
    with pytest.raises(AlignmentFailed):
        align_trajectories(line, line)
    with pytest.raises(InvalidArgument):
        align_trajectories(np.zeros((4, 3)), np.zeros((3, 3)))


def test_fit_scale_translation_for_a_known_rotation(rng):
    p = rng.normal(0, 5, (8, 3))
    R = so3_exp([0.1, 0.2, 0.3])
    t, s = fit_scale_translation(2.5 * p @ R.T + [4, 5, 6], p, R)
    assert np.isclose(s, 2.5) and np.allclose(t, [4, 5, 6])
    with pytest.raises(AlignmentFailed):
        fit_scale_translation(np.ones((3, 3)), np.ones((3, 3)), np.eye(3))


def test_sim3_transforms_poses():
    S = Sim3(so3_exp([0, 0, np.pi / 2]), [1.0, 0, 0], 2.0)
    out = S.transform_pose(Pose6.from_rt(np.eye(3), [1.0, 0, 0]))
    assert np.allclose(out.t, [1.0, 2.0, 0.0]) and np.allclose(out.R, S.R)
    with pytest.raises(InvalidArgument):
        Sim3(s=0.0)


# -- residuals and Jacobians -------------------------------------------------


def test_reprojection_residual_examples():
    cam = SimpleNamespace(K=np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]))
    T = Pose6.identity("camera_from_world")
    r, ok = reprojection_residual(T, [0, 0, 10], [50, 50], cam)
    assert ok and np.allclose(r, 0)
    r, ok = reprojection_residual(T, [1, 2, 10], [55, 55], cam)
    assert ok and np.allclose(r, [-5, -15])
    r, ok = reprojection_residual(T, [0, 0, -1], [50, 50], cam)
    assert not ok and np.all(np.isnan(r))


def test_residuals_vanish_on_an_exact_problem(rng):
    prob = with_fixes(synthetic_problem(rng))
    r, valid, eg = residuals(prob)
    assert valid.all() and np.abs(r).max() < 1e-9 and np.abs(eg).max() < 1e-12


def _numeric_jacobians(prob, eps=1e-6):
    O, G = len(prob.obs_cam), len(prob.glob_cam)
    Jc = np.zeros((O, 2, 6))
    Jp = np.zeros((O, 2, 3))
    JG = np.zeros((G, 3, 6))
    n_free = int((~prob.cam_fixed).sum())
    free = np.nonzero(~prob.cam_fixed)[0]
    for k, c in enumerate(free):
        for j in range(6):
            d = np.zeros((n_free, 6))
            d[k, j] = eps
            rp, _, gp = residuals(apply_increment(prob, d, None))
            rm, _, gm = residuals(apply_increment(prob, -d, None))
            o = prob.obs_cam == c
            Jc[o, :, j] = ((rp - rm) / (2 * eps))[o]
            g = prob.glob_cam == c
            JG[g, :, j] = ((gp - gm) / (2 * eps))[g]
    for p in range(len(prob.points)):
        for j in range(3):
            d = np.zeros_like(prob.points)
            d[p, j] = eps
            rp, _, _ = residuals(apply_increment(prob, np.zeros((n_free, 6)), d))
            rm, _, _ = residuals(apply_increment(prob, np.zeros((n_free, 6)), -d))
            o = prob.obs_pt == p
            Jp[o, :, j] = ((rp - rm) / (2 * eps))[o]
    return Jc, Jp, JG


def test_jacobians_match_finite_differences():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        prob = synthetic_problem(rng, n_cams=3, n_pts=6, fixed=1, noise=1.0)
        prob = with_fixes(prob, 0.7, prob.cam_C[1:] + rng.normal(0, 1, (2, 3)))
        prob.glob_c_rel = rng.normal(0, 2, (2, 3))
        prob.sim3 = random_sim3(rng)
        Jc, Jp, JG = jacobians(prob)
        Nc, Np, NG = _numeric_jacobians(prob)
        free = ~prob.cam_fixed[prob.obs_cam]
        for a, b in ((Jc[free], Nc[free]), (Jp, Np), (JG, NG)):
            worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    assert worst < 1e-5


# -- Levenberg-Marquardt -----------------------------------------------------


def perturbed(prob, rng, size=0.5):
    out = prob.copy()
    free = ~prob.cam_fixed
    out.cam_C[free] += rng.normal(0, size / np.sqrt(3), (int(free.sum()), 3))
    out.points = prob.points + rng.normal(0, 0.05, prob.points.shape)
    return out


def test_lm_costs_never_increase(rng):
    truth = synthetic_problem(rng, noise=0.5)
    out, rep = levenberg_marquardt(perturbed(truth, rng, 1.0))
    c = np.array(rep.accepted_costs)
    assert len(c) >= 2 and np.all(np.diff(c) <= 0)
    assert rep.final_cost == c[-1] < c[0]
    assert rep.final_cost == pytest.approx(cost(out))


def test_lm_leaves_an_exact_problem_alone(rng):
    prob = with_fixes(synthetic_problem(rng))
    out, rep = levenberg_marquardt(prob)
    assert abs(rep.final_cost - rep.initial_cost) < 1e-12
    assert np.allclose(out.cam_C, prob.cam_C, atol=1e-9)


@pytest.mark.parametrize("w", [1.0, 0.0])
def test_lm_recovers_perturbed_cameras(rng, w):
    truth = synthetic_problem(rng)
    start = with_fixes(perturbed(truth, rng), w, truth.cam_C[~truth.cam_fixed])
    assert np.abs(start.cam_C - truth.cam_C).max() > 0.05
    out, rep = levenberg_marquardt(start, LMParams(max_iterations=50))
    assert np.linalg.norm(out.cam_C - truth.cam_C, axis=1).max() < 0.01
    assert np.all(out.cam_C[truth.cam_fixed] == truth.cam_C[truth.cam_fixed])


def test_wrong_fix_pull_grows_with_its_weight(rng):
    truth = synthetic_problem(rng, noise=0.3)
    free = np.nonzero(~truth.cam_fixed)[0]
    q = truth.cam_C[free].copy()
    q[-1] += [5.0, 0, 0]
    pos = []
    for w in (0.0, 0.25, 0.5, 0.75, 1.0):
        prob = with_fixes(truth, 1.0, q)
        prob.glob_w[-1] = w
        out, _ = levenberg_marquardt(prob, LMParams(max_iterations=50))
        pos.append(out.cam_C[free[-1]])
    # displacement from the reprojection-only solution, along the fix error
    pull = [(p - pos[0])[0] for p in pos]
    assert np.all(np.diff(pull) > 0) and pull[-1] < 5.0


def test_global_residual_uses_the_alignment():
    prob = synthetic_problem(np.random.default_rng(1), n_cams=2, fixed=1)
    prob = with_fixes(prob)
    prob.sim3 = Sim3(np.eye(3), [1.0, 0, 0], 2.0)
    eg = global_residuals(prob)
    assert np.allclose(eg, prob.glob_q - (2 * prob.cam_C[1] + [1, 0, 0]))


# -- fusion state ------------------------------------------------------------


def stub_vo(poses):
    return SimpleNamespace(frame_poses={k: None for k in poses}, vo_pose=poses.__getitem__,
                           keyframes={}, plane=None)


def test_world_pose_of_example():
    st_ = FusionState(stub_vo({3: Pose6.from_rt(np.eye(3), [3.0, 0, 0])}))
    with pytest.raises(AlignmentFailed):
        world_pose_of(3, st_)
    st_.world_from_vo = Sim3(np.eye(3), [1.0, 0, 0], 2.0)
    assert np.allclose(world_pose_of(3, st_).t, [7.0, 0, 0])
    with pytest.raises(NotFound):
        world_pose_of(4, st_)


def test_fusion_state_validation():
    with pytest.raises(InvalidArgument):
        FusionState(fix_interval_k=0)
    with pytest.raises(InvalidArgument):
        FusionState(pairing="nearest")


@pytest.fixture(scope="module")
def noiseless_run():
    exact = dict(pixel_noise=0.0, outlier_fraction=0.0)
    cfg = small_config(sigma_z=0.0, matcher=exact, vo_matcher=exact, lockstep=True,
                       waypoints=[[50.0, 100.0], [110.0, 100.0], [110.0, 180.0]], max_frames=None)
    return run_pipeline(cfg, simulate(cfg))


def test_noiseless_run_is_exact(noiseless_run):
    e = noiseless_run.fused_errors()
    assert len(e) > 50
    assert e.max() < 0.05


def test_fused_poses_follow_the_transform(noiseless_run):
    st_ = noiseless_run.fusion_state
    S = st_.world_from_vo
    for fid, pose in zip(noiseless_run.frame_ids[-5:], noiseless_run.poses[-5:]):
        vo = st_.vo.vo_pose(fid)
        assert np.allclose(pose.t, S.apply(vo.t), atol=1e-6)
    # the paired trajectories agree through the final transform
    assert np.abs(st_.q_list - S.apply(st_.p_list)).max() < 1e-6
