"""Planar-homography visual odometry with keyframes and a local map.

The VO frame is the camera frame of the first image (z along the optical
axis, pointing at the ground). Metric scale comes from the first altimeter
reading, which fixes the distance to the ground plane.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uavloc.errors import InvalidArgument, TrackingLost
from uavloc.geometry import Pose6, project_to_so3, skew
from uavloc.matching import MatcherSpec, harris_corners, match

log = logging.getLogger(__name__)

NADIR_NORMAL = np.array([0.0, 0.0, 1.0])


def image_entropy(image):
    """Shannon entropy of the 256-bin intensity histogram, divided by log2(256)."""
    img = np.asarray(image)
    if img.size == 0:
        raise InvalidArgument("empty image")
    vals = np.clip(np.rint(img), 0, 255).astype(np.int64).ravel()
    p = np.bincount(vals, minlength=256) / vals.size
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log2(p)) / 8.0))


def keyframe_decision(frames_since_kf, entropy, tracked_points, reference_observations,
                      min_gap=10, entropy_min=0.5, tracked_ratio=0.9):
    """All three rules must hold: spacing, informative image, and tracking decay."""
    return bool(
        frames_since_kf > min_gap
        and entropy > entropy_min
        and tracked_points < tracked_ratio * reference_observations
    )


# ---------------------------------------------------------------------------
# homography <-> planar motion


def decompose_homography(H, K):
    """All physically distinct (R, t/d, n) explaining ``H = K (R + t n^T / d) K^-1``.

    Points map as ``x2 ~ H x1`` with ``X2 = R X1 + t`` and ``n . X1 = d`` on the plane
    (``n`` in camera-1 coordinates, oriented so that ``d > 0``). Returns a list of
    tuples; pure rotations yield a single solution with zero translation.
    """
    K = np.asarray(K, float)
    A = np.linalg.inv(K) @ np.asarray(H, float) @ K
    if np.linalg.det(A) < 0:
        A = -A
    U, w, Vt = np.linalg.svd(A)
    A = A / w[1]
    d1, d2, d3 = w / w[1]
    if d1 - d3 < 1e-9:
        return [(project_to_so3(A), np.zeros(3), NADIR_NORMAL.copy())]
    V = Vt.T
    s = np.linalg.det(U) * np.linalg.det(V)
    x1 = np.sqrt(max(d1**2 - 1.0, 0.0) / (d1**2 - d3**2))
    x3 = np.sqrt(max(1.0 - d3**2, 0.0) / (d1**2 - d3**2))
    st = np.sqrt(max((d1**2 - 1.0) * (1.0 - d3**2), 0.0)) / (d1 + d3)
    ct = (1.0 + d1 * d3) / (d1 + d3)
    out = []
    for e1, e3 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        n_p = np.array([e1 * x1, 0.0, e3 * x3])
        Rp = np.array([[ct, 0.0, -e1 * e3 * st], [0.0, 1.0, 0.0], [e1 * e3 * st, 0.0, ct]])
        R = s * U @ Rp @ Vt
        n = V @ n_p
        t = (A - R) @ n
        out.append((R, t, n))
    sols = []
    for R, t, n in out:
        if np.linalg.det(R) < 0:
            continue
        if np.linalg.norm(A - R - np.outer(t, n)) > 1e-6 * max(1.0, np.linalg.norm(A)):
            continue
        # orient the normal so that the plane lies in front of camera 1
        if n[2] < 0:
            n, t = -n, -t
        sols.append((R, t, n))
    return sols


def select_solution(solutions, expected_normal=NADIR_NORMAL):
    """Solution whose plane normal is closest to ``expected_normal``."""
    if not solutions:
        raise InvalidArgument("no homography decomposition to choose from")
    e = np.asarray(expected_normal, float)
    return max(solutions, key=lambda s: float(s[2] @ e))


def plane_motion(H, K, n, d):
    """Relative motion (R, t) with ``X2 = R X1 + t`` given the plane ``n . X1 = d``.

    Directions parallel to the plane are transferred by the rotation alone, up to
    the unknown homography scale, so a Kabsch fit on a basis of the plane fixes
    R and the scale; the normal direction then yields t.
    """
    K = np.asarray(K, float)
    n = np.asarray(n, float) / np.linalg.norm(n)
    M = np.linalg.inv(K) @ np.asarray(H, float) @ K
    if np.linalg.det(M) < 0:
        M = -M
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    m1, m2 = M @ e1, M @ e2
    src = np.stack([e1, e2, np.cross(e1, e2)])
    dst = np.stack([m1, m2, np.cross(m1, m2) / max(np.sqrt(np.linalg.norm(m1) * np.linalg.norm(m2)), 1e-12)])
    R = project_to_so3(dst.T @ src)
    lam = float((R @ e1) @ m1 + (R @ e2) @ m2) / float(m1 @ m1 + m2 @ m2)
    t = d * (lam * M @ n - R @ n)
    return R, t


# ---------------------------------------------------------------------------
# map structures


@dataclass
class MapPoint:
    id: int
    position_vo: np.ndarray
    observations: dict = field(default_factory=dict)  # keyframe id -> (u, v)
    created_kf: int = 0

    @property
    def observation_count(self):
        return len(self.observations)


@dataclass
class KeyFrame:
    id: int
    frame_id: int
    timestamp: float
    pose_vo: Pose6  # vo_from_camera
    point_ids: np.ndarray
    pixels: np.ndarray
    entropy: float
    image: np.ndarray = field(repr=False, default=None)
    gt_homography: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def observations(self):
        return list(zip(self.point_ids.tolist(), map(tuple, self.pixels)))

    @property
    def n_observations(self):
        return len(self.point_ids)


@dataclass(frozen=True)
class VOParams:
    window: int = 5
    min_inliers: int = 15
    bootstrap_inliers: int = 50
    min_kf_observations: int = 20
    kf_min_gap: int = 10
    kf_entropy_min: float = 0.5
    kf_tracked_ratio: float = 0.9
    cull_after_kfs: int = 2
    bootstrap_min_parallax: float = 0.25
    bootstrap_max_wait: int = 30  # frames; afterwards the nadir prior is used


@dataclass
class TrackResult:
    frame_id: int
    pose_vo: Pose6
    n_inliers: int
    tracked: int
    entropy: float
    new_keyframe: Optional[KeyFrame] = None


def backproject_to_plane(pixels, pose: Pose6, K_inv, plane):
    """Intersect pixel rays of a camera with the plane ``n . X = c`` (VO frame)."""
    n, c = plane
    rays = np.column_stack([pixels, np.ones(len(pixels))]) @ K_inv.T @ pose.R.T
    denom = rays @ n
    lam = (c - n @ pose.t) / np.where(np.abs(denom) > 1e-12, denom, np.nan)
    return pose.t + lam[:, None] * rays


def fit_plane(points):
    """Least-squares plane through ``points`` as (unit normal, offset) with normal . X = offset."""
    P = np.asarray(points, float)
    c = P.mean(axis=0)
    _, _, Vt = np.linalg.svd(P - c)
    n = Vt[-1]
    return n, float(n @ c)


class VisualOdometry:
    """Frame-to-keyframe tracker owning keyframes, map points and the ground plane.

    With the oracle matcher each frame must carry its ground-truth
    UAV-to-map homography; inter-frame ground truth is derived from it.
    """

    def __init__(self, camera, spec: MatcherSpec, params: VOParams = VOParams(), seed=0):
        self.camera = camera
        self.K = camera.K
        self.K_inv = camera.K_inv
        self.spec = spec
        self.params = params
        self.seed = seed
        self.keyframes: dict = {}
        self.points: dict = {}
        self.frame_poses: dict = {}  # frame_id -> (kf id, kf_from_camera Pose6)
        self.plane = None  # (normal, offset) in the VO frame
        self.ref_kf: Optional[int] = None
        self.initialized = False
        self.lost_frames = 0
        self._next_kf = 0
        self._next_pt = 0
        self._pending = None  # first frame waiting for bootstrap

    # -- keypoints ---------------------------------------------------------

    def _detect(self, image, frame_id, count, exclude=None):
        h, w = image.shape
        if count <= 0:
            return np.zeros((0, 2))
        if self.spec.kind == "oracle":
            rng = np.random.default_rng([self.seed, 31, int(frame_id)])
            return np.column_stack([rng.uniform(8, w - 9, count), rng.uniform(8, h - 9, count)])
        pts = harris_corners(image, self.spec.max_corners, self.spec.harris_k)
        if exclude is not None and len(exclude) and len(pts):
            d = np.min(np.linalg.norm(pts[:, None, :] - exclude[None, :, :], axis=2), axis=1)
            pts = pts[d > 4.0]
        return pts[:count]

    def _match(self, kf: KeyFrame, image, gt_homography, frame_id):
        gt = None
        if self.spec.kind == "oracle":
            if gt_homography is None or kf.gt_homography is None:
                raise InvalidArgument("the oracle matcher needs ground-truth homographies")
            gt = np.linalg.solve(gt_homography, kf.gt_homography)
        return match(kf.image, image, self.spec, gt=gt, keypoints_a=kf.pixels,
                     rng_key=(frame_id, kf.frame_id, 1))

    # -- lifecycle ---------------------------------------------------------

    def vo_pose(self, frame_id) -> Pose6:
        if frame_id not in self.frame_poses:
            raise KeyError(f"no VO pose for frame {frame_id}")
        kf_id, rel = self.frame_poses[frame_id]
        return self.keyframes[kf_id].pose_vo @ rel

    def _new_points(self, kf: KeyFrame, pixels):
        """Back-project pixels of ``kf`` onto the plane; returns (ids, kept pixels)."""
        pixels = np.asarray(pixels, float).reshape(-1, 2)
        X = backproject_to_plane(pixels, kf.pose_vo, self.K_inv, self.plane)
        ok = np.all(np.isfinite(X), axis=1)
        # keep only points in front of the camera
        ok &= (X - kf.pose_vo.t) @ kf.pose_vo.R[:, 2] > 0
        ids = []
        for x, px in zip(X[ok], pixels[ok]):
            pid = self._next_pt
            self._next_pt += 1
            self.points[pid] = MapPoint(pid, x, {kf.id: tuple(px)}, kf.id)
            ids.append(pid)
        return ids, pixels[ok]

    def _add_keyframe(self, frame_id, timestamp, pose, image, gt_homography, entropy,
                      tracked_ids, tracked_px, fresh=True):
        kid = self._next_kf
        self._next_kf += 1
        kf = KeyFrame(kid, frame_id, timestamp, pose, np.zeros(0, int), np.zeros((0, 2)),
                      entropy, np.asarray(image), gt_homography)
        self.keyframes[kid] = kf
        local_map_update(self, kf, tracked_ids, tracked_px, image if fresh else None)
        self.ref_kf = kid
        self.frame_poses[frame_id] = (kid, Pose6.identity("kf_from_camera"))
        return kf

    def bootstrap(self, frame_id, timestamp, image, altitude, gt_homography=None):
        """Try to initialise from the pending first frame and this one.

        Returns the TrackResult of the new frame once initialised, else None.
        """
        image = np.asarray(image)
        ent = image_entropy(image)
        if ent <= self.params.kf_entropy_min:
            # both bootstrap frames become keyframes, so the entropy gate applies
            return None
        if self._pending is None:
            kps = self._detect(image, frame_id, self.spec.num_keypoints)
            self._pending = (frame_id, timestamp, image, altitude, gt_homography, kps)
            return None
        f0, ts0, img0, alt0, gt0, kps0 = self._pending
        probe = KeyFrame(-1, f0, ts0, Pose6.identity("vo_from_camera"), np.arange(len(kps0)),
                         kps0, image_entropy(img0), img0, gt0)
        res = self._match(probe, image, gt_homography, frame_id)
        if res.homography is None or res.num_inliers < self.params.bootstrap_inliers:
            # restart from the newest frame
            self._pending = None
            self.bootstrap(frame_id, timestamp, image, altitude, gt_homography)
            return None
        normal = None
        sols = decompose_homography(res.homography, self.K)
        if sols:
            R_, t_, n_ = select_solution(sols, NADIR_NORMAL)
            if np.linalg.norm(t_) >= self.params.bootstrap_min_parallax:
                normal = n_ / np.linalg.norm(n_)
        if normal is None:
            # too little parallax to see the ground normal: wait for more, up to a limit
            if frame_id - f0 < self.params.bootstrap_max_wait:
                return None
            normal = NADIR_NORMAL.copy()
        self.plane = (normal, float(alt0))
        R, t = plane_motion(res.homography, self.K, normal, float(alt0))
        pose0 = Pose6.identity("vo_from_camera")
        pose1 = Pose6.from_rt(R.T, -R.T @ t, "vo_from_camera")
        kf0 = self._add_keyframe(f0, ts0, pose0, img0, gt0, probe.entropy, [], np.zeros((0, 2)),
                                 fresh=False)
        # the first keyframe's points are those tracked into the second frame
        inl = np.nonzero(res.inlier_mask)[0]
        X = backproject_to_plane(res.pts_a[inl], pose0, self.K_inv, self.plane)
        inl = inl[np.all(np.isfinite(X), axis=1)]
        pids, px0 = self._new_points(kf0, res.pts_a[inl])
        kf0.point_ids = np.array(pids, int)
        kf0.pixels = px0
        kf1 = self._add_keyframe(frame_id, timestamp, pose1, image, gt_homography,
                                 ent, pids, res.pts_b[inl])
        self.initialized = True
        self._pending = None
        return TrackResult(frame_id, pose1, res.num_inliers, len(pids), kf1.entropy, kf1)

    def track(self, frame_id, timestamp, image, gt_homography=None) -> TrackResult:
        """Pose of a new frame relative to the reference keyframe, promoted to a keyframe if due."""
        if not self.initialized:
            raise InvalidArgument("VO is not initialised")
        image = np.asarray(image)
        ref = self.keyframes[self.ref_kf]
        res = self._match(ref, image, gt_homography, frame_id)
        if res.homography is None or res.num_inliers < self.params.min_inliers:
            self.lost_frames += 1
            raise TrackingLost(f"frame {frame_id}: {res.num_inliers} inliers")
        n_w, c_w = self.plane
        Rr, Cr = ref.pose_vo.R, ref.pose_vo.t
        n_c = Rr.T @ n_w
        d_c = c_w - n_w @ Cr
        if d_c < 0:
            n_c, d_c = -n_c, -d_c
        R, t = plane_motion(res.homography, self.K, n_c, d_c)
        rel = Pose6.from_rt(R.T, -R.T @ t, "kf_from_camera")
        pose = ref.pose_vo @ rel
        pose = Pose6(pose.rotation, pose.translation, "vo_from_camera")

        inl = res.inlier_mask
        ids = ref.point_ids[res.idx_a[inl]]
        alive = np.array([pid in self.points for pid in ids], bool)
        self.frame_poses[frame_id] = (ref.id, rel)
        self.lost_frames = 0
        tracked = int(alive.sum())
        ent = image_entropy(image)
        out = TrackResult(frame_id, pose, res.num_inliers, tracked, ent)
        p = self.params
        if keyframe_decision(frame_id - ref.frame_id, ent, tracked, ref.n_observations,
                             p.kf_min_gap, p.kf_entropy_min, p.kf_tracked_ratio):
            out.new_keyframe = self._add_keyframe(
                frame_id, timestamp, pose, image, gt_homography, ent, ids[alive], res.pts_b[inl][alive]
            )
        return out

    def reinitialize(self, frame_id, timestamp, image, gt_homography=None, pose=None):
        """Start a fresh keyframe at ``pose`` (default: last known pose) after tracking loss."""
        if pose is None:
            last = max(self.frame_poses) if self.frame_poses else None
            pose = self.vo_pose(last) if last is not None else Pose6.identity("vo_from_camera")
        ent = image_entropy(image)
        if ent <= self.params.kf_entropy_min:
            raise TrackingLost(f"frame {frame_id}: entropy {ent:.3f} too low for a keyframe")
        kf = self._add_keyframe(frame_id, timestamp, pose, image, gt_homography,
                                ent, [], np.zeros((0, 2)))
        if kf.n_observations < self.params.min_kf_observations:
            raise TrackingLost(f"frame {frame_id}: too few features to reinitialise")
        self.lost_frames = 0
        return kf

    # -- local map ---------------------------------------------------------

    def window(self):
        """Ids of the most recent keyframes forming the optimisation window."""
        ids = sorted(self.keyframes)
        return ids[-self.params.window :]

    def refit_plane(self, kf_ids=None):
        kf_ids = self.window() if kf_ids is None else kf_ids
        ks = set(kf_ids)
        P = [mp.position_vo for mp in self.points.values()
             if mp.observation_count >= 2 and ks.intersection(mp.observations)]
        if len(P) < 10:
            return self.plane
        n, c = fit_plane(np.array(P))
        if n @ self.plane[0] < 0:
            n, c = -n, -c
        self.plane = (n, c)
        return self.plane

    def reprojection_errors(self, kf_ids=None):
        """Per-observation reprojection error norms over the given keyframes."""
        kf_ids = self.window() if kf_ids is None else kf_ids
        errs = []
        for k in kf_ids:
            kf = self.keyframes[k]
            R, C = kf.pose_vo.R, kf.pose_vo.t
            for pid, px in zip(kf.point_ids, kf.pixels):
                mp = self.points.get(int(pid))
                if mp is None or mp.observation_count < 2:
                    continue
                Xc = R.T @ (mp.position_vo - C)
                if Xc[2] <= 0:
                    continue
                uv = (self.K @ Xc)[:2] / Xc[2]
                errs.append(np.linalg.norm(uv - px))
        return np.array(errs)


def local_map_update(vo: VisualOdometry, kf: KeyFrame, tracked_ids, tracked_px, image=None):
    """Attach tracked points to a new keyframe, add fresh plane points, cull weak ones.

    Returns the number of points created.
    """
    tracked_ids = np.asarray(tracked_ids, int).reshape(-1)
    tracked_px = np.asarray(tracked_px, float).reshape(-1, 2)
    for pid, px in zip(tracked_ids, tracked_px):
        vo.points[int(pid)].observations[kf.id] = tuple(px)
    n_new = 0
    new_ids = []
    if image is not None and vo.plane is not None:
        budget = vo.spec.num_keypoints if vo.spec.kind == "oracle" else vo.spec.max_corners
        fresh = vo._detect(np.asarray(image), kf.frame_id, budget - len(tracked_ids), tracked_px)
        new_ids, fresh_px = vo._new_points(kf, fresh)
        n_new = len(new_ids)
    else:
        fresh_px = np.zeros((0, 2))
    kf.point_ids = np.concatenate([tracked_ids, np.array(new_ids, int)])
    kf.pixels = np.vstack([tracked_px, fresh_px])

    # points created two or more keyframes ago must have a second observation by now
    horizon = kf.id - vo.params.cull_after_kfs
    for pid in [p for p, mp in vo.points.items() if mp.created_kf <= horizon and mp.observation_count < 2]:
        del vo.points[pid]
    return n_new
