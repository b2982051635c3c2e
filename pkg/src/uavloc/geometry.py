"""Rigid-body helpers: Pose6, SO(3) maps and small projective utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rodrigues' formula."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + np.sin(theta) / theta * K
        + (1.0 - np.cos(theta)) / theta**2 * K @ K
    )


def so3_log(R):
    return Rotation.from_matrix(R).as_rotvec()


def rotation_angle(R):
    """Geodesic angle of a rotation matrix in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def project_to_so3(M):
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def euler_zyx(yaw, pitch, roll):
    """Body-to-world rotation Rz(yaw) Ry(pitch) Rx(roll), angles in radians."""
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


@dataclass(frozen=True)
class Pose6:
    """Rigid transform stored as a unit quaternion (x, y, z, w) and a translation.

    ``frame`` is a free-form tag naming the convention, e.g. ``"world_from_camera"``
    or ``"vo_from_camera"``.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: str = "world_from_camera"

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        q = q / n
        # canonical sign keeps equality checks stable
        if q[3] < 0:
            q = -q
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, frame="world_from_camera"):
        return cls(frame=frame)

    @classmethod
    def from_rt(cls, R, t, frame="world_from_camera"):
        return cls(Rotation.from_matrix(np.asarray(R)).as_quat(), t, frame)

    @classmethod
    def from_matrix(cls, T, frame="world_from_camera"):
        T = np.asarray(T)
        return cls.from_rt(T[:3, :3], T[:3, 3], frame)

    @property
    def R(self):
        return Rotation.from_quat(self.rotation).as_matrix()

    @property
    def t(self):
        return self.translation

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        R = self.R
        return Pose6.from_rt(R.T, -R.T @ self.translation, _invert_tag(self.frame))

    def compose(self, other: "Pose6") -> "Pose6":
        R = self.R
        return Pose6.from_rt(R @ other.R, R @ other.translation + self.translation, self.frame)

    def __matmul__(self, other):
        return self.compose(other)

    def apply(self, points):
        return np.asarray(points) @ self.R.T + self.translation


def _invert_tag(tag):
    if "_from_" in tag:
        a, b = tag.split("_from_", 1)
        return f"{b}_from_{a}"
    return tag


def to_homogeneous(pts):
    pts = np.asarray(pts, dtype=float)
    return np.hstack([pts, np.ones((pts.shape[0], 1))])


def apply_homography(H, pts):
    """Map (N, 2) points through a 3x3 homography with dehomogenization."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    p = pts @ H[:, :2].T + H[:, 2]
    return p[:, :2] / p[:, 2:3]


def normalize_homography(H):
    return H / H[2, 2]


def corner_transfer_error(H_est, H_ref, width, height):
    """Max distance between the images of the four corners under two homographies."""
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], float)
    a = apply_homography(H_est, corners)
    b = apply_homography(H_ref, corners)
    return float(np.max(np.linalg.norm(a - b, axis=1)))
