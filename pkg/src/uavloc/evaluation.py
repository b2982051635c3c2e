"""Absolute trajectory error in the style of evo: association, alignment, statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from uavloc.errors import AssociationFailed, InvalidArgument
from uavloc.fusion import align_trajectories
from uavloc.io import read_tum


@dataclass
class TrajectoryFile:
    timestamps: np.ndarray
    positions: np.ndarray  # (N, 3)
    quaternions: np.ndarray  # (N, 4) x y z w
    label: str = ""

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, float).reshape(-1)
        self.positions = np.asarray(self.positions, float).reshape(-1, 3)
        n = len(self.timestamps)
        if self.quaternions is None:
            self.quaternions = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
        self.quaternions = np.asarray(self.quaternions, float).reshape(-1, 4)
        if len(self.positions) != n or len(self.quaternions) != n:
            raise InvalidArgument("timestamps, positions and quaternions differ in length")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise InvalidArgument(f"{self.label or 'trajectory'}: timestamps must increase strictly")
        if n and np.any(np.abs(np.linalg.norm(self.quaternions, axis=1) - 1.0) > 1e-6):
            raise InvalidArgument(f"{self.label or 'trajectory'}: quaternions must be unit-norm")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses, label=""):
        return cls(
            timestamps,
            np.array([p.translation for p in poses]).reshape(-1, 3),
            np.array([p.rotation for p in poses]).reshape(-1, 4),
            label,
        )

    @classmethod
    def load(cls, path):
        ts, pos, quat = read_tum(path)
        # TUM files carry 9 significant digits, so renormalize
        n = np.linalg.norm(quat, axis=1, keepdims=True)
        return cls(ts, pos, quat / np.where(n > 0, n, 1.0), str(path))


@dataclass(frozen=True)
class ErrorStats:
    std: float
    rmse: float
    min: float
    max: float
    median: float
    mean: float

    def to_dict(self):
        return asdict(self)


@dataclass
class Pairs:
    est_index: np.ndarray
    ref_index: np.ndarray
    est: np.ndarray  # (M, 3) positions
    ref: np.ndarray  # (M, 3)
    dt: np.ndarray

    def __len__(self):
        return len(self.est_index)


def associate(est: TrajectoryFile, ref: TrajectoryFile, max_dt=0.02) -> Pairs:
    """Pair each estimate with the nearest unused reference stamp within ``max_dt``.

    Candidate pairs are taken greedily in order of increasing |dt|.
    """
    if len(est) == 0 or len(ref) == 0:
        raise InvalidArgument("both trajectories must be non-empty")
    rt = ref.timestamps
    cand = []
    for i, t in enumerate(est.timestamps):
        lo = np.searchsorted(rt, t - max_dt, side="left")
        hi = np.searchsorted(rt, t + max_dt, side="right")
        for j in range(lo, hi):
            cand.append((abs(rt[j] - t), i, j))
    cand.sort()
    used_e, used_r = set(), set()
    pe, pr = [], []
    for _, i, j in cand:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pe.append(i)
        pr.append(j)
    if not pe:
        raise AssociationFailed(f"no timestamp pairs within {max_dt} s")
    order = np.argsort(pe, kind="stable")
    ie = np.array(pe)[order]
    ir = np.array(pr)[order]
    return Pairs(ie, ir, est.positions[ie], ref.positions[ir], est.timestamps[ie] - rt[ir])


def error_stats(errors) -> ErrorStats:
    e = np.asarray(errors, float).reshape(-1)
    if e.size == 0:
        raise InvalidArgument("no errors to summarise")
    return ErrorStats(
        std=float(np.std(e)),
        rmse=float(np.sqrt(np.mean(e**2))),
        min=float(np.min(e)),
        max=float(np.max(e)),
        median=float(np.median(e)),
        mean=float(np.mean(e)),
    )


def ape_errors(pairs: Pairs, align=False):
    est, ref = pairs.est, pairs.ref
    if align:
        R, t, _ = align_trajectories(ref, est, with_scale=False)
        est = est @ R.T + t
    return np.linalg.norm(est - ref, axis=1)


def ape_stats(pairs: Pairs, align=False) -> ErrorStats:
    """Translational APE statistics; ``align`` applies a rigid (s = 1) fit first."""
    if len(pairs) < 2:
        raise InvalidArgument("need at least two pairs")
    return error_stats(ape_errors(pairs, align))


def evaluate(est: TrajectoryFile, ref: TrajectoryFile, align=False, max_dt=0.02):
    pairs = associate(est, ref, max_dt)
    return ape_stats(pairs, align), pairs
