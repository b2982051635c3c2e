"""Coarse-to-fine absolute localization of a UAV frame against the tiled map."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uavloc.errors import InvalidArgument
from uavloc.map_index import W_FLOOR, SearchState, TileGrid, candidate_tiles
from uavloc.matching import MatcherSpec, confidence, match


@dataclass(frozen=True)
class AltimeterModel:
    sigma_z: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_z >= 0:
            raise InvalidArgument("sigma_z must be non-negative")


def apply_altitude_noise(gt_z, model: AltimeterModel, frame_id=0):
    """Altimeter reading: ``gt_z`` plus N(0, sigma_z^2), reproducible per (seed, frame_id)."""
    if model.sigma_z == 0:
        return float(gt_z)
    rng = np.random.default_rng([int(model.seed), 23, int(frame_id)])
    return float(gt_z + rng.normal(0.0, model.sigma_z))


@dataclass(frozen=True)
class AbsoluteFix:
    frame_id: int
    position_world: np.ndarray
    confidence: float
    tile_index: tuple
    homography: np.ndarray
    ssim: float = 0.0
    mean_sigma: float = 0.0
    n_inliers: int = 0

    def __post_init__(self):
        p = np.asarray(self.position_world, float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise InvalidArgument("fix position must be finite")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgument("fix confidence must lie in [0, 1]")
        object.__setattr__(self, "position_world", p)

    def message(self):
        x, y, z = self.position_world
        return {"frame_id": self.frame_id, "x": x, "y": y, "z": z, "w": self.confidence}


@dataclass
class LocalizeInfo:
    """Side channel with per-query diagnostics."""

    n_candidates: int = 0
    seconds: float = 0.0
    best_tile: Optional[tuple] = None
    best_confidence: float = 0.0
    scores: list = field(default_factory=list)  # (tile_index, confidence, n_inliers) per candidate


def _tile_homography(gt_homography, tile):
    if gt_homography is None:
        return None
    x0, y0 = tile.origin_px
    return np.array([[1.0, 0.0, -x0], [0.0, 1.0, -y0], [0.0, 0.0, 1.0]]) @ gt_homography


def _score_tile(image, frame_id, tile, spec, gt_homography):
    res = match(
        image,
        tile.view,
        spec,
        gt=_tile_homography(gt_homography, tile),
        rng_key=(frame_id, *tile.grid_index),
        fault_key=frame_id,
    )
    H = res.homography
    if H is None or not np.all(np.isfinite(H)):
        return None
    conf = confidence(tile.view, image, res)
    if conf.degenerate:
        return None
    return tile, res, conf


def localize(image, frame_id, grid: TileGrid, state: SearchState, spec: MatcherSpec,
             altimeter: AltimeterModel, gt_altitude, world, gt_homography=None,
             w_floor=W_FLOOR, workers=1, info: Optional[LocalizeInfo] = None):
    """Locate one UAV frame in the world frame.

    Every candidate tile from the search state is matched; the tile with the
    highest confidence wins (earlier candidates win ties). The UAV image centre
    is mapped through the tile homography, shifted by the tile origin and
    converted to metres. Returns ``(fix or None, state)``; ``state`` is updated
    in place and falls back to a full search when no fix is produced.
    """
    if grid.n_tiles == 0:
        raise InvalidArgument("empty tile grid")
    if spec.kind == "oracle" and gt_homography is None:
        raise InvalidArgument("the oracle matcher needs the ground-truth homography")
    image = np.asarray(image)
    t0 = time.perf_counter()
    cands = candidate_tiles(grid, state)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            scored = list(ex.map(lambda t: _score_tile(image, frame_id, t, spec, gt_homography), cands))
    else:
        scored = [_score_tile(image, frame_id, t, spec, gt_homography) for t in cands]

    best = None
    for s in scored:
        if s is not None and (best is None or s[2].value > best[2].value):
            best = s
    if info is not None:
        info.n_candidates = len(cands)
        info.scores = [
            (s[0].grid_index, s[2].value, s[1].num_inliers) for s in scored if s is not None
        ]

    fix = None
    if best is not None and best[2].value >= w_floor:
        tile, res, conf = best
        h, w = image.shape[:2]
        c = np.array([(w - 1) / 2.0, (h - 1) / 2.0, 1.0])
        p = res.homography @ c
        if abs(p[2]) > 1e-12:
            u = p[0] / p[2] + tile.origin_px[0]
            v = p[1] / p[2] + tile.origin_px[1]
            xy = world.pixel_to_world([u, v])
            z = apply_altitude_noise(gt_altitude, altimeter, frame_id)
            pos = np.array([xy[0], xy[1], z])
            if np.all(np.isfinite(pos)):
                fix = AbsoluteFix(
                    int(frame_id), pos, conf.value, tile.grid_index, res.homography,
                    conf.ssim, conf.mean_sigma, res.num_inliers,
                )
    if fix is None:
        state.reset()
    else:
        state.update(fix.tile_index, fix.confidence, w_floor)
    if info is not None:
        info.seconds = time.perf_counter() - t0
        info.best_tile = best[0].grid_index if best is not None else None
        info.best_confidence = best[2].value if best is not None else 0.0
    return fix, state


FIX_CSV_HEADER = ["frame_id", "x", "y", "z", "w", "tile_col", "tile_row", "n_inliers"]


def write_fix_csv(path, fixes):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(FIX_CSV_HEADER)
        for f in fixes:
            x, y, z = f.position_world
            wr.writerow([f.frame_id, f"{x:.9g}", f"{y:.9g}", f"{z:.9g}", f"{f.confidence:.9g}",
                         f.tile_index[0], f.tile_index[1], f.n_inliers])


def read_fix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "frame_id": int(r["frame_id"]),
            "position": np.array([float(r["x"]), float(r["y"]), float(r["z"])]),
            "w": float(r["w"]),
            "tile_index": (int(r["tile_col"]), int(r["tile_row"])),
            "n_inliers": int(r["n_inliers"]),
        }
        for r in rows
    ]
