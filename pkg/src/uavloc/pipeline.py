"""End-to-end runs: scenario construction, the two-thread pipeline, baselines and ablations."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from uavloc.absolute_loc import AltimeterModel, LocalizeInfo, apply_altitude_noise, localize, write_fix_csv
from uavloc.errors import InvalidArgument, PipelineFailure, TrackingLost
from uavloc.evaluation import TrajectoryFile, error_stats, evaluate
from uavloc.fusion import FusionState, fused_lba, world_pose_of
from uavloc.geometry import Pose6
from uavloc.io import read_json, read_pgm, read_tum, write_json, write_pgm, write_tum
from uavloc.map_index import SearchState, partition
from uavloc.matching import MatcherSpec
from uavloc.relative_loc import VOParams, VisualOdometry
from uavloc.world_sim import (
    CameraModel,
    FlightPath,
    GroundTruthFrame,
    NoiseSpec,
    TerrainKind,
    WorldMap,
    ellipse_waypoints,
    generate_world,
    render_flight,
)

log = logging.getLogger(__name__)

CONFIDENCE_MODES = ("adaptive", "ssim_only", "sigma_only", "fixed")


def parse_confidence_mode(mode):
    """``"adaptive"``, ``"ssim_only"``, ``"sigma_only"`` or ``"fixed:<v>"`` -> (name, value)."""
    if isinstance(mode, (int, float)):
        mode = f"fixed:{mode}"
    if not isinstance(mode, str):
        raise InvalidArgument(f"bad confidence mode {mode!r}")
    if mode.startswith("fixed"):
        try:
            v = float(mode.split(":", 1)[1])
        except (IndexError, ValueError):
            raise InvalidArgument(f"fixed confidence needs a value, e.g. 'fixed:0.6', got {mode!r}")
        if not 0.0 <= v <= 1.0:
            raise InvalidArgument(f"fixed confidence must lie in [0, 1], got {v}")
        return "fixed", v
    if mode not in CONFIDENCE_MODES:
        raise InvalidArgument(f"unknown confidence mode {mode!r}")
    return mode, None


def fusion_weight(fix, mode):
    name, v = parse_confidence_mode(mode)
    if name == "adaptive":
        return fix.confidence
    if name == "fixed":
        return v
    if name == "ssim_only":
        return float(np.clip(fix.ssim, 0.0, 1.0))
    return float(np.clip(fix.mean_sigma, 0.0, 1.0))


@dataclass
class RunConfig:
    # world
    seed: int = 1
    kind: str = "crater"
    width: int = 2048
    height: int = 2048
    mpp: float = 0.25
    # flight; without explicit waypoints an ellipse is flown
    waypoints: Optional[list] = None
    ellipse_center: tuple = (256.0, 256.0)
    ellipse_semi: tuple = (200.0, 120.0)
    ellipse_points: int = 240
    speed: float = 10.0
    altitude: float = 40.0
    frame_rate: float = 10.0
    max_frames: Optional[int] = None
    # camera and rendering
    camera_size: int = 256
    focal: float = 160.0
    jitter_deg: float = 2.0
    jitter_max_hz: float = 0.6
    intensity_noise: float = 0.0
    # matching
    matcher: dict = field(default_factory=dict)
    vo_matcher: dict = field(default_factory=dict)
    vo_params: dict = field(default_factory=dict)
    tile_duplication: float = 0.5
    w_floor: float = 0.2
    area_prediction: bool = True
    sigma_z: float = 0.1
    # fusion
    fix_interval_k: int = 10
    confidence_mode: str = "adaptive"
    with_scale: bool = True
    weighted_alignment: bool = True
    history_cap: int = 0
    min_spread: float = 1.0
    poses_only: bool = False
    fix_pairing: str = "axis"
    scale_from_fixes: bool = True
    local_history: int = 3
    local_extent: float = 15.0
    # execution
    lockstep: bool = False
    workers: int = 1
    max_lost_frames: int = 50
    dataset: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            TerrainKind(self.kind)
        except ValueError:
            raise InvalidArgument(f"unknown terrain kind {self.kind!r}")
        parse_confidence_mode(self.confidence_mode)
        if self.fix_interval_k < 1:
            raise InvalidArgument("fix_interval_k must be >= 1")
        if self.speed <= 0 or self.frame_rate <= 0 or self.altitude <= 0:
            raise InvalidArgument("speed, frame_rate and altitude must be positive")
        if self.mpp <= 0:
            raise InvalidArgument("mpp must be positive")
        if not 0.0 <= self.tile_duplication < 1.0:
            raise InvalidArgument("tile_duplication must lie in [0, 1)")
        if self.dataset is not None and not Path(self.dataset).exists():
            raise InvalidArgument(f"dataset {self.dataset} does not exist")
        MatcherSpec.from_dict(self.matcher)
        MatcherSpec.from_dict(self.vo_matcher)
        self.vo_params_obj

    @property
    def vo_params_obj(self):
        names = {f.name for f in dataclasses.fields(VOParams)}
        unknown = set(self.vo_params) - names
        if unknown:
            raise InvalidArgument(f"unknown vo_params keys: {sorted(unknown)}")
        return VOParams(**self.vo_params)

    @property
    def matcher_spec(self):
        return MatcherSpec.from_dict({"seed": self.seed, **self.matcher})

    @property
    def vo_matcher_spec(self):
        return MatcherSpec.from_dict({"seed": self.seed, **self.vo_matcher})

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ellipse_center"] = list(self.ellipse_center)
        d["ellipse_semi"] = list(self.ellipse_semi)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("ellipse_center", "ellipse_semi"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(read_json(path))
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidArgument(f"cannot read config {path}: {e}")

    def save(self, path):
        write_json(path, self.to_dict())

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# scenarios


def make_camera(cfg: RunConfig):
    return CameraModel.nadir(cfg.camera_size, focal=cfg.focal)


def make_path(cfg: RunConfig):
    if cfg.waypoints is not None:
        wps = [tuple(map(float, w)) for w in cfg.waypoints]
    else:
        wps = ellipse_waypoints(cfg.ellipse_center, cfg.ellipse_semi[0], cfg.ellipse_semi[1], cfg.ellipse_points)
    return FlightPath(tuple(wps), cfg.speed, cfg.altitude, cfg.frame_rate)


def make_noise(cfg: RunConfig):
    return NoiseSpec(cfg.jitter_deg, cfg.jitter_max_hz, cfg.intensity_noise, seed=cfg.seed)


@dataclass
class Dataset:
    world: WorldMap
    camera: CameraModel
    frames: list


def simulate(cfg: RunConfig) -> Dataset:
    world = generate_world(cfg.seed, TerrainKind(cfg.kind), cfg.width, cfg.height, cfg.mpp)
    camera = make_camera(cfg)
    frames = render_flight(world, camera, make_path(cfg), make_noise(cfg))
    if cfg.max_frames is not None:
        frames = frames[: cfg.max_frames]
    return Dataset(world, camera, frames)


def write_dataset(ds: Dataset, out_dir):
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_pgm(out / "world.pgm", ds.world.raster)
    write_json(out / "world.json", {**ds.world.metadata(), "camera": ds.camera.to_dict()})
    write_tum(out / "gt.tum", [f.timestamp for f in ds.frames], [f.pose for f in ds.frames],
              header="ground truth, world_from_camera")
    index = []
    for f in ds.frames:
        name = f"{f.frame_id:06d}.pgm"
        write_pgm(out / "frames" / name, f.image)
        index.append({
            "frame_id": f.frame_id,
            "timestamp": f.timestamp,
            "image": f"frames/{name}",
            "gt_homography": np.asarray(f.gt_homography).tolist(),
        })
    write_json(out / "frames.json", index)


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta = read_json(root / "world.json")
    world = WorldMap(read_pgm(root / "world.pgm"), meta["meters_per_pixel"], tuple(meta["origin_world"]),
                     meta["seed"], TerrainKind(meta["kind"]))
    camera = CameraModel(**meta["camera"])
    ts, pos, quat = read_tum(root / "gt.tum")
    frames = []
    for rec, p, q in zip(read_json(root / "frames.json"), pos, quat):
        img = read_pgm(root / rec["image"])
        frames.append(GroundTruthFrame(rec["frame_id"], rec["timestamp"], Pose6(q, p), img,
                                       np.array(rec["gt_homography"])))
    return Dataset(world, camera, frames)


def dataset_for(cfg: RunConfig) -> Dataset:
    ds = load_dataset(cfg.dataset) if cfg.dataset else simulate(cfg)
    if cfg.max_frames is not None:
        ds.frames = ds.frames[: cfg.max_frames]
    return ds


# ---------------------------------------------------------------------------
# the pipeline


@dataclass
class RunResult:
    config: RunConfig
    frame_ids: list = field(default_factory=list)  # fused output
    poses: list = field(default_factory=list)
    vo_frame_ids: list = field(default_factory=list)  # VO output in its own frame
    vo_poses: list = field(default_factory=list)
    fixes: list = field(default_factory=list)
    fix_infos: list = field(default_factory=list)
    lba_reports: list = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)
    gt: dict = field(default_factory=dict)
    seconds: float = 0.0
    n_frames: int = 0
    aborted: Optional[str] = None
    fusion_state: Optional[FusionState] = field(default=None, repr=False)

    @property
    def hz(self):
        return self.n_frames / self.seconds if self.seconds > 0 else 0.0

    @property
    def seconds_per_frame(self):
        return self.seconds / self.n_frames if self.n_frames else 0.0

    def trajectory(self, which="fused"):
        ids, poses = {
            "fused": (self.frame_ids, self.poses),
            "vo": (self.vo_frame_ids, self.vo_poses),
            "abs": ([f.frame_id for f in self.fixes],
                    [Pose6(translation=f.position_world) for f in self.fixes]),
        }[which]
        return TrajectoryFile.from_poses([self.timestamps[i] for i in ids], poses, which)

    def gt_trajectory(self):
        ids = sorted(self.gt)
        return TrajectoryFile.from_poses([self.timestamps[i] for i in ids], [self.gt[i] for i in ids], "gt")

    def stats(self):
        """APE statistics of the fused output and both baselines."""
        out = {"hz": self.hz, "seconds": self.seconds, "n_frames": self.n_frames,
               "n_fused": len(self.frame_ids), "n_fixes": len(self.fixes), "aborted": self.aborted}
        gt = self.gt_trajectory()
        for name, align in (("fused", False), ("vo", True), ("abs", False)):
            try:
                st, _ = evaluate(self.trajectory(name), gt, align=align)
                out[name] = st.to_dict()
            except Exception as e:  # too few poses, failed association
                out[name] = None
                out[f"{name}_error"] = str(e)
        return out

    def fused_errors(self):
        gt = self.gt
        return np.array([np.linalg.norm(p.t - gt[i].t) for i, p in zip(self.frame_ids, self.poses)])


class _FixSource:
    """Produces absolute fixes for the frames that are due, in frame order."""

    def __init__(self, cfg: RunConfig, ds: Dataset):
        self.cfg = cfg
        self.ds = ds
        self.grid = partition(ds.world, (ds.camera.image_width, ds.camera.image_height), cfg.tile_duplication)
        self.state = SearchState()
        self.spec = cfg.matcher_spec
        self.altimeter = AltimeterModel(cfg.sigma_z, cfg.seed)

    def due(self, frame_id):
        return frame_id % self.cfg.fix_interval_k == 0

    def __call__(self, frame: GroundTruthFrame):
        if not self.cfg.area_prediction:
            self.state.reset()
        info = LocalizeInfo()
        fix, _ = localize(
            frame.image, frame.frame_id, self.grid, self.state, self.spec, self.altimeter,
            frame.pose.t[2], self.ds.world, frame.gt_homography, self.cfg.w_floor,
            self.cfg.workers, info,
        )
        return fix, info


def _fix_thread(source: _FixSource, frames, out: queue.Queue, stop: threading.Event):
    try:
        for f in frames:
            if stop.is_set():
                return
            if source.due(f.frame_id):
                out.put((f.frame_id, *source(f)))
    except Exception as e:  # surfaced on the consumer side
        out.put((None, e, None))


def run_pipeline(cfg: RunConfig, ds: Optional[Dataset] = None, lba_log=None, use_fixes=True) -> RunResult:
    """Run VO, absolute localization and fusion over a dataset.

    In lockstep mode everything runs on the calling thread. Otherwise absolute
    localization runs on a worker thread and fusion waits for the fix of a frame
    when it reaches that frame, so both modes consume identical fix sets.
    """
    ds = ds or dataset_for(cfg)
    res = RunResult(cfg)
    res.timestamps = {f.frame_id: f.timestamp for f in ds.frames}
    res.gt = {f.frame_id: f.pose for f in ds.frames}
    res.n_frames = len(ds.frames)
    source = _FixSource(cfg, ds)
    vo = VisualOdometry(ds.camera, cfg.vo_matcher_spec, cfg.vo_params_obj, seed=cfg.seed)
    state = FusionState(vo, cfg.fix_interval_k, cfg.with_scale, cfg.history_cap, cfg.min_spread,
                        cfg.weighted_alignment, cfg.poses_only, pairing=cfg.fix_pairing,
                        scale_from_fixes=cfg.scale_from_fixes, local_history=cfg.local_history,
                        local_extent=cfg.local_extent)
    state.diagnostics_path = lba_log
    altimeter = AltimeterModel(cfg.sigma_z, cfg.seed)

    fixq: queue.Queue = queue.Queue()
    stop = threading.Event()
    worker = None
    if not cfg.lockstep and use_fixes:
        worker = threading.Thread(target=_fix_thread, args=(source, ds.frames, fixq, stop), daemon=True)

    pending = []  # fixes waiting for the VO pose of their frame
    lost = 0
    t0 = time.perf_counter()
    if worker is not None:
        worker.start()
    try:
        for f in ds.frames:
            fid = f.frame_id
            new_kf = False
            if not vo.initialized:
                alt = apply_altitude_noise(f.pose.t[2], altimeter, fid)
                tr = vo.bootstrap(fid, f.timestamp, f.image, alt, f.gt_homography)
                new_kf = tr is not None
            else:
                try:
                    tr = vo.track(fid, f.timestamp, f.image, f.gt_homography)
                    new_kf = tr.new_keyframe is not None
                    lost = 0
                except TrackingLost:
                    lost += 1
                    if lost > cfg.max_lost_frames:
                        raise PipelineFailure(f"tracking lost for {lost} consecutive frames at frame {fid}")
                    try:
                        vo.reinitialize(fid, f.timestamp, f.image, f.gt_homography)
                        lost = 0
                    except TrackingLost:
                        pass
            if new_kf and len(vo.keyframes) >= 2:
                fused_lba(vo, state)
                vo.refit_plane()

            if use_fixes and source.due(fid):
                if worker is None:
                    fix, info = source(f)
                else:
                    got_id, fix, info = fixq.get()
                    if got_id is None:
                        raise fix
                    if got_id != fid:
                        raise PipelineFailure(f"fix stream out of order: expected {fid}, got {got_id}")
                res.fix_infos.append(info)
                if fix is not None:
                    res.fixes.append(fix)
                    pending.append(fix)
            still = []
            for fx in pending:
                if fx.frame_id in vo.frame_poses:
                    state.add_fix(fx, fusion_weight(fx, cfg.confidence_mode))
                else:
                    still.append(fx)
            pending = still

            if fid in vo.frame_poses:
                res.vo_frame_ids.append(fid)
                res.vo_poses.append(vo.vo_pose(fid))
                if state.ready:
                    res.frame_ids.append(fid)
                    res.poses.append(world_pose_of(fid, state))
    except PipelineFailure as e:
        res.aborted = str(e)
        log.warning("run aborted: %s", e)
    finally:
        stop.set()
        if worker is not None:
            worker.join(timeout=60)
    res.seconds = time.perf_counter() - t0
    res.lba_reports = state.lba_reports
    res.fusion_state = state
    return res


def write_run(res: RunResult, out_dir):
    """Write a run directory: resolved config, trajectories, fixes, stats and timing.

    Everything except ``timing.json`` is reproducible bit for bit in lockstep mode.
    The LBA log is appended during the run (see ``run_pipeline(lba_log=...)``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.config.save(out / "config.json")
    for name, fname in (("fused", "fused.tum"), ("vo", "vo.tum")):
        tr = res.trajectory(name)
        write_tum(out / fname, tr.timestamps, [Pose6(q, p) for p, q in zip(tr.positions, tr.quaternions)],
                  header=f"{name} trajectory" + (", world frame" if name == "fused" else ", VO frame"))
    gt = res.gt_trajectory()
    write_tum(out / "gt.tum", gt.timestamps, [res.gt[i] for i in sorted(res.gt)], header="ground truth")
    write_fix_csv(out / "fixes.csv", res.fixes)
    stats = res.stats()
    timing = {k: stats.pop(k) for k in ("hz", "seconds")}
    timing["seconds_per_frame"] = res.seconds_per_frame
    timing["mean_query_seconds"] = (
        float(np.mean([i.seconds for i in res.fix_infos])) if res.fix_infos else None
    )
    write_json(out / "stats.json", stats)
    write_json(out / "timing.json", timing)
    return out


# ---------------------------------------------------------------------------
# scenarios, ablations and the benchmark

# The hard scenario flies faster with stronger attitude jitter and noisier VO
# matches; the wrong-fix scenario corrupts 10% of absolute fixes by a 5 m
# (20 px) offset whose warped image no longer resembles the tile.
SCENARIOS = {
    "default": {},
    "hard": {"speed": 15.0, "jitter_deg": 4.0, "vo_matcher": {"pixel_noise": 1.0}},
    "wrong_fix": {
        "matcher": {"fault_rate": 0.1, "fault_offset_px": [20.0, 20.0], "fault_sigma_range": [0.85, 1.0]},
    },
}

TERRAINS = ("crater", "gravel", "mountain")
FREQUENCY_SWEEP = (1, 10, 50, 100)
CONFIDENCE_SWEEP = ("fixed:0.2", "fixed:0.4", "fixed:0.6", "fixed:0.8", "fixed:1.0",
                    "ssim_only", "sigma_only", "adaptive")
SWEEPS = ("frequency", "confidence", "area_prediction")


def scenario_config(name, base: Optional[RunConfig] = None, **overrides) -> RunConfig:
    """A named scenario applied on top of ``base`` (default config if omitted)."""
    if name not in SCENARIOS:
        raise InvalidArgument(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    base = base or RunConfig()
    d = base.to_dict()
    for key, val in SCENARIOS[name].items():
        d[key] = {**d[key], **val} if isinstance(val, dict) else val
    d.update(overrides)
    return RunConfig.from_dict(d)


def run_metrics(res: RunResult) -> dict:
    """One ablation cell: fused APE statistics plus speed."""
    out = {
        "status": "aborted" if res.aborted else "ok",
        "hz": res.hz,
        "seconds_per_frame": res.seconds_per_frame,
        "n_fused": len(res.frame_ids),
        "n_fixes": len(res.fixes),
    }
    if res.aborted:
        out["error"] = res.aborted
    try:
        st, _ = evaluate(res.trajectory("fused"), res.gt_trajectory())
        out.update({k: getattr(st, k) for k in ("rmse", "mean", "std", "max", "median")})
    except Exception as e:  # nothing emitted, or too little to evaluate
        out["status"] = "failed"
        out.setdefault("error", str(e))
        out.update({k: None for k in ("rmse", "mean", "std", "max", "median")})
    return out


def localization_timing(cfg: RunConfig, ds: Dataset, area_prediction: bool, max_queries=None):
    """Run absolute localization alone over the due frames; per-query time and fix positions."""
    src = _FixSource(cfg.replace(area_prediction=area_prediction), ds)
    queries = []
    for f in ds.frames:
        if not src.due(f.frame_id):
            continue
        if max_queries is not None and len(queries) >= max_queries:
            break
        fix, info = src(f)
        queries.append({
            "frame_id": f.frame_id,
            "seconds": info.seconds,
            "n_candidates": info.n_candidates,
            "position": None if fix is None else fix.position_world.tolist(),
            "tile": None if fix is None else list(fix.tile_index),
        })
    return queries, src.grid


def _area_rows(cfg, ds, max_queries=None):
    pruned, grid = localization_timing(cfg, ds, True, max_queries)
    full, _ = localization_timing(cfg, ds, False, max_queries)
    stride_m = min(grid.stride_x, grid.stride_y) * ds.world.meters_per_pixel
    agree = [
        a["position"] is not None and b["position"] is not None
        and np.linalg.norm(np.subtract(a["position"], b["position"])[:2]) <= stride_m
        for a, b in zip(pruned, full)
    ]
    rows = []
    for cell, qs in (("pruned", pruned), ("full", full)):
        t = np.array([q["seconds"] for q in qs])
        rows.append({
            "cell": cell,
            "status": "ok",
            "grid": [grid.cols, grid.rows],
            "n_queries": len(qs),
            "n_fixes": sum(q["position"] is not None for q in qs),
            "mean_query_seconds": float(t.mean()) if len(t) else None,
            "median_query_seconds": float(np.median(t)) if len(t) else None,
            "mean_candidates": float(np.mean([q["n_candidates"] for q in qs])) if qs else None,
            "agreement": float(np.mean(agree)) if agree else None,
            "stride_m": stride_m,
        })
    return rows


def ablate(cfg: RunConfig, sweep: str, ds: Optional[Dataset] = None, values=None, max_queries=None):
    """Run one ablation sweep; failed cells are recorded and the sweep continues."""
    if sweep not in SWEEPS:
        raise InvalidArgument(f"unknown sweep {sweep!r}; choose from {SWEEPS}")
    ds = ds or dataset_for(cfg)
    if sweep == "area_prediction":
        return [{"sweep": sweep, **r} for r in _area_rows(cfg, ds, max_queries)]
    if sweep == "frequency":
        cells = [(k, {"fix_interval_k": int(k)}) for k in (values or FREQUENCY_SWEEP)]
    else:
        cells = [(m, {"confidence_mode": m}) for m in (values or CONFIDENCE_SWEEP)]
    rows = []
    for cell, kw in cells:
        row = {"sweep": sweep, "cell": cell}
        try:
            row.update(run_metrics(run_pipeline(cfg.replace(**kw), ds)))
        except Exception as e:
            log.warning("cell %s=%s failed: %s", sweep, cell, e)
            row.update({"status": "failed", "error": str(e), "rmse": None})
        rows.append(row)
    return rows


def write_table(rows, out_dir, name):
    """Write rows as ``name.json`` and ``name.csv``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / f"{name}.json", rows)
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
    return out / f"{name}.json", out / f"{name}.csv"


def benchmark(cfg: Optional[RunConfig] = None, kinds=TERRAINS):
    """Fused output against the VO-only and absolute-only baselines on each terrain."""
    cfg = cfg or RunConfig()
    rows = []
    for kind in kinds:
        c = cfg.replace(kind=kind)
        ds = dataset_for(c)
        fused = run_pipeline(c, ds)
        vo_only = run_pipeline(c, ds, use_fixes=False)
        s, v = fused.stats(), vo_only.stats()
        row = {
            "kind": kind,
            "fused_rmse": s["fused"]["rmse"] if s["fused"] else None,
            "vo_rmse": v["vo"]["rmse"] if v["vo"] else None,
            "abs_rmse": s["abs"]["rmse"] if s["abs"] else None,
            "seconds": fused.seconds,
            "hz": fused.hz,
            "n_frames": fused.n_frames,
            "aborted": fused.aborted,
        }
        if None not in (row["fused_rmse"], row["vo_rmse"], row["abs_rmse"]):
            row["fused_over_vo"] = row["fused_rmse"] / row["vo_rmse"]
            row["fused_over_abs"] = row["fused_rmse"] / row["abs_rmse"]
        rows.append(row)
    return rows
