import dataclasses

import numpy as np
import pytest

from uavloc.errors import InvalidArgument
from uavloc.evaluation import TrajectoryFile
from uavloc.absolute_loc import read_fix_csv
from uavloc.io import read_json
from uavloc.pipeline import (
    RunConfig,
    ablate,
    fusion_weight,
    load_dataset,
    parse_confidence_mode,
    run_metrics,
    run_pipeline,
    scenario_config,
    simulate,
    write_dataset,
    write_run,
)

from tests.conftest import small_config

L_PATH = [[50.0, 100.0], [110.0, 100.0], [110.0, 180.0]]


@pytest.fixture(scope="module")
def l_config():
    return small_config(waypoints=L_PATH, max_frames=None, lockstep=True)


@pytest.fixture(scope="module")
def l_dataset(l_config):
    return simulate(l_config)


@pytest.fixture(scope="module")
def l_run(l_config, l_dataset):
    return run_pipeline(l_config, l_dataset)


# -- configuration -----------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = small_config(matcher={"pixel_noise": 0.5}, confidence_mode="fixed:0.4", vo_params={"window": 4})
    cfg.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [
    {"kind": "lava"},
    {"fix_interval_k": 0},
    {"confidence_mode": "fixed:1.5"},
    {"confidence_mode": "median"},
    {"tile_duplication": 1.0},
    {"speed": 0.0},
    {"vo_params": {"no_such_knob": 1}},
    {"matcher": {"kind": "neural"}},
    {"dataset": "/no/such/dir"},
])
def test_config_validation(bad):
    with pytest.raises(InvalidArgument):
        RunConfig(**bad)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"sped": 3})
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(InvalidArgument):
        RunConfig.load(tmp_path / "broken.json")


def test_confidence_modes():
    assert parse_confidence_mode("adaptive") == ("adaptive", None)
    assert parse_confidence_mode("fixed:0.6") == ("fixed", 0.6)
    assert parse_confidence_mode(0.2) == ("fixed", 0.2)
    fix = dataclasses.make_dataclass("F", ["confidence", "ssim", "mean_sigma"])(0.56, 0.7, 0.8)
    assert fusion_weight(fix, "adaptive") == 0.56
    assert fusion_weight(fix, "ssim_only") == 0.7
    assert fusion_weight(fix, "sigma_only") == 0.8
    assert fusion_weight(fix, "fixed:1.0") == 1.0


def test_scenarios_merge_onto_the_base():
    hard = scenario_config("hard", small_config(vo_matcher={"num_keypoints": 200}))
    assert hard.speed == 15.0 and hard.jitter_deg == 4.0
    assert hard.vo_matcher == {"num_keypoints": 200, "pixel_noise": 1.0}
    wrong = scenario_config("wrong_fix", max_frames=10)
    assert wrong.matcher["fault_rate"] == 0.1 and wrong.max_frames == 10
    with pytest.raises(InvalidArgument):
        scenario_config("windy")


# -- datasets ----------------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    ds = simulate(small_config(max_frames=5))
    write_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert np.array_equal(back.world.raster, ds.world.raster)
    assert back.world.meters_per_pixel == ds.world.meters_per_pixel
    assert back.camera.to_dict() == ds.camera.to_dict()
    for a, b in zip(ds.frames, back.frames):
        assert a.frame_id == b.frame_id and a.timestamp == b.timestamp
        assert np.array_equal(a.image, b.image)
        assert np.allclose(a.gt_homography, b.gt_homography, rtol=1e-12)
        assert np.allclose(a.pose.t, b.pose.t, atol=1e-6)


def test_max_frames_truncates():
    assert len(simulate(small_config(max_frames=7)).frames) == 7


# -- runs --------------------------------------------------------------------


def test_run_produces_fused_output(l_run):
    assert l_run.aborted is None
    assert len(l_run.frame_ids) > 30 and len(l_run.fixes) >= 10
    st_ = l_run.stats()
    assert st_["fused"]["rmse"] < 2.0 and st_["abs"] is not None and st_["vo"] is not None
    # fused output starts once the paired trajectories are spread laterally
    assert l_run.frame_ids == sorted(l_run.frame_ids)


def test_lockstep_runs_are_bit_identical(l_config, l_dataset, l_run):
    again = run_pipeline(l_config, l_dataset)
    assert again.frame_ids == l_run.frame_ids
    assert all(np.array_equal(a.matrix(), b.matrix()) for a, b in zip(again.poses, l_run.poses))
    assert again.lba_reports == l_run.lba_reports


def test_threaded_run_matches_lockstep(l_config, l_dataset, l_run):
    threaded = run_pipeline(l_config.replace(lockstep=False), l_dataset)
    assert threaded.frame_ids == l_run.frame_ids
    diff = max(np.abs(a.matrix() - b.matrix()).max() for a, b in zip(threaded.poses, l_run.poses))
    assert diff <= 1e-9


def test_vo_only_run_has_no_fused_output(l_config, l_dataset):
    res = run_pipeline(l_config, l_dataset, use_fixes=False)
    assert not res.frame_ids and not res.fixes and len(res.vo_frame_ids) > 100
    assert run_metrics(res)["status"] == "failed"


def test_lost_tracking_aborts_the_run(l_config, l_dataset):
    ds = dataclasses.replace(l_dataset, frames=list(l_dataset.frames[:60]))
    flat = np.full_like(ds.frames[0].image, 128)
    ds.frames[30:] = [dataclasses.replace(f, image=flat) for f in ds.frames[30:]]
    res = run_pipeline(l_config.replace(vo_matcher={"kind": "classical"}, max_lost_frames=5), ds,
                       use_fixes=False)
    assert res.aborted is not None and "tracking lost" in res.aborted


def test_write_run_outputs_parse(tmp_path, l_run):
    out = write_run(l_run, tmp_path / "run")
    assert RunConfig.load(out / "config.json") == l_run.config
    fused = TrajectoryFile.load(out / "fused.tum")
    assert len(fused) == len(l_run.frame_ids)
    assert np.allclose(fused.positions, [p.t for p in l_run.poses], atol=1e-5)
    assert len(TrajectoryFile.load(out / "gt.tum")) == l_run.n_frames
    assert len(read_fix_csv(out / "fixes.csv")) == len(l_run.fixes)
    stats = read_json(out / "stats.json")
    assert stats["n_fixes"] == len(l_run.fixes) and "hz" not in stats
    assert read_json(out / "timing.json")["seconds"] > 0


def test_ablation_records_failed_cells(l_config, l_dataset):
    rows = ablate(l_config, "frequency", l_dataset, values=[10, 5000])
    assert [r["cell"] for r in rows] == [10, 5000]
    assert rows[0]["status"] == "ok" and rows[0]["rmse"] > 0
    assert rows[1]["status"] == "failed" and rows[1]["rmse"] is None
    with pytest.raises(InvalidArgument):
        ablate(l_config, "weather", l_dataset)


def test_area_ablation_rows(l_config, l_dataset):
    rows = ablate(l_config, "area_prediction", l_dataset, max_queries=4)
    pruned, full = rows
    assert pruned["cell"] == "pruned" and full["cell"] == "full"
    assert pruned["n_queries"] == full["n_queries"] == 4
    assert full["mean_candidates"] == 49.0
    assert pruned["mean_candidates"] < full["mean_candidates"]
    assert 0.0 <= pruned["agreement"] <= 1.0
