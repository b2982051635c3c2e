import numpy as np
import pytest

from uavloc.map_index import partition
from uavloc.plotting import plot_ablation, plot_errors, plot_run, plot_tile_grid, plot_trajectories
from uavloc.pipeline import run_pipeline, simulate

from tests.conftest import small_config

PNG = b"\x89PNG\r\n\x1a\n"


def is_png(path):
    return path.exists() and path.read_bytes()[:8] == PNG


def test_trajectory_and_error_figures(tmp_path, rng):
    xyz = np.cumsum(rng.normal(0, 1, (50, 3)), axis=0)
    p = plot_trajectories({"gt": xyz, "fused": xyz + 0.1, "abs": xyz[::5]}, tmp_path / "a" / "t.png", "demo")
    assert is_png(p)
    t = np.arange(50) * 0.1
    assert is_png(plot_errors({"fused": (t, np.full(50, 0.2)), "abs": (t[::5], np.ones(10))}, tmp_path / "e.png"))


def test_tile_grid_figure(tmp_path, crater_1024):
    grid = partition(crater_1024, 256, 0.5)
    assert is_png(plot_tile_grid(grid, tmp_path / "g.png", highlight=[(1, 1), (2, 1)], center=(1, 1)))


def test_ablation_figure_with_a_failed_cell(tmp_path):
    rows = [{"cell": 1, "rmse": 0.4}, {"cell": 10, "rmse": 0.2}, {"cell": 100, "rmse": None}]
    assert is_png(plot_ablation(rows, tmp_path / "abl.png", title="frequency"))
    # every cell failed
    assert is_png(plot_ablation([{"cell": "x", "rmse": None}], tmp_path / "none.png"))


def test_run_figures(tmp_path):
    cfg = small_config(max_frames=40, lockstep=True)
    res = run_pipeline(cfg, simulate(cfg))
    paths = plot_run(res, tmp_path)
    assert paths and all(is_png(p) for p in paths)
    assert paths[0].name == "trajectory.png"


def test_trajectories_need_three_columns(tmp_path):
    with pytest.raises(ValueError):
        plot_trajectories({"gt": np.zeros((3, 2))}, tmp_path / "x.png")
