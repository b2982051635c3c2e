"""Figures for runs, tile grids and ablation tables, rendered straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

COLORS = {"gt": "0.2", "fused": "tab:blue", "vo": "tab:orange", "abs": "tab:red"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trajectories(trajectories: dict, path, title=None):
    """Top-down view of named trajectories ({label: TrajectoryFile or (N, 3) array})."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4.5))
        for label, tr in trajectories.items():
            xyz = np.asarray(getattr(tr, "positions", tr), float)
            if xyz.ndim != 2 or xyz.shape[1] != 3:
                raise ValueError(f"{label}: expected (N, 3) positions, got shape {xyz.shape}")
            if label == "abs":
                ax.plot(xyz[:, 0], xyz[:, 1], ".", ms=2.5, color=COLORS["abs"], label=label)
            else:
                ax.plot(xyz[:, 0], xyz[:, 1], color=COLORS.get(label), label=label)
        ax.set_xlabel("x east [m]")
        ax.set_ylabel("y north [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_errors(series: dict, path, title=None):
    """Position error against time; ``series`` maps label -> (timestamps, errors)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        for label, (t, e) in series.items():
            style = "." if label == "abs" else "-"
            ax.plot(t, e, style, ms=2.5, color=COLORS.get(label), label=label)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("position error [m]")
        ax.set_yscale("log")
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_run(result, out_dir):
    """Trajectory and error figures for a RunResult; returns the written paths."""
    out_dir = Path(out_dir)
    gt = result.gt_trajectory()
    trs = {"gt": gt}
    series = {}
    gt_pos = {i: result.gt[i].t for i in result.gt}
    for name, ids, poses in (
        ("fused", result.frame_ids, result.poses),
        ("abs", [f.frame_id for f in result.fixes], [f.position_world for f in result.fixes]),
    ):
        if not ids:
            continue
        xyz = np.array([getattr(p, "t", p) for p in poses])
        trs[name] = xyz
        err = np.linalg.norm(xyz - np.array([gt_pos[i] for i in ids]), axis=1)
        series[name] = (np.array([result.timestamps[i] for i in ids]), err)
    paths = [plot_trajectories(trs, out_dir / "trajectory.png")]
    if series:
        paths.append(plot_errors(series, out_dir / "errors.png"))
    return paths


def plot_tile_grid(grid, path, highlight=(), center=None):
    """Raster with tile outlines; ``highlight`` tiles are filled, ``center`` tile is outlined."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        if grid.raster is not None:
            ax.imshow(grid.raster, cmap="gray", interpolation="nearest")
        hl = {tuple(h) for h in highlight}
        for t in grid.tiles():
            x0, y0 = t.origin_px
            edge = "tab:red" if center is not None and tuple(t.grid_index) == tuple(center) else "tab:cyan"
            ax.add_patch(plt.Rectangle((x0, y0), t.width, t.height, fill=False, lw=0.4, ec=edge, alpha=0.6))
            if tuple(t.grid_index) in hl:
                ax.add_patch(plt.Rectangle((x0, y0), t.width, t.height, fc="tab:orange", alpha=0.15))
        ax.set_xlim(0, grid.raster.shape[1] if grid.raster is not None else None)
        ax.set_ylim(grid.raster.shape[0] if grid.raster is not None else None, 0)
        ax.set_title(f"{grid.cols} x {grid.rows} tiles, stride {grid.stride_x} px")
        ax.grid(False)
        return _save(fig, path)


def plot_ablation(rows, path, x="cell", y="rmse", title=None):
    """Bar chart of one metric across the cells of an ablation table; failed cells are hatched."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(rows) + 1.5), 3.0))
        labels = [str(r.get(x)) for r in rows]
        vals = [r.get(y) if r.get(y) is not None else np.nan for r in rows]
        ok = np.isfinite(vals)
        top = np.nanmax(vals) if ok.any() else 1.0
        heights = np.where(ok, vals, top)
        bars = ax.bar(range(len(rows)), heights, color="tab:blue")
        for b, good in zip(bars, ok):
            if not good:
                b.set_facecolor("none")
                b.set_hatch("//")
                b.set_edgecolor("tab:red")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(y)
        if title:
            ax.set_title(title)
        return _save(fig, path)
