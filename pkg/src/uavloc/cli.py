"""Command-line entry point: simulate, run, ablate, eval, tiles, match.

Exit codes: 0 success, 2 configuration error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from uavloc.errors import InvalidArgument, OutOfBounds, PipelineFailure
from uavloc.io import read_json, read_pgm, write_json

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3

log = logging.getLogger("uavloc")


def _global_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="JSON run configuration")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory")
    p.add_argument("--seed", type=int, default=d, help="overrides the config seed")
    p.add_argument("--lockstep", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="single-threaded deterministic execution")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser():
    ap = argparse.ArgumentParser(prog="uavloc", description=__doc__.splitlines()[0],
                                 parents=[_global_flags(False)])
    sub = ap.add_subparsers(dest="command", required=True)
    g = [_global_flags(True)]

    sp = sub.add_parser("simulate", parents=g, help="render a world, a flight and its frames")
    sp.add_argument("--scenario", default=None, help="named scenario preset")

    sp = sub.add_parser("run", parents=g, help="run the localization pipeline")
    sp.add_argument("--dataset", default=None, help="simulated dataset directory (default: simulate)")
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--plot", action="store_true", help="also render trajectory and error figures")

    sp = sub.add_parser("ablate", parents=g, help="run an ablation sweep")
    sp.add_argument("sweep", choices=("frequency", "confidence", "area_prediction"))
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--values", default=None, help="comma-separated cell values")
    sp.add_argument("--max-queries", type=int, default=None, help="area_prediction: cap on queries")
    sp.add_argument("--plot", action="store_true")

    sp = sub.add_parser("eval", parents=g, help="APE of a TUM trajectory against a reference")
    sp.add_argument("estimate")
    sp.add_argument("reference")
    sp.add_argument("--align", action="store_true", help="rigid alignment before the error")
    sp.add_argument("--max-dt", type=float, default=0.02)

    sp = sub.add_parser("tiles", parents=g, help="tile grid layout of a world")
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--plot", action="store_true")

    sp = sub.add_parser("match", parents=g, help="match two PGM images and report confidence")
    sp.add_argument("image_a", help="UAV image")
    sp.add_argument("image_b", help="map tile")
    sp.add_argument("--homography", default=None,
                    help="JSON file with a 3x3 a->b homography (enables the oracle matcher)")
    return ap


def load_config(args):
    from uavloc.pipeline import RunConfig, scenario_config

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "scenario", None):
        cfg = scenario_config(args.scenario, cfg)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.lockstep:
        kw["lockstep"] = True
    if args.out:
        kw["out_dir"] = str(args.out)
    if getattr(args, "dataset", None):
        kw["dataset"] = str(args.dataset)
    return cfg.replace(**kw) if kw else cfg


def _out_dir(args, cfg, default):
    return Path(args.out or cfg.out_dir or default)


def cmd_simulate(args):
    from uavloc.pipeline import simulate, write_dataset

    cfg = load_config(args)
    out = _out_dir(args, cfg, "dataset")
    ds = simulate(cfg)
    write_dataset(ds, out)
    cfg.replace(dataset=None, out_dir=None).save(out / "config.json")
    print(json.dumps({"out": str(out), "frames": len(ds.frames)}))
    return EXIT_OK


def cmd_run(args):
    from uavloc.pipeline import dataset_for, run_pipeline, write_run

    cfg = load_config(args)
    out = _out_dir(args, cfg, "run")
    out.mkdir(parents=True, exist_ok=True)
    lba = out / "lba.jsonl"
    lba.write_text("")
    res = run_pipeline(cfg, dataset_for(cfg), lba_log=lba)
    write_run(res, out)
    if args.plot:
        from uavloc.plotting import plot_run

        plot_run(res, out)
    stats = read_json(out / "stats.json")
    print(json.dumps({"out": str(out), "fused_rmse": (stats.get("fused") or {}).get("rmse"),
                      "hz": res.hz, "aborted": res.aborted}))
    return EXIT_FAILURE if res.aborted else EXIT_OK


def cmd_ablate(args):
    from uavloc.pipeline import ablate, dataset_for, write_table

    cfg = load_config(args)
    out = _out_dir(args, cfg, "ablation")
    values = None
    if args.values:
        raw = [v.strip() for v in args.values.split(",") if v.strip()]
        values = [int(v) for v in raw] if args.sweep == "frequency" else raw
    rows = ablate(cfg, args.sweep, dataset_for(cfg), values, args.max_queries)
    paths = write_table(rows, out, f"ablation_{args.sweep}")
    cfg.save(out / "config.json")
    if args.plot:
        from uavloc.plotting import plot_ablation

        y = "mean_query_seconds" if args.sweep == "area_prediction" else "rmse"
        plot_ablation(rows, out / f"ablation_{args.sweep}.png", y=y, title=args.sweep)
    print(json.dumps({"out": [str(p) for p in paths], "cells": len(rows),
                      "failed": sum(r.get("status") != "ok" for r in rows)}))
    return EXIT_OK


def cmd_eval(args):
    from uavloc.evaluation import TrajectoryFile, evaluate

    for p in (args.estimate, args.reference):
        if not Path(p).exists():
            raise InvalidArgument(f"no such trajectory file: {p}")
    est, ref = TrajectoryFile.load(args.estimate), TrajectoryFile.load(args.reference)
    stats, pairs = evaluate(est, ref, align=args.align, max_dt=args.max_dt)
    report = {"pairs": len(pairs), "aligned": bool(args.align), **stats.to_dict()}
    if args.out:
        write_json(Path(args.out) / "ape.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_tiles(args):
    from uavloc.map_index import partition
    from uavloc.pipeline import load_dataset, make_camera
    from uavloc.world_sim import TerrainKind, generate_world

    cfg = load_config(args)
    if cfg.dataset:
        ds = load_dataset(cfg.dataset)
        world, cam = ds.world, ds.camera
    else:
        world = generate_world(cfg.seed, TerrainKind(cfg.kind), cfg.width, cfg.height, cfg.mpp)
        cam = make_camera(cfg)
    grid = partition(world, (cam.image_width, cam.image_height), cfg.tile_duplication)
    layout = grid.layout()
    if args.out:
        out = Path(args.out)
        write_json(out / "tiles.json", layout)
        if args.plot:
            from uavloc.plotting import plot_tile_grid

            plot_tile_grid(grid, out / "tiles.png")
    print(json.dumps({k: v for k, v in layout.items() if k != "tiles"}))
    return EXIT_OK


def cmd_match(args):
    from uavloc.matching import MatcherSpec, confidence, match

    a, b = read_pgm(args.image_a), read_pgm(args.image_b)
    cfg_spec = {}
    if args.config:
        cfg_spec = dict(read_json(args.config).get("matcher", {}))
    gt = None
    if args.homography:
        gt = np.asarray(read_json(args.homography), float).reshape(3, 3)
        cfg_spec.setdefault("kind", "oracle")
    else:
        cfg_spec["kind"] = "classical"
    if args.seed is not None:
        cfg_spec["seed"] = args.seed
    spec = MatcherSpec.from_dict(cfg_spec)
    res = match(a, b, spec, gt)
    conf = confidence(b, a, res)
    report = {
        "num_matches": int(res.num_matches),
        "mean_sigma": float(res.mean_sigma),
        "homography": None if res.homography is None else np.asarray(res.homography).tolist(),
        "inliers": int(res.num_inliers),
        "ssim": float(conf.ssim),
        "confidence": float(conf.value),
    }
    if args.out:
        write_json(Path(args.out) / "match.json", report)
    print(json.dumps(report))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "tiles": cmd_tiles,
    "match": cmd_match,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, OutOfBounds, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineFailure as e:
        print(f"pipeline failure: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:  # anything else is a failed pipeline, not a bad config
        log.debug("unhandled", exc_info=True)
        print(f"pipeline failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
