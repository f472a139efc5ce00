"""Command-line driver: simulate, track, eval, sweep, reproject.

Exit codes: 0 success, 1 usage, 2 missing or invalid input, 3 numerical
failure. One JSON config file may hold a ``sim`` section, a shared ``track``
section, per-method ``cvpf``/``cskpf`` sections and an ``eval`` section;
command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .association import MeasurementSet
from .config import PRESETS, RunConfig, load_config
from .errors import (AllZeroWeights, CalibrationMissing, ConfigError, DegenerateRays, DegenerateRig,
                     FactorizationFailure, InsufficientFrames, SingularInnovation, TrackingError)
from .evaluate import EvalConfig, evaluate, save_metrics
from .geometry import load_calibration, project_points, save_calibration
from .manager import TrackSet, run
from .sim import SimConfig, load_truth, simulate

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "SWARMTRACK_WORKERS"
METRICS = ("integrity", "continuity", "precision", "idsw_total")

_NUMERIC_ERRORS = (SingularInnovation, FactorizationFailure, AllZeroWeights, DegenerateRays,
                   DegenerateRig, np.linalg.LinAlgError, FloatingPointError)
_INPUT_ERRORS = (CalibrationMissing, ConfigError, InsufficientFrames, FileNotFoundError,
                 json.JSONDecodeError, KeyError, ValueError, TypeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def sim_config(raw: dict, overrides: dict | None = None) -> SimConfig:
    d = dict(raw.get("sim", {}))
    if "seed" in raw and "seed" not in d:
        d["seed"] = raw["seed"]
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return SimConfig.from_dict(d)


def eval_config(raw: dict, overrides: dict | None = None) -> EvalConfig:
    d = dict(raw.get("eval", {}))
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(d) - {"d0", "first_frame", "last_frame"}
    if unknown:
        raise ConfigError(f"unknown eval keys: {sorted(unknown)}")
    try:
        return EvalConfig(**d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _track_overrides(args) -> dict:
    return {"method": args.method, "seed": args.seed, "n_particles": args.n_particles}


# ---------------------------------------------------------------- commands

def cmd_simulate(config_path, out_dir, overrides: dict | None = None) -> dict:
    """Write ``measurements.json``, ``truth.csv`` and ``calibration.json``."""
    cfg = sim_config(_read_json(config_path), overrides)
    res = simulate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"measurements": out / "measurements.json", "truth": out / "truth.csv",
             "calibration": out / "calibration.json"}
    res.measurements.save(paths["measurements"])
    res.truth.save(paths["truth"])
    save_calibration(res.cameras, paths["calibration"])
    return {k: str(v) for k, v in paths.items()}


def cmd_track(measurements_path, calibration_path, out_path, config_path=None,
              preset: str = "sim", overrides: dict | None = None, manifest_path=None) -> TrackSet:
    """Track a measurement file and write the TrackSet CSV plus a run manifest."""
    cameras = load_calibration(calibration_path)
    cfg = load_config(config_path, preset, overrides)
    ms = MeasurementSet.load(measurements_path)
    missing = set(ms.view_ids) - {c.view_id for c in cameras}
    if missing:
        raise ConfigError(f"views {sorted(missing)} have no calibration")
    ms = MeasurementSet.load(measurements_path, [c.view_id for c in cameras])
    tracks = run(ms, cameras, cfg)
    tracks.save(out_path)
    params = cfg.to_dict()
    manifest = {
        "method": params.pop("method"),
        "seed": params.pop("seed"),
        "params": params,
        "preset": preset,
        "inputs": {"measurements": str(measurements_path), "calibration": str(calibration_path),
                   "config": None if config_path is None else str(config_path)},
        "output": str(out_path),
    }
    _write_json(manifest, manifest_path or f"{out_path}.manifest.json")
    return tracks


def cmd_eval(truth_path, tracks_path, out_path=None, cfg: EvalConfig = EvalConfig()) -> dict:
    metrics = evaluate(load_truth(truth_path), TrackSet.load(tracks_path).trajectories, cfg)
    if out_path is not None:
        save_metrics(metrics, out_path)
    return metrics


def _sweep_task(task):
    n, repeat, seed, sim_dict, run_dicts, eval_cfg = task
    sim_cfg = SimConfig.from_dict({**sim_dict, "n_objects": n, "seed": seed})
    res = simulate(sim_cfg)
    gts = res.truth.trajectories()
    rows = []
    for method, run_dict in run_dicts.items():
        cfg = RunConfig.from_dict({**run_dict, "seed": seed})
        tracks = run(res.measurements, res.cameras, cfg)
        m = evaluate(gts, tracks.trajectories, eval_cfg)
        rows.append((n, method, repeat, seed, m))
    return rows


def _workers(requested) -> int:
    if requested is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                requested = int(env)
            except ValueError as exc:
                raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
        else:
            requested = os.cpu_count() or 1
    if requested < 1:
        raise ConfigError("worker count must be >= 1")
    return requested


def sweep_runs(config_path, n_list, repeats: int, methods=None, workers=None,
               preset: str = "sim", overrides: dict | None = None):
    """Per-run metrics for every (N, repeat, method); repeat ``r`` uses seed
    ``base_seed + r``."""
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if not n_list or min(n_list) < 1:
        raise ConfigError("N list must hold positive object counts")
    raw = _read_json(config_path)
    base = load_config(config_path, preset, overrides)
    methods = list(methods or [base.method])
    for m in methods:
        if m not in ("cvpf", "cskpf"):
            raise ConfigError(f"unknown method {m!r}")
    sim_dict = {k: v for k, v in raw.get("sim", {}).items() if k not in ("n_objects", "seed")}
    SimConfig.from_dict(sim_dict)
    run_dicts = {m: load_config(config_path, preset, {**(overrides or {}), "method": m}).to_dict()
                 for m in methods}
    ev = eval_config(raw)
    if ev.first_frame is None:
        # skip the two bootstrap frames
        ev = EvalConfig(ev.d0, 3, ev.last_frame)
    tasks = [(int(n), r, base.seed + r, sim_dict, run_dicts, ev)
             for n in n_list for r in range(repeats)]
    nw = min(_workers(workers), len(tasks))
    if nw == 1:
        chunks = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    return [row for chunk in chunks for row in chunk]


def summarize_sweep(runs) -> list[dict]:
    """Mean and population std of each metric per (N, method)."""
    groups: dict = {}
    for n, method, _, _, m in runs:
        groups.setdefault((n, method), []).append(m)
    out = []
    for (n, method), ms in groups.items():
        row = {"n_objects": n, "method": method, "repeats": len(ms)}
        for key in METRICS:
            vals = np.array([np.nan if m[key] is None else m[key] for m in ms], dtype=float)
            ok = vals[~np.isnan(vals)]
            row[f"{key}_mean"] = float(ok.mean()) if len(ok) else None
            row[f"{key}_std"] = float(ok.std()) if len(ok) else None
        out.append(row)
    return out


def write_sweep_csv(rows, path) -> None:
    cols = ["n_objects", "method", "repeats"] + [f"{k}_{s}" for k in METRICS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row[c] is None else (f"{row[c]:.9g}" if isinstance(row[c], float)
                                                   else row[c]) for c in cols])


def cmd_sweep(config_path, n_list, repeats, out_path, methods=None, workers=None,
              preset: str = "sim", overrides: dict | None = None) -> list[dict]:
    rows = summarize_sweep(sweep_runs(config_path, n_list, repeats, methods, workers,
                                      preset, overrides))
    write_sweep_csv(rows, out_path)
    return rows


def _outline(pixels: np.ndarray) -> list:
    """Blob pixels with at least one 4-neighbour outside the blob."""
    keys = {(int(u), int(v)) for u, v in pixels}
    edge = [(u, v) for u, v in sorted(keys, key=lambda p: (p[1], p[0]))
            if any(q not in keys for q in ((u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)))]
    return [list(p) for p in edge]


def reproject(tracks: TrackSet, cameras, measurements: MeasurementSet, first=None, last=None) -> dict:
    """Per-frame, per-view blob outlines and reprojected track points."""
    frames = measurements.frames
    first = frames[0] if first is None and frames else first
    last = frames[-1] if last is None and frames else last
    out = []
    if first is None or last is None:
        return {"frames": out}
    for f in range(int(first), int(last) + 1):
        live = [(t.id, t.position_at(f)) for t in tracks]
        live = [(i, p) for i, p in live if p is not None]
        views = []
        for cam, vf in zip(cameras, measurements[f]):
            blobs = [{"id": int(m.id),
                      "bbox": [int(x) for x in vf.bboxes[k]],
                      "centroid": [float(c) for c in m.centroid],
                      "outline": _outline(m.pixels)} for k, m in enumerate(vf.measurements)]
            points = []
            if live:
                uv, depth = project_points(cam, np.array([p for _, p in live]))
                for (tid, _), q, d in zip(live, uv, depth):
                    if d > 0:
                        points.append({"id": int(tid), "uv": [float(q[0]), float(q[1])],
                                       "depth": float(d)})
            views.append({"view_id": int(cam.view_id), "blobs": blobs, "tracks": points})
        out.append({"frame": f, "views": views})
    return {"frames": out}


def cmd_reproject(tracks_path, calibration_path, measurements_path, out_path,
                  first=None, last=None) -> dict:
    cameras = load_calibration(calibration_path)
    ms = MeasurementSet.load(measurements_path, [c.view_id for c in cameras])
    data = reproject(TrackSet.load(tracks_path), cameras, ms, first, last)
    with open(out_path, "w") as fh:
        json.dump(data, fh, separators=(",", ":"))
        fh.write("\n")
    return data


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swarmtrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic swarm and its camera views")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-objects", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)

    def track_flags(q):
        q.add_argument("--config")
        q.add_argument("--preset", default="sim", choices=sorted(PRESETS))
        q.add_argument("--method", choices=["cvpf", "cskpf"])
        q.add_argument("--seed", type=int)
        q.add_argument("--n-particles", type=int)

    t = sub.add_parser("track", help="track objects in a measurement file")
    t.add_argument("--measurements", required=True)
    t.add_argument("--calibration", required=True)
    t.add_argument("--out", required=True, help="TrackSet CSV")
    t.add_argument("--manifest", help="run manifest path (default: OUT.manifest.json)")
    track_flags(t)

    e = sub.add_parser("eval", help="score tracks against ground truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--tracks", required=True)
    e.add_argument("--config")
    e.add_argument("--d0", type=float)
    e.add_argument("--first-frame", type=int)
    e.add_argument("--last-frame", type=int)
    e.add_argument("--out", help="metrics JSON (default: stdout)")

    w = sub.add_parser("sweep", help="repeat simulate/track/eval over object counts")
    w.add_argument("--n", type=int, nargs="+", required=True, dest="n_list")
    w.add_argument("--repeats", type=int, required=True)
    w.add_argument("--methods", nargs="+", choices=["cvpf", "cskpf"])
    w.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV})")
    w.add_argument("--out", required=True, help="summary CSV")
    track_flags(w)

    r = sub.add_parser("reproject", help="overlay data of tracks reprojected into each view")
    r.add_argument("--tracks", required=True)
    r.add_argument("--calibration", required=True)
    r.add_argument("--measurements", required=True)
    r.add_argument("--first", type=int)
    r.add_argument("--last", type=int)
    r.add_argument("--out", required=True)
    return p


def _dispatch(args) -> None:
    if args.command == "simulate":
        paths = cmd_simulate(args.config, args.out,
                             {"n_objects": args.n_objects, "seed": args.seed,
                              "duration": args.duration})
        print(json.dumps(paths))
    elif args.command == "track":
        t0 = time.perf_counter()
        tracks = cmd_track(args.measurements, args.calibration, args.out, args.config,
                           args.preset, _track_overrides(args), args.manifest)
        print(f"{len(tracks)} trajectories in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    elif args.command == "eval":
        cfg = eval_config(_read_json(args.config), {"d0": args.d0, "first_frame": args.first_frame,
                                                    "last_frame": args.last_frame})
        metrics = cmd_eval(args.truth, args.tracks, args.out, cfg)
        if args.out is None:
            print(json.dumps(metrics, sort_keys=True))
    elif args.command == "sweep":
        cmd_sweep(args.config, args.n_list, args.repeats, args.out, args.methods, args.workers,
                  args.preset, _track_overrides(args))
    elif args.command == "reproject":
        cmd_reproject(args.tracks, args.calibration, args.measurements, args.out,
                      args.first, args.last)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrackingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
