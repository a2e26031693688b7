"""Command-line entry point: batch runs, report generation, live serving,
and the solver micro-benchmark.

Exit codes: 0 success, 2 unknown scenario / bad arguments, 3 I/O failure.
The config file path can also be supplied via the TUNNELPILOT_CONFIG
environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .config import Config, ConfigError, load_config
from .sim import (builtin_scenarios, build_controller, centerline_progress,
                  run_scenario, SimulationLoop)

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_IO = 3


def _load_cfg(path: str | None) -> Config:
    path = path or os.environ.get("TUNNELPILOT_CONFIG")
    if not path:
        return Config()
    return load_config(path)


def _scenario(name: str, cfg: Config):
    scenarios = builtin_scenarios()
    if name not in scenarios:
        raise KeyError(name)
    sc = scenarios[name]
    return replace(sc, noise=cfg.sim)


def cmd_run(args) -> int:
    try:
        cfg = _load_cfg(args.config)
        sc = _scenario(args.scenario, cfg)
    except KeyError:
        known = ", ".join(sorted(builtin_scenarios()))
        print(f"unknown scenario {args.scenario!r} (known: {known})", file=sys.stderr)
        return EXIT_BAD_ARGS
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    log = run_scenario(sc, stack=build_controller(cfg), seed=args.seed,
                       duration=args.duration, timing=args.timing)
    try:
        csv_path, sidecar_path = log.write(args.out)
    except OSError as exc:
        print(f"cannot write logs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(csv_path)
    print(sidecar_path)
    return EXIT_OK


def _parse_log(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: i for i, name in enumerate(header)}
    return cols, rows


def cmd_report(args) -> int:
    try:
        cols, rows = _parse_log(args.log)
    except OSError as exc:
        print(f"cannot read log: {exc}", file=sys.stderr)
        return EXIT_IO
    if not rows:
        print("empty log")
        return EXIT_OK
    get = lambda name: np.array([float(r[cols[name]]) for r in rows])
    t = get("t")
    summary = {
        "ticks": len(rows),
        "duration_s": float(t[-1] - t[0]) + (float(t[1] - t[0]) if len(t) > 1 else 0.0),
        "collisions": int(get("collision").sum()),
        "min_distance_m": {k: float(get(k).min())
                           for k in ("d_xp", "d_xm", "d_yp", "d_ym", "d_zp")},
        "final_position": {"x": float(get("x")[-1]), "y": float(get("y")[-1]),
                           "z": float(get("z")[-1])},
        "statuses": sorted({r[cols["status"]] for r in rows}),
    }
    solve = get("solve_ms")
    if solve.max() > 0.0:
        summary["solve_ms"] = {"mean": float(solve.mean()),
                               "p99": float(np.percentile(solve, 99)),
                               "max": float(solve.max())}
    sidecar_path = os.path.splitext(args.log)[0] + ".json"
    if os.path.exists(sidecar_path):
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        summary["scenario"] = sidecar.get("scenario")
        summary["seed"] = sidecar.get("seed")
        sc = builtin_scenarios().get(sidecar.get("scenario", ""), None)
        if sc is not None and sc.centerline is not None:
            x, y = get("x"), get("y")
            p0 = centerline_progress(sc.centerline, x[0], y[0])
            pf = centerline_progress(sc.centerline, x[-1], y[-1])
            summary["centerline_progress_m"] = float(pf - p0)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        try:
            os.makedirs(args.out, exist_ok=True)
            base = os.path.join(args.out,
                                os.path.splitext(os.path.basename(args.log))[0])
            dist_keys = ["d_xp", "d_xm", "d_yp", "d_ym", "d_zp"]
            with open(base + "_distances.csv", "w", encoding="utf-8") as fh:
                fh.write("t," + ",".join(dist_keys) + "\n")
                for r in rows:
                    fh.write(",".join([r[cols["t"]]] + [r[cols[k]] for k in dist_keys]) + "\n")
            with open(base + "_headrate.csv", "w", encoding="utf-8") as fh:
                fh.write("t,psi_dot_r\n")
                for r in rows:
                    fh.write(f"{r[cols['t']]},{r[cols['psi_dot_r']]}\n")
        except OSError as exc:
            print(f"cannot write report slices: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


def bench_control_steps(cfg: Config, ticks: int = 1000, warmup: int = 40,
                        seed: int = 1) -> dict:
    """Time control_step over live straight-tunnel contexts.

    Runs the closed loop (so each call sees realistic warm starts and
    measurements); the first `warmup` ticks are excluded to amortize JIT
    compilation.
    """
    sc = _scenario("straight_tunnel", cfg)
    loop = SimulationLoop(sc, stack=build_controller(cfg), seed=seed)
    times = []
    for k in range(warmup + ticks):
        rec = loop.tick()
        if k >= warmup:
            times.append(rec.solve_ms)
    arr = np.array(times)
    return {
        "calls": int(arr.size),
        "horizon": cfg.nmpc.horizon,
        "ts": cfg.nmpc.ts,
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p99_ms": float(np.percentile(arr, 99)),
        "max_ms": float(arr.max()),
    }


def cmd_bench(args) -> int:
    try:
        cfg = _load_cfg(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    stats = bench_control_steps(cfg, ticks=args.ticks, warmup=args.warmup,
                                seed=args.seed)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import TelemetryServer

    try:
        cfg = _load_cfg(args.config)
        sc = _scenario(args.scenario, cfg)
    except KeyError:
        print(f"unknown scenario {args.scenario!r}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    console = args.console_dir
    if console is None:
        repo_root = os.path.dirname(os.path.dirname(
            os.path.dirname(os.path.abspath(__file__))))
        guess = os.path.join(repo_root, "frontend", "dist")
        console = guess if os.path.isdir(guess) else None
    server = TelemetryServer(sc, stack=build_controller(cfg), seed=args.seed,
                             port=args.port, rate=args.rate, console_dir=console)
    print(f"telemetry: tcp://0.0.0.0:{args.port}  ws://0.0.0.0:{args.port + 1}"
          + (f"  console: http://0.0.0.0:{args.port + 2}" if console else ""),
          flush=True)
    server.serve_forever()
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tunnelpilot",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario batch-mode and write logs")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default="runs")
    p_run.add_argument("--duration", type=float, default=None)
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--timing", action="store_true",
                       help="record wall-clock solve times (breaks byte-level "
                            "log reproducibility)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="summarize a run log")
    p_rep.add_argument("log")
    p_rep.add_argument("--out", default=None,
                       help="also write plot-ready distance/heading CSV slices")
    p_rep.set_defaults(func=cmd_report)

    p_srv = sub.add_parser("serve", help="run live and serve telemetry/commands")
    p_srv.add_argument("--port", type=int, default=8700)
    p_srv.add_argument("--scenario", default="straight_tunnel")
    p_srv.add_argument("--seed", type=int, default=0)
    p_srv.add_argument("--rate", type=float, default=1.0,
                       help="real-time factor (2 = twice as fast)")
    p_srv.add_argument("--config", default=None)
    p_srv.add_argument("--console-dir", default=None)
    p_srv.set_defaults(func=cmd_serve)

    p_bench = sub.add_parser("bench", help="solver micro-benchmark")
    p_bench.add_argument("--ticks", type=int, default=1000)
    p_bench.add_argument("--warmup", type=int, default=40)
    p_bench.add_argument("--seed", type=int, default=1)
    p_bench.add_argument("--config", default=None)
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
