"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import crlb, estimator, harness, traces
from . import geometry as geo
from .errors import BiDopplerError, ConfigurationError

EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> harness.SimConfig:
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.profile_config(args.profile)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        cfg = harness.config_from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    results = harness.run_monte_carlo(cfg, workers=args.workers)
    if args.out.endswith(".jsonl"):
        harness.write_results_jsonl(results, args.out)
    else:
        harness.write_results(results, args.out)
    rows, notes = harness.summarize(results)
    for row in rows:
        print(f"{row['method']}: median eps_fd {row['median']:.5g} over {row['n']} trials "
              f"({row['failures']} failed)")
    for note in notes:
        print(note, file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    frames, meta = traces.read_trace(args.trace)
    carrier = args.carrier_hz or meta.get("carrier_hz")
    if carrier is None:
        raise ConfigurationError("carrier frequency missing: pass --carrier-hz or set it in the trace meta")
    wavelength = geo.SPEED_OF_LIGHT / float(carrier)
    cfg = estimator.EstimatorConfig(
        f_max=args.f_max, averaging=args.averaging,
        smoothing_window=args.smooth, smoothing_order=args.smooth_order,
    )
    results = estimator.estimate_trace(frames, cfg, wavelength, args.window, args.hop,
                                       args.method, args.speed)
    estimator.write_estimates(results, args.out)
    failed = sum(r.theta is None for r in results)
    print(f"{len(results)} windows, {failed} without an estimate")
    return 0


def cmd_crlb(args) -> int:
    if args.profile != "fig4":
        raise ConfigurationError("only the fig4 amplitude profile defines a bound grid")
    noise = crlb.heatmap_noise(args.sigma_w_sq, args.gain)
    rows = crlb.crlb_grid(crlb.HEATMAP_ALPHA_T, noise, crlb.HEATMAP_GAP, args.points, args.form)
    crlb.write_grid_csv(rows, args.out)
    finite = [r["crlb_sqrt_hz"] for r in rows if math.isfinite(r["crlb_sqrt_hz"])]
    print(f"{len(rows)} grid points, median sqrt bound {np.median(finite):.4g} Hz")
    return 0


def _parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"grid entry {item!r} is not name=v1,v2,...")
        name, values = item.split("=", 1)
        grid[name] = [json.loads(v) for v in values.split(",")]
    return grid


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = _parse_grid(args.param)
    if not grid:
        raise ConfigurationError("sweep needs at least one --param")
    rows, notes = harness.sweep(cfg, grid, args.metric, args.workers)
    harness.write_summary(rows, args.out, list(grid))
    for note in notes:
        print(note, file=sys.stderr)
    print(f"{len(rows)} summary rows")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bidoppler", description="Bistatic Doppler simulation and estimation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sim_args(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--profile", default="60GHz", choices=sorted(harness.PROFILES))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("simulate", help="Monte Carlo run -> results CSV or JSONL")
    sim_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="trace JSONL -> per-window estimates JSONL")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=float, default=16e-3, help="seconds")
    sp.add_argument("--hop", type=float, help="seconds (default: window)")
    sp.add_argument("--method", default="nls", choices=["nls", "closed_form", "imu"])
    sp.add_argument("--speed", type=float, help="TX speed for the imu method [m/s]")
    sp.add_argument("--carrier-hz", type=float)
    sp.add_argument("--f-max", type=float, default=1000.0)
    sp.add_argument("--averaging", default="uniform", choices=list(estimator.AVERAGING_MODES))
    sp.add_argument("--smooth", type=float, help="Savitzky-Golay window [s]")
    sp.add_argument("--smooth-order", type=int, default=2)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("crlb", help="bound over a static-AoD grid -> CSV")
    sp.add_argument("--profile", default="fig4")
    sp.add_argument("--out", required=True)
    sp.add_argument("--points", type=int, default=121)
    sp.add_argument("--form", default="derived", choices=list(crlb.FORMS))
    sp.add_argument("--sigma-w-sq", type=float, default=1e-2)
    sp.add_argument("--gain", type=float, default=10.0)
    sp.set_defaults(func=cmd_crlb)

    sp = sub.add_parser("sweep", help="grid of configurations -> summary CSV")
    sim_args(sp)
    sp.add_argument("--param", action="append", default=[], help="name=v1,v2 (JSON values)")
    sp.add_argument("--metric", default="eps_fd")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("selftest", help="run the built-in invariant checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BiDopplerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
