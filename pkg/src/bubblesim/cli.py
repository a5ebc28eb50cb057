"""Command line entry point: ``bubblesim <subcommand> [options]``.

Exit codes: 0 success, 1 invalid configuration or input, 2 aborted simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import deterministic as det
from .errors import ConfigError, DegenerateCoupling, ParseError, TooShort
from .runner import (
    dump_config,
    load_config,
    load_config_file,
    read_trajectory_csv,
    resolve_threads,
    run_ensemble,
    run_simulation,
    write_report_json,
    write_trajectory_csv,
)
from .stylized import analyze

EXIT_OK, EXIT_INVALID, EXIT_ABORTED = 0, 1, 2


def _config(args):
    cfg = load_config_file(args.config) if args.config else load_config({})
    changes = {}
    for key in ("seed", "runs", "record_every"):
        v = getattr(args, key, None)
        if v is not None:
            changes[key] = v
    if getattr(args, "out", None):
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_simulate(args) -> int:
    cfg = _config(args)
    traj = run_simulation(cfg, args.run_index)
    fh, close = _open_out(cfg.out)
    try:
        write_trajectory_csv(traj, fh)
    finally:
        if close:
            fh.close()
    if traj.aborted is not None:
        print(f"aborted at step {traj.aborted.t}: {traj.aborted.cause}: {traj.aborted.message}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _config(args)
    threads = resolve_threads(args.threads)
    summary = run_ensemble(cfg, threads, out_dir=args.trajectories)
    fh, close = _open_out(cfg.out)
    try:
        write_report_json(summary, fh)
    finally:
        if close:
            fh.close()
    if not summary.reports:
        return EXIT_ABORTED
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    try:
        traj = read_trajectory_csv(args.trajectory)
    except (OSError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    report = analyze(
        traj.price,
        traj.kappa,
        cfg.params.p,
        w_noise=traj.w_noise,
        w_rational=traj.w_rational,
        returns=traj.ret,
        opinion=traj.s,
        max_lag=args.max_lag,
        tail_fraction=args.tail_fraction,
        min_length=args.min_length,
    )
    fh, close = _open_out(cfg.out)
    try:
        write_report_json(report, fh)
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_fixed_points(args) -> int:
    cfg = _config(args)
    kappa = cfg.params.mu_kappa if args.kappa is None else args.kappa
    fps = det.find_fixed_points(cfg.params, kappa, wealth_ratio=args.wealth_ratio)
    doc = {
        "kappa": kappa,
        "fixed_points": [
            {
                "s_star": fp.s_star,
                "h_star": fp.h_star,
                "admissible": fp.admissible,
                "stability": fp.stability,
                "spectral_radius": fp.spectral_radius,
                "residual": fp.residual,
            }
            for fp in fps
        ],
    }
    fh, close = _open_out(cfg.out)
    try:
        fh.write(json.dumps(doc, indent=2) + "\n")
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_deterministic(args) -> int:
    cfg = _config(args)
    kappa = cfg.params.mu_kappa if args.kappa is None else args.kappa
    path = det.deterministic_trajectory(
        cfg.params, kappa, args.steps, s0=args.s0, h0=args.h0, freeze_wealth_ratio=args.freeze_wealth_ratio
    )
    fh, close = _open_out(cfg.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "price", "s", "h", "w_rational", "w_noise"))
        every = cfg.record_every
        for i in range(len(path.t)):
            if i % every and i != len(path.t) - 1:
                continue
            w.writerow([str(int(path.t[i]))] + [format(float(c[i]), ".17g")
                                                for c in (path.price, path.s, path.h, path.w_rational, path.w_noise)])
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_config(args) -> int:
    print(dump_config(_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblesim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, runs=False, threads=False, record=False):
        p.add_argument("--config", metavar="PATH", help="flat JSON config; missing keys use defaults")
        p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
        if seed:
            p.add_argument("--seed", type=int, metavar="N")
        if runs:
            p.add_argument("--runs", type=int, metavar="N")
        if threads:
            p.add_argument("--threads", type=int, metavar="N", help="worker processes (BUBBLESIM_THREADS overrides)")
        if record:
            p.add_argument("--record-every", dest="record_every", type=int, metavar="N")

    p = sub.add_parser("simulate", help="one run, trajectory CSV")
    common(p, record=True)
    p.add_argument("--run-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="many runs, JSON summary")
    common(p, runs=True, threads=True, record=True)
    p.add_argument("--trajectories", metavar="DIR", help="also write run_NNNN.csv files here")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("analyze", help="JSON report from a trajectory CSV")
    common(p, seed=False)
    p.add_argument("trajectory", metavar="CSV")
    p.add_argument("--max-lag", type=int, default=100)
    p.add_argument("--tail-fraction", type=float, default=0.05)
    p.add_argument("--min-length", type=int, default=5)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fixed-points", help="fixed points of the reduced map and their stability")
    common(p, seed=False)
    p.add_argument("--kappa", type=float)
    p.add_argument("--wealth-ratio", type=float, default=1.0)
    p.set_defaults(func=cmd_fixed_points)

    p = sub.add_parser("deterministic", help="shock-free trajectory CSV")
    common(p, seed=False, record=True)
    p.add_argument("--kappa", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--s0", type=float, default=0.0)
    p.add_argument("--h0", type=float, default=0.0)
    p.add_argument("--freeze-wealth-ratio", action="store_true")
    p.set_defaults(func=cmd_deterministic)

    p = sub.add_parser("config", help="print the effective configuration")
    common(p, runs=True, record=True)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DegenerateCoupling, TooShort, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
