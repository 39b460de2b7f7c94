"""Command line entry point.

    viscontact run --config PATH --out DIR [--mode M] [--steps N] [--snapshot-times t1,t2,...]

Exit codes: 0 all checks pass, 1 some check fails, 2 solver non-convergence,
3 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import experiments as ex
from . import output
from .config import MODES, ConfigError, RunConfig, ValidationError, load_config
from .solver import NoConvergence

log = logging.getLogger("viscontact")

EXIT_OK, EXIT_FAILED, EXIT_NOCONV, EXIT_CONFIG = 0, 1, 2, 3


def _times(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscontact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the configured experiment")
    r.add_argument("--config", help="TOML configuration (omitted keys use the reference values)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--steps", type=int, help="number of time steps N")
    r.add_argument("--snapshot-times", type=_times, help="comma-separated times for field snapshots")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_run(outcome: ex.RunOutcome, cfg: RunConfig, out_dir: Path) -> dict:
    d = out_dir / outcome.name
    d.mkdir(parents=True, exist_ok=True)
    traj = outcome.traj
    output.emit_timeseries(traj, d / "timeseries.csv", f2y=cfg.f2y, report=outcome.report)
    snaps = []
    for t in cfg.snapshot_times:
        i = traj.step_of_time(t)
        path = output.emit_snapshot(traj, i, d / f"snapshot_step{i + 1:04d}.txt")
        snaps.append({"time": float(traj.times[i]), "file": path.name})
    return {
        "t_c": outcome.t_c,
        "max_penetration": outcome.max_penetration,
        "wall_clock": traj.wall_clock,
        "inner_iterations": int(traj.iterations.sum()),
        "checks": outcome.checks,
        "snapshots": snaps,
    }


def _write_lipschitz(study: ex.LipschitzOutcome, out_dir: Path) -> dict:
    d = out_dir / "lipschitz"
    d.mkdir(parents=True, exist_ok=True)
    cols = ["scale", "dF", "df2", "numerator", "denominator", "ratio"]
    with (d / "ratios.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in study.rows:
            w.writerow([output.fmt(r[c]) for c in cols])
    return {"ratios": study.rows, "spread": study.spread, "equivariance_error": study.equivariance_error,
            "checks": study.checks}


def run(cfg: RunConfig, out_dir) -> tuple[int, dict]:
    """Execute ``cfg`` and write all outputs; returns the exit code and the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary: dict = {"config": cfg.to_dict(), "runs": {}, "acceptance": {}}
    outcomes = {}
    if cfg.mode in ("elastic", "both"):
        outcomes["elastic"] = ex.execute(cfg, "elastic", 0.0)
    if cfg.mode in ("viscoelastic", "both"):
        outcomes["viscoelastic"] = ex.execute(cfg, "viscoelastic", cfg.b)
    for name, o in outcomes.items():
        summary["runs"][name] = _write_run(o, cfg, out_dir)
        summary[f"t_c_{name}"] = o.t_c
        for key, ok in o.checks.items():
            summary["acceptance"][f"{name}.{key}"] = ok
    if "elastic" in outcomes and "viscoelastic" in outcomes:
        summary["acceptance"]["relaxation_ordering"] = ex.relaxation_ordering(outcomes["elastic"],
                                                                              outcomes["viscoelastic"])
    if cfg.mode == "lipschitz":
        study = ex.lipschitz_study(cfg)
        summary["lipschitz"] = _write_lipschitz(study, out_dir)
        for key, ok in study.checks.items():
            summary["acceptance"][f"lipschitz.{key}"] = ok
    summary["all_passed"] = all(summary["acceptance"].values())
    summary["wall_clock"] = time.perf_counter() - t0
    output.emit_summary(summary, out_dir / "summary.json")
    return (EXIT_OK if summary["all_passed"] else EXIT_FAILED), summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {}
        if args.mode:
            overrides["mode"] = args.mode
        if args.steps is not None:
            overrides["n_steps"] = args.steps
        if args.snapshot_times is not None:
            overrides["snapshot_times"] = args.snapshot_times
        cfg = cfg.with_(**overrides) if overrides else cfg
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, summary = run(cfg, args.out)
    except NoConvergence as exc:
        print(f"solver did not converge at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    for key, ok in summary["acceptance"].items():
        print(f"{'PASS' if ok else 'FAIL'} {key}")
    return code


if __name__ == "__main__":
    sys.exit(main())
