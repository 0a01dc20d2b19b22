"""Command-line front end: ``uavfair {solve,baseline,validate,sweep-energy}``.

Every run writes plain CSV tables plus one ``summary.json`` into ``--out-dir``.
Floats are printed with ``repr`` so two runs of the same scenario produce
byte-identical files; wall-clock times are only written with ``--timings``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bcd import CONVERGED, INFEASIBLE, MAX_ITERS, SolveReport, SubproblemFailure, run_baselines, solve, sweep_energy
from .initializer import initialize
from .oracle import lp_dominance, surrogate_suite
from .scenario import ConfigError, ScenarioConfig, audit_feasibility, bundled_config_path, config_from_mapping

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("uavfair")

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_MAX_ITERS, EXIT_USAGE = 0, 1, 2, 3, 64
STATUS_CODES = {CONVERGED: EXIT_OK, INFEASIBLE: EXIT_INFEASIBLE, MAX_ITERS: EXIT_MAX_ITERS}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- config


def load_scenario(args) -> ScenarioConfig:
    """Read ``--config`` (or the bundled default) and apply the command-line overrides."""
    path = Path(args.config) if args.config else bundled_config_path()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config {path}: malformed TOML: {exc}") from exc
    # the seed also places random ground stations, so it goes in before parsing
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "epsilon", None) is not None:
        data["epsilon"] = args.epsilon
    if getattr(args, "max_iters", None) is not None:
        data["max_iters"] = args.max_iters
    try:
        return config_from_mapping(data)
    except ConfigError as exc:
        raise UsageError(f"config {path}: field '{exc.field}': {exc}") from exc


# --------------------------------------------------------------------------- writers


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def trajectory_rows(report: SolveReport, cfg: ScenarioConfig):
    q, v, a = report.plan.positions, report.plan.velocities, report.plan.accelerations
    p = report.powers.p if report.powers is not None else np.full((cfg.M, cfg.N + 1), np.nan)
    for n in range(cfg.N + 1):
        for m in range(cfg.M):
            # the last sample has no outgoing acceleration
            ax, ay = (a[m, n] if n < cfg.N else (0.0, 0.0))
            yield n, m, q[m, n, 0], q[m, n, 1], v[m, n, 0], v[m, n, 1], float(ax), float(ay), p[m, n]


def schedule_rows(alpha: np.ndarray, tol: float = 1e-12):
    K, M, S = alpha.shape
    for n in range(S):
        for m in range(M):
            for k in range(K):
                if alpha[k, m, n] > tol:
                    yield n, m, k, alpha[k, m, n]


def summary_rows(report: SolveReport):
    perf, rperf, phys = report.performance, report.rounded_performance, report.physical_performance
    for k in range(perf.rate_per_gt.size):
        yield "gt", k, "rate", perf.rate_per_gt[k]
        yield "gt", k, "rate_physical", phys.rate_per_gt[k]
        yield "gt", k, "rate_rounded", rperf.rate_per_gt[k]
        yield "gt", k, "connection_time", perf.connection_time_per_gt[k]
    for m in range(perf.energy_per_uav.size):
        yield "uav", m, "energy", perf.energy_per_uav[m]


def report_summary(report: SolveReport, cfg: ScenarioConfig) -> dict:
    out = {
        "status": report.status,
        "iterations": report.iterations,
        "message": report.message,
        "mu_trace": list(report.mu_trace),
        "scenario": {"M": cfg.M, "K": cfg.K, "N": cfg.N, "seed": cfg.seed, "epsilon": cfg.epsilon,
                     "e_max": cfg.e_max, "gt_positions": cfg.gt_positions.tolist()},
        "violations": [str(v) for v in report.violations],
    }
    if report.performance is not None:
        out["relaxed"] = report.performance.to_dict()
        out["physical"] = report.physical_performance.to_dict()
        out["rounded"] = report.rounded_performance.to_dict()
    return out


def write_solve_artifacts(report: SolveReport, cfg: ScenarioConfig, out_dir: Path, timings: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = report.mu_trace
    header = ["iteration", "mu", "delta_mu"] + (["wall_ms"] if timings else [])
    rows = []
    for i, mu in enumerate(trace):
        row = [i, mu, (mu - trace[i - 1]) if i else float("nan")]
        if timings:
            row.append(1e3 * report.iteration_seconds[i - 1] if i else 0.0)
        rows.append(row)
    write_csv(out_dir / "trace.csv", header, rows)
    if report.plan is not None and report.schedule is not None:
        write_csv(out_dir / "trajectory.csv", ["n", "uav", "x", "y", "vx", "vy", "ax", "ay", "p_watts"],
                  trajectory_rows(report, cfg))
        write_csv(out_dir / "schedule.csv", ["n", "uav", "gt", "alpha"], schedule_rows(report.schedule.alpha))
        write_csv(out_dir / "schedule_rounded.csv", ["n", "uav", "gt", "alpha"],
                  schedule_rows(report.rounded_schedule.alpha))
        write_csv(out_dir / "summary.csv", ["entity", "index", "quantity", "value"], summary_rows(report))
    write_json(out_dir / "summary.json", report_summary(report, cfg))


# --------------------------------------------------------------------------- commands


def _progress(it, mu):
    log.info("iteration %d: min rate %.6f", it, mu)


def cmd_solve(args) -> int:
    cfg = load_scenario(args)
    try:
        report = solve(cfg, progress=_progress)
    except SubproblemFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_solve_artifacts(report, cfg, Path(args.out_dir), timings=args.timings)
    if report.status == INFEASIBLE:
        print(f"infeasible: {report.message}")
    else:
        print(f"{report.status} after {report.iterations} iterations: min rate {report.min_rate:.6f} bits/s/Hz")
    return STATUS_CODES[report.status]


def cmd_baseline(args) -> int:
    cfg = load_scenario(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = run_baselines(cfg)
    rows = []
    for name, b in base.items():
        for k, r in enumerate(b.performance.rate_per_gt):
            rows.append((name, k, r, b.performance.connection_time_per_gt[k]))
    write_csv(out_dir / "baselines.csv", ["baseline", "gt", "rate", "connection_time"], rows)
    write_csv(out_dir / "static_ap_position.csv", ["x", "y"], [base["static_ap"].positions[0, 0]])
    write_json(out_dir / "summary.json", {name: {"min_rate": b.min_rate, "rate_per_gt": b.performance.rate_per_gt.tolist()}
                                          for name, b in base.items()})
    for name, b in base.items():
        print(f"{name}: min rate {b.min_rate:.6f} bits/s/Hz")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_scenario(args)
    lines, ok = [], True
    for check in surrogate_suite(cfg, samples=args.samples, seed=cfg.seed):
        lines.append(check.line())
        ok &= check.passed()
    dom = lp_dominance(instances=max(1, args.samples // 5), seed=cfg.seed)
    lines.append(dom.line())
    ok &= dom.passed()
    init = initialize(cfg)
    bad = audit_feasibility(init.plan, init.schedule, None, cfg)
    lines.append(("PASS" if not bad else "FAIL") + f" initial_plan_audit: {len(bad)} violations"
                 + ("" if not bad else "; first " + str(bad[0])))
    ok &= not bad
    print("\n".join(lines))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "validate.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep_energy(args) -> int:
    cfg = load_scenario(args)
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError as exc:
        raise UsageError(f"--fractions: expected comma-separated numbers, got {args.fractions!r}") from exc
    if not fractions or any(not 0 < f for f in fractions):
        raise UsageError("--fractions: need positive fractions")
    out_dir = Path(args.out_dir)
    try:
        baseline, e_ref, points = sweep_energy(cfg, fractions)
    except ValueError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except SubproblemFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_solve_artifacts(baseline, cfg, out_dir / "unconstrained")
    rows = [("unconstrained", cfg.e_max, baseline.status, baseline.iterations, baseline.min_rate)]
    for p in points:
        write_solve_artifacts(p.report, cfg.with_(e_max=p.e_max), out_dir / f"fraction_{p.fraction:g}")
        rows.append((f"{p.fraction:g}", p.e_max, p.report.status, p.report.iterations, p.report.min_rate))
    write_csv(out_dir / "sweep.csv", ["fraction", "e_max", "status", "iterations", "min_rate"], rows)
    write_json(out_dir / "summary.json", {"reference_energy": e_ref,
                                          "points": [dict(zip(["fraction", "e_max", "status", "iterations", "min_rate"], r))
                                                     for r in rows]})
    for r in rows:
        print(f"{r[0]:>13}: e_max {r[1]:.1f} J, {r[2]}, min rate {r[4]:.6f}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavfair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="scenario TOML (default: bundled scenario)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out-dir", default=out_default, help="output directory (default: %(default)s)")

    def algorithm(p):
        p.add_argument("--epsilon", type=float, help="stopping threshold on the relative gain")
        p.add_argument("--max-iters", type=int, help="iteration cap")

    p = sub.add_parser("solve", help="optimize trajectories, schedule and powers")
    common(p, "out")
    algorithm(p)
    p.add_argument("--timings", action="store_true", help="add a wall_ms column to trace.csv")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("baseline", help="static access point and unoptimized circles")
    common(p, "out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("validate", help="run the surrogate, LP and audit checks")
    common(p, None)
    p.add_argument("--samples", type=int, default=1000, help="samples per surrogate check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep-energy", help="re-solve under fractions of the unconstrained energy")
    common(p, "out")
    algorithm(p)
    p.add_argument("--fractions", default="0.9,0.6,0.3", help="comma-separated (default: %(default)s)")
    p.set_defaults(func=cmd_sweep_energy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on bad usage; 2 means infeasible here
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples", 1) < 1:
        print("error: --samples must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
