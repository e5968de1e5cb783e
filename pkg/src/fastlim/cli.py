"""Command-line entry point: ``fastlim sweep | run-fast | run-limit | rates``.

Exit codes: 0 success (for ``sweep``: every acceptance check passed),
1 a run failed or a check did not pass, 2 invalid input.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from importlib import resources
from pathlib import Path

from . import io
from .config import ConfigError, load_config, load_plan
from .diagnostics import RateReport, fit_rate
from .fast_solver import integrate_fast
from .limit_solver import integrate_limit
from .sweep import resolve_jobs, run_sweep, write_run
from .svg import rate_svg, series_svg

log = logging.getLogger("fastlim")

BUILTIN_PLANS = ("default-xi1", "default-xi0")


def builtin_plan_path(name: str) -> Path:
    return Path(str(resources.files("fastlim") / "data" / f"{name.replace('-', '_')}.yaml"))


def _plan_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and arg in BUILTIN_PLANS:
        return builtin_plan_path(arg)
    return p


def cmd_sweep(args) -> int:
    plan = load_plan(_plan_path(args.plan))
    jobs = resolve_jobs(args.jobs, plan)
    out = Path(args.out) if args.out else plan.out_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output.dir in the plan")
    report = run_sweep(plan, out_dir=out, jobs=jobs)
    print(f"plan {plan.name}: {len(plan.eps)} eps values, norm L^{plan.norm_exponent:.4g}(Q_T)")
    print(f"{'eps':>10} {'status':>7} {'residual':>12} {'||N^eps-N||':>12}  fit")
    for r in report.results:
        err = r.limit_errors["N"] if r.limit_errors else math.nan
        res = r.residual if r.residual is not None else math.nan
        print(f"{r.eps:>10.3g} {'ok' if r.ok else 'FAILED':>7} {res:>12.4e} {err:>12.4e}  {'*' if r.used_in_fit else ''}")
    if report.rate is not None:
        rr = report.rate
        print(f"slope {rr.slope:.4f}  r^2 {rr.r_squared:.4f}  plateau {'yes' if rr.plateau_detected else 'no'}")
    else:
        print(f"rate fit failed: {report.fit_error}")
    if report.duality is not None:
        d = report.duality
        print(f"duality condition: {'holds' if d.holds else 'fails'} (ratio {d.ratio:.4g}, margin {d.margin:.4g})")
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.6g} (threshold {c.threshold:.6g}) {c.note}")
    print(f"artifacts written to {out}")
    return 0 if report.passed else 1


def _run_single(args, kind: str) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    if kind == "fast":
        traj = integrate_fast(cfg.fast_state(), cfg.solver, cfg.params, beta=cfg.beta, raise_errors=False)
        keys = ("manifold_max", "min_N", "min_ps", "min_ph")
    else:
        traj = integrate_limit(cfg.limit_state(), cfg.solver, cfg.params, raise_errors=False)
        keys = ("min_N", "min_P", "max_N", "max_P")
    files = write_run(out, traj, cfg.params, cfg.snapshots)
    if cfg.diagnostics is not None:
        sink = io.DiagnosticsCSV(out / "diagnostics.csv", cfg.diagnostics)
        for rec in traj.records:
            sink(rec["t"], rec)
        sink.close()
    series = {k: ([r["t"] for r in traj.records], [r[k] for r in traj.records]) for k in keys}
    if len(traj.records) >= 2:
        files.append(io.atomic_write_text(out / "diagnostics.svg", series_svg(series, title=f"{kind} run")))
    for k, v in sorted(traj.summary.items()):
        print(f"{k:>30} {v:.6g}")
    print(f"{len(files)} files written to {out}")
    if traj.error:
        print(f"run aborted: {traj.error}", file=sys.stderr)
        return 1
    return 0


def cmd_run_fast(args) -> int:
    return _run_single(args, "fast")


def cmd_run_limit(args) -> int:
    return _run_single(args, "limit")


def read_rate_samples(path) -> list[tuple[float, float]]:
    """(eps, residual) pairs from a CSV with those columns; failed rows are skipped."""
    rows = io.read_csv(path)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    if "eps" not in rows[0] or "residual" not in rows[0]:
        raise ConfigError(f"{path}: need columns 'eps' and 'residual'")
    out = []
    for i, row in enumerate(rows, start=2):
        if row.get("status", "ok") != "ok":
            continue
        try:
            out.append((float(row["eps"]), float(row["residual"])))
        except ValueError:
            raise ConfigError(f"{path}: bad number on row {i}") from None
    return out


def cmd_rates(args) -> int:
    samples = read_rate_samples(args.inp)
    try:
        rr: RateReport = fit_rate(samples, drop_plateau=not args.no_plateau)
    except ValueError as exc:
        print(f"rate fit failed: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path(args.inp).parent
    io.write_csv(out / "fit.csv", ("key", "value"), [
        ("slope", rr.slope), ("intercept", rr.intercept), ("r_squared", rr.r_squared),
        ("plateau_detected", int(rr.plateau_detected)),
        ("fit_range_used", " ".join(io.fmt(e) for e in rr.fit_range_used)),
    ])
    io.atomic_write_text(out / "rates.svg", rate_svg(rr))
    print(f"slope {rr.slope:.6g}  intercept {rr.intercept:.6g}  r^2 {rr.r_squared:.6g}  "
          f"points used {len(rr.fit_range_used)}/{len(rr.samples)}")
    if args.min_slope is not None and rr.slope < args.min_slope:
        print(f"[FAIL] slope {rr.slope:.4f} < {args.min_slope}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastlim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run an eps-sweep experiment plan")
    s.add_argument("--plan", required=True, help=f"plan file, or one of {', '.join(BUILTIN_PLANS)}")
    s.add_argument("--out", help="output directory (overrides output.dir)")
    s.add_argument("--jobs", type=int, help="parallel worker processes (default: FASTLIM_THREADS or plan)")
    s.set_defaults(func=cmd_sweep)

    for name, fn, what in (("run-fast", cmd_run_fast, "fast"), ("run-limit", cmd_run_limit, "limit")):
        r = sub.add_parser(name, help=f"integrate the {what} system for one configuration")
        r.add_argument("--config", required=True)
        r.add_argument("--out", help="output directory (overrides output.dir)")
        r.set_defaults(func=fn)

    r = sub.add_parser("rates", help="fit a log-log rate to an (eps, residual) CSV")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", help="directory for fit.csv and rates.svg (default: next to the input)")
    r.add_argument("--no-plateau", action="store_true", help="fit all points")
    r.add_argument("--min-slope", type=float, help="exit 1 if the fitted slope is below this")
    r.set_defaults(func=cmd_rates)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, io.SnapshotError, FileNotFoundError, ValueError) as exc:
        print(f"fastlim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
