"""eps-sweeps of the fast system, comparison with the limit system, rate fits
and the acceptance checks declared in an experiment plan."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentPlan
from .diagnostics import (
    RateReport,
    fit_rate,
    lp_norm_spacetime,
    records_spacetime_norm,
    spacetime_lp,
)
from .fast_solver import integrate_fast
from .kinetics import DualityCheck, check_duality_condition, phi, predation
from .limit_solver import integrate_limit
from .states import Trajectory
from .svg import rate_svg

log = logging.getLogger(__name__)

TIME_MATCH_RTOL = 1e-9
DISSIPATION_TOL = 1e-12
MAX_PRINCIPLE_TOL = 1e-10


class GridMismatchError(ValueError):
    """Trajectories live on different grids or emission times."""


# ---------------------------------------------------------------- trajectory comparisons

def _check_times(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or not np.allclose(a, b, rtol=0.0, atol=TIME_MATCH_RTOL * max(1.0, abs(a[-1]))):
        raise GridMismatchError("trajectories have different emission times")


def _paired_norm(states_a, states_b, fa, fb, grid, p: float, t0: float, restrict: int = 1) -> float:
    ts, vals = [], []
    for a, b in zip(states_a, states_b):
        if a.t < t0:
            continue
        fbv = fb(b)
        if restrict > 1:
            fbv = b.grid.restrict(fbv, restrict)
        ts.append(a.t)
        vals.append(grid.integrate(np.abs(fa(a) - fbv) ** p))
    return spacetime_lp(ts, vals, p)


def compare_to_limit(fast: Trajectory, limit: Trajectory, t0: float = 0.0, prm=None) -> dict[str, float]:
    """L^2(Q_T) distances between a fast run and a limit run.

    Returns ``N`` = ||N^eps - N||, ``P`` = ||(ps+ph) - P|| and ``ph`` =
    ||ph^eps - phi(N, P)||; ``phi`` uses the fast run's parameters (or ``prm``).
    """
    if len(fast) < 2 or len(limit) < 2:
        raise ValueError("both trajectories need at least two snapshots")
    if fast.grid != limit.grid:
        raise GridMismatchError(f"grids differ: {fast.grid} vs {limit.grid}")
    _check_times(fast.times, limit.times)
    prm = prm if prm is not None else fast.params
    if prm is None:
        raise ValueError("parameters are needed to evaluate phi(N, P)")
    g = fast.grid
    fs, ls = fast.states, limit.states
    return {
        "N": _paired_norm(fs, ls, lambda s: s.N, lambda s: s.N, g, 2.0, t0),
        "P": _paired_norm(fs, ls, lambda s: s.ps + s.ph, lambda s: s.P, g, 2.0, t0),
        "ph": _paired_norm(fs, ls, lambda s: s.ph, lambda s: phi(s.N, s.P, prm), g, 2.0, t0),
    }


def self_convergence(coarse: Trajectory, fine: Trajectory, extract, t0: float = 0.0) -> float:
    """||u_(dt,h) - R u_(dt/2,h/2)||_(L^2(Q_T)) with R the 2:1 cell average.

    For first-order-in-time schemes this difference estimates the coarse
    run's discretisation error.
    """
    if fine.grid != coarse.grid.refined(2):
        raise GridMismatchError("fine run must use the coarse grid refined by 2")
    _check_times(coarse.times, fine.times)
    return _paired_norm(coarse.states, fine.states, extract, extract, coarse.grid, 2.0, t0, restrict=2)


# ---------------------------------------------------------------- jobs

def _fast_job(plan: ExperimentPlan, eps: float, refine: int = 1) -> Trajectory:
    prm = plan.params_for(eps)
    grid = plan.grid.refined(refine) if refine > 1 else plan.grid
    cfg = plan.solver.refined(refine) if refine > 1 else plan.solver
    init = plan.initial.fast_state(grid, prm, plan.seed)
    return integrate_fast(init, cfg, prm, beta=plan.beta_for(eps), raise_errors=False)


def _limit_job(plan: ExperimentPlan, refine: int = 1) -> Trajectory:
    grid = plan.grid.refined(refine) if refine > 1 else plan.grid
    cfg = plan.solver.refined(refine) if refine > 1 else plan.solver
    init = plan.initial.limit_state(grid, plan.params, plan.seed)
    return integrate_limit(init, cfg, plan.params, raise_errors=False)


def _call(job):
    fn, args = job
    return fn(*args)


def resolve_jobs(requested: int | None, plan: ExperimentPlan) -> int:
    """CLI value first, then ``FASTLIM_THREADS``, then the plan."""
    if requested is not None:
        n = requested
    elif os.environ.get("FASTLIM_THREADS"):
        try:
            n = int(os.environ["FASTLIM_THREADS"])
        except ValueError:
            raise ValueError(f"FASTLIM_THREADS must be an integer, got {os.environ['FASTLIM_THREADS']!r}") from None
    else:
        n = plan.jobs
    if n < 1:
        raise ValueError(f"job count must be >= 1, got {n}")
    return n


def _run_jobs(jobs: list, n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as ex:
        return list(ex.map(_call, jobs))


# ---------------------------------------------------------------- results

@dataclass
class EpsResult:
    eps: float
    beta: float
    ok: bool
    error: str | None
    residual: float | None
    summary: dict
    limit_errors: dict | None = None
    used_in_fit: bool = False


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass
class SweepReport:
    plan: ExperimentPlan
    results: list[EpsResult]
    rate: RateReport | None
    fit_error: str | None
    limit_summary: dict | None
    limit_error: str | None
    self_conv: dict | None
    duality: DualityCheck | None
    checks: list[Check] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[float]:
        return [r.eps for r in self.results if not r.ok]

    def residuals(self) -> list[float]:
        return [r.residual for r in self.results if r.ok]

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def residual_norm(traj: Trajectory, prm, p: float, t0: float = 0.0) -> float:
    """||alpha ps N/(xi ps+1) - gamma ph||_(L^p(Q_T)) from the per-step records."""
    key = {2.0: "manifold_l2sq", 4.0 / 3.0: "manifold_l43"}.get(p)
    if key is not None:
        return records_spacetime_norm(traj.records, key, p, t0)
    return lp_norm_spacetime(traj, lambda s: predation(s.N, s.ps, prm) - prm.gamma * s.ph, p, t0)


def _strictly_decreasing(vals) -> bool:
    return len(vals) >= 2 and all(b < a for a, b in zip(vals, vals[1:]))


def run_sweep(plan: ExperimentPlan, out_dir=None, jobs: int | None = None,
              keep_trajectories: bool = False) -> SweepReport:
    """Run every eps of the plan (plus limit and refined runs), fit the rate,
    evaluate the plan's acceptance checks and write all artifacts.

    Failed eps-runs are reported and left out of the fit. With ``out_dir``
    (or the plan's output directory) set, CSV and SVG files are written.
    """
    n_workers = resolve_jobs(jobs, plan)
    out_dir = Path(out_dir) if out_dir is not None else plan.out_dir
    job_list = [(_fast_job, (plan, e)) for e in plan.eps]
    if plan.compare_limit:
        job_list.append((_limit_job, (plan,)))
        if plan.self_convergence:
            job_list.append((_fast_job, (plan, plan.eps[-1], 2)))
            job_list.append((_limit_job, (plan, 2)))
    log.info("plan %s: %d jobs on %d workers", plan.name, len(job_list), n_workers)
    outputs = _run_jobs(job_list, n_workers)
    fast_trajs = outputs[: len(plan.eps)]
    limit = outputs[len(plan.eps)] if plan.compare_limit else None
    fine_fast = fine_limit = None
    if plan.compare_limit and plan.self_convergence:
        fine_fast, fine_limit = outputs[len(plan.eps) + 1:]

    p = plan.norm_exponent
    results = []
    for eps, traj in zip(plan.eps, fast_trajs):
        prm = plan.params_for(eps)
        res = EpsResult(eps, plan.beta_for(eps), traj.error is None, traj.error, None, traj.summary)
        if res.ok:
            res.residual = residual_norm(traj, prm, p, plan.t0)
            if limit is not None and limit.error is None:
                res.limit_errors = compare_to_limit(traj, limit, plan.t0, prm)
        results.append(res)

    rate, fit_error = None, None
    ok_samples = [(r.eps, r.residual) for r in results if r.ok and r.residual > 0]
    try:
        rate = fit_rate(ok_samples, drop_plateau=True)
        rate = RateReport(rate.samples, rate.slope, rate.intercept, rate.r_squared, rate.plateau_detected,
                          rate.fit_range_used, failures=[r.eps for r in results if not r.ok])
        for r in results:
            r.used_in_fit = r.eps in rate.fit_range_used
    except ValueError as exc:
        fit_error = str(exc)

    self_conv = None
    if fine_fast is not None:
        coarse_fast = fast_trajs[-1]
        if coarse_fast.error or fine_fast.error or limit.error or fine_limit.error:
            self_conv = {"error": "; ".join(filter(None, (coarse_fast.error, fine_fast.error,
                                                          limit.error, fine_limit.error)))}
        else:
            ef = self_convergence(coarse_fast, fine_fast, lambda s: s.N, plan.t0)
            el = self_convergence(limit, fine_limit, lambda s: s.N, plan.t0)
            self_conv = {"fast_N": ef, "limit_N": el, "estimate": ef + el}

    duality = None
    if plan.c_mr is not None:
        duality = check_duality_condition(plan.params, plan.c_mr, plan.q0_prime)

    report = SweepReport(
        plan=plan,
        results=results,
        rate=rate,
        fit_error=fit_error,
        limit_summary=limit.summary if limit is not None else None,
        limit_error=limit.error if limit is not None else None,
        self_conv=self_conv,
        duality=duality,
    )
    report.checks = evaluate_acceptance(report, fast_trajs, limit)
    if keep_trajectories:
        report.trajectories = {"fast": dict(zip(plan.eps, fast_trajs)), "limit": limit,
                               "fine_fast": fine_fast, "fine_limit": fine_limit}
    if out_dir is not None:
        report.files = write_artifacts(report, Path(out_dir), fast_trajs, limit)
    return report


def evaluate_acceptance(report: SweepReport, fast_trajs, limit) -> list[Check]:
    plan, acc = report.plan, report.plan.acceptance
    checks = []
    n_fail = len(report.failures)
    checks.append(Check("all_runs_completed", n_fail, 0, n_fail == 0,
                        "; ".join(f"eps={r.eps:g}: {r.error}" for r in report.results if not r.ok)))
    if acc.min_slope is not None:
        slope = report.rate.slope if report.rate else float("nan")
        checks.append(Check("fitted_slope", slope, acc.min_slope,
                            report.rate is not None and slope >= acc.min_slope, report.fit_error or ""))
    if acc.residual_strictly_decreasing:
        res = [r.residual for r in report.results if r.ok]
        ok = n_fail == 0 and _strictly_decreasing(res)
        worst = max((b / a for a, b in zip(res, res[1:])), default=float("nan"))
        checks.append(Check("residual_strictly_decreasing", worst, 1.0, ok, "max successive ratio"))
    if plan.compare_limit:
        errs = [r.limit_errors["N"] for r in report.results if r.limit_errors]
        if acc.limit_error_monotone:
            ok = report.limit_error is None and len(errs) == len(plan.eps) and _strictly_decreasing(errs)
            worst = max((b / a for a, b in zip(errs, errs[1:])), default=float("nan"))
            checks.append(Check("limit_error_decreasing", worst, 1.0, ok, report.limit_error or "max successive ratio"))
        if acc.self_convergence_factor is not None:
            sc = report.self_conv or {}
            if "estimate" in sc and errs and report.results[-1].limit_errors:
                err = report.results[-1].limit_errors["N"]
                ratio = err / sc["estimate"] if sc["estimate"] > 0 else float("inf")
                checks.append(Check("limit_error_vs_self_convergence", ratio, acc.self_convergence_factor,
                                    ratio <= acc.self_convergence_factor,
                                    f"||N^eps-N||={err:.3e}, estimate={sc['estimate']:.3e}"))
            else:
                checks.append(Check("limit_error_vs_self_convergence", float("nan"),
                                    acc.self_convergence_factor, False, sc.get("error", "not computed")))
    summaries = [t.summary for t in fast_trajs] + ([limit.summary] if limit is not None else [])
    if acc.positivity:
        mins = [v for s in summaries for k, v in s.items() if k.startswith("min_") and k != "min_dissipation"]
        lo = min(mins) if mins else float("nan")
        checks.append(Check("positivity", lo, 0.0, bool(mins) and lo >= 0.0, "smallest field value"))
    if acc.mass_inequality:
        viol = sum(int(s.get("mass_inequality_violations", 0)) for s in summaries)
        checks.append(Check("mass_inequality", viol, 0, viol == 0, "steps violating the predator mass inequality"))
    if acc.max_principle:
        n_in = plan.initial.fast_state(plan.grid, plan.params, plan.seed).N
        bound = max(float(n_in.max()), 1.0 / plan.params.eta) + MAX_PRINCIPLE_TOL
        top = max(s.get("max_N", -np.inf) for s in summaries)
        checks.append(Check("max_principle", top, bound, top <= bound, "max N over all steps"))
    if acc.dissipation_nonnegative:
        dmin = min((s.get("min_dissipation", np.inf) for s in summaries[: len(fast_trajs)]), default=np.inf)
        checks.append(Check("dissipation_nonnegative", dmin, -DISSIPATION_TOL, dmin >= -DISSIPATION_TOL,
                            "min dissipation (beta=0) over all steps"))
    return checks


# ---------------------------------------------------------------- artifacts

RATE_COLUMNS = (
    "eps", "status", "residual", "used_in_fit", "err_N", "err_P", "err_ph", "beta",
    "min_N", "min_ps", "min_ph", "max_N", "min_dissipation", "mass_inequality_violations",
    "max_mass_defect_ratio", "m_estimate", "energy_initial", "energy_growth", "error",
)


def _eps_tag(i: int, eps: float) -> str:
    return f"eps_{i:02d}_{eps:.0e}".replace("+", "")


def _nan(v):
    return float("nan") if v is None else v


def rate_rows(report: SweepReport) -> list[list]:
    rows = []
    for r in report.results:
        le = r.limit_errors or {}
        s = r.summary
        rows.append([
            float(r.eps), "ok" if r.ok else "failed", float(_nan(r.residual)), int(r.used_in_fit),
            float(_nan(le.get("N"))), float(_nan(le.get("P"))), float(_nan(le.get("ph"))), float(r.beta),
            *[float(_nan(s.get(k))) for k in RATE_COLUMNS[8:18]],
            r.error or "",
        ])
    return rows


def write_artifacts(report: SweepReport, out: Path, fast_trajs, limit) -> list[Path]:
    plan = report.plan
    files = [io.write_csv(out / "rates.csv", RATE_COLUMNS, rate_rows(report))]
    fit_rows = [("norm_exponent", float(plan.norm_exponent)), ("t0", float(plan.t0))]
    if report.rate is not None:
        rr = report.rate
        fit_rows += [
            ("slope", rr.slope), ("intercept", rr.intercept), ("r_squared", rr.r_squared),
            ("plateau_detected", int(rr.plateau_detected)),
            ("fit_range_used", " ".join(io.fmt(e) for e in rr.fit_range_used)),
        ]
        files.append(io.atomic_write_text(out / "rates.svg", rate_svg(rr, title=f"{plan.name}: slow-manifold residual")))
    else:
        fit_rows.append(("error", report.fit_error))
    fit_rows.append(("failed_eps", " ".join(io.fmt(e) for e in report.failures)))
    files.append(io.write_csv(out / "fit.csv", ("key", "value"), fit_rows))
    if report.self_conv:
        files.append(io.write_csv(out / "self_convergence.csv", ("key", "value"),
                                  sorted(report.self_conv.items())))
    if report.duality is not None:
        d = report.duality
        files.append(io.write_csv(out / "duality.csv", ("key", "value"), [
            ("holds", int(d.holds)), ("ratio", d.ratio), ("margin", d.margin),
            ("c_mr", d.c_mr), ("q0_prime", d.q0_prime), ("q0", d.q0),
        ]))
    files.append(io.write_csv(out / "acceptance.csv", ("check", "value", "threshold", "passed", "note"),
                              [(c.name, float(c.value), float(c.threshold), int(c.passed), c.note)
                               for c in report.checks]))
    runs = [(_eps_tag(i, e), t, plan.params_for(e)) for i, (e, t) in enumerate(zip(plan.eps, fast_trajs))]
    if limit is not None:
        runs.append(("limit", limit, plan.params))
    for tag, traj, prm in runs:
        files += write_run(out / tag, traj, prm, plan.snapshots)
    return files


def write_run(directory: Path, traj: Trajectory, prm, snapshots: str = "all") -> list[Path]:
    """Diagnostics stream, summary and snapshots of one trajectory."""
    sink = io.DiagnosticsCSV(directory / "diagnostics.csv")
    for rec in traj.records:
        sink(rec["t"], rec)
    files = [sink.close()]
    summary = sorted((k, float(v)) for k, v in traj.summary.items())
    summary.append(("error", traj.error or ""))
    files.append(io.write_csv(directory / "summary.csv", ("key", "value"), summary))
    states = {"all": traj.states, "final": traj.states[-1:], "none": []}[snapshots]
    if states:
        offset = len(traj.states) - len(states)
        for i, st in enumerate(states, start=offset):
            files.append(io.write_snapshot(directory / "snapshots" / f"state_{i:05d}.csv", st, prm))
    return files
