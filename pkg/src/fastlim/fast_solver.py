"""Operator-split time integration of the three-field fast-reaction system."""
from __future__ import annotations

import logging
from typing import Iterable

import numpy as np

from . import diagnostics
from .grid import Grid, diffusion_step, explicit_dt_limit
from .kinetics import Parameters, predation
from .states import (
    BLOWUP_LIMIT,
    BlowUpError,
    FastState,
    Sink,
    SolverConfig,
    TimeStepError,
    Trajectory,
    clip_roundoff,
    emit,
)

log = logging.getLogger(__name__)

NEWTON_MAXITER = 200


class FastSolveError(RuntimeError):
    """The bracketed pointwise solve failed; indicates a bug, not bad input."""


def fast_reaction_pointwise_solve(s_total, N, ph_old, dt_over_eps, prm: Parameters):
    """Backward-Euler step of the fast searching/handling exchange at frozen N.

    Solves ``ph = ph_old + tau*(alpha*(S-ph)*N/(xi*(S-ph)+1) - gamma*ph)`` for
    ``ph`` in ``[0, S]`` with ``S = s_total`` and ``tau = dt_over_eps``, by
    Newton iteration safeguarded with bisection on the bracket ``[0, S]``.
    ``tau = inf`` returns the slow-manifold value.
    """
    S = np.asarray(s_total, dtype=float)
    N = np.asarray(N, dtype=float)
    ph0 = np.asarray(ph_old, dtype=float)
    S, N, ph0 = np.broadcast_arrays(S, N, ph0)
    tau = float(dt_over_eps)
    if tau < 0 or np.isnan(tau):
        raise ValueError(f"dt_over_eps must be >= 0, got {dt_over_eps!r}")
    if np.any(S < 0) or np.any(N < 0) or np.any(ph0 < 0) or np.any(ph0 > S * (1 + 1e-14) + 1e-300):
        raise ValueError("pointwise solve requires 0 <= ph_old <= s_total and N >= 0")
    ph0 = np.minimum(ph0, S)
    if tau == 0.0:
        return ph0.copy() if ph0.ndim else float(ph0)

    a, g, xi = prm.alpha, prm.gamma, prm.xi
    # G(ph) = w*(ph - ph0) - c*f(ph); w, c scaled so that tau = inf stays finite
    w, c = (1.0, tau) if tau <= 1.0 else (1.0 / tau, 1.0)
    aN = a * N

    def G(x):
        s = S - x
        return w * (x - ph0) - c * (aN * s / (xi * s + 1.0) - g * x)

    def dG(x):
        s = S - x
        return w + c * (aN / (xi * s + 1.0) ** 2 + g)

    lo = np.zeros_like(S)
    hi = S.copy()
    x = ph0.copy()
    tol = 1e-12 * (1.0 + S)
    active = np.ones(S.shape, dtype=bool)
    for _ in range(NEWTON_MAXITER):
        gx = G(x)
        neg = gx < 0
        lo = np.where(neg, x, lo)
        hi = np.where(neg, hi, x)
        step = gx / dG(x)
        xn = x - step
        out = (xn < lo) | (xn > hi)
        xn = np.where(out, 0.5 * (lo + hi), xn)
        upd = np.abs(xn - x)
        # bracket collapse also counts as convergence
        done = (upd <= tol) | (hi - lo <= tol)
        x = np.where(active, xn, x)
        active &= ~done
        if not active.any():
            break
    else:
        raise FastSolveError("pointwise fast solve did not converge")
    x = np.clip(x, 0.0, S)
    return x if x.ndim else float(x)


def slow_rhs(N, ps, ph, prm: Parameters):
    flux = predation(N, ps, prm)
    return (
        prm.r0 * (1.0 - prm.eta * N) * N - flux,
        -prm.mu * ps + prm.Gamma * ph,
        -prm.mu * ph,
    )


def _nonneg(u: np.ndarray) -> np.ndarray:
    # sub-steps are positivity preserving under the step check; only round-off is clipped
    return clip_roundoff(u)


def slow_step(N, ps, ph, tau: float, prm: Parameters):
    """Heun (SSP-RK2) step of the non-stiff reactions."""
    k1 = slow_rhs(N, ps, ph, prm)
    u1 = [_nonneg(u + tau * k) for u, k in zip((N, ps, ph), k1)]
    k2 = slow_rhs(*u1, prm)
    return tuple(
        _nonneg(0.5 * u0 + 0.5 * (v + tau * k)) for u0, v, k in zip((N, ps, ph), u1, k2)
    )


def slow_rate_bound(N, ps, prm: Parameters) -> float:
    return max(
        prm.r0,
        prm.mu,
        prm.Gamma,
        prm.alpha * float(np.max(N)),
        prm.alpha * float(np.max(ps)),
        prm.r0 * prm.eta * float(np.max(N)),
    )


def check_time_step(st, cfg: SolverConfig, prm: Parameters, diffusivities: Iterable[float]) -> None:
    """Reject steps that let the explicit sub-steps cross zero or violate CFL."""
    ps = st.ps if hasattr(st, "ps") else st.P
    bound = 0.1 / slow_rate_bound(st.N, ps, prm)
    if cfg.dt > bound:
        raise TimeStepError(f"dt={cfg.dt:g} exceeds explicit reaction bound {bound:g}")
    if cfg.diffusion == "explicit":
        lim = min(explicit_dt_limit(st.grid, d) for d in diffusivities)
        if cfg.dt > lim * (1 + 1e-12):
            raise TimeStepError(f"dt={cfg.dt:g} exceeds explicit diffusion limit {lim:g}")


def _diffuse(st_fields, tau, prm: Parameters, grid: Grid, scheme: str):
    N, ps, ph = st_fields
    return (
        _nonneg(diffusion_step(N, prm.d1, tau, grid, scheme)),
        _nonneg(diffusion_step(ps, prm.d2, tau, grid, scheme)),
        _nonneg(diffusion_step(ph, prm.d3, tau, grid, scheme)),
    )


def _fast(st_fields, tau, prm: Parameters):
    N, ps, ph = st_fields
    S = ps + ph
    ph_new = fast_reaction_pointwise_solve(S, N, ph, tau / prm.eps, prm)
    # S - ph_new rather than ps + (ph - ph_new): keeps ps + ph invariant to round-off
    return N, S - ph_new, ph_new


def step_fast(st: FastState, cfg: SolverConfig, prm: Parameters, dt: float | None = None) -> FastState:
    """Advance one time step; the input state is not modified."""
    dt = cfg.dt if dt is None else dt
    grid = st.grid
    u = (st.N, st.ps, st.ph)
    if cfg.splitting == "strang":
        u = slow_step(*u, 0.5 * dt, prm)
        u = _diffuse(u, 0.5 * dt, prm, grid, cfg.diffusion)
        u = _fast(u, dt, prm)
        u = _diffuse(u, 0.5 * dt, prm, grid, cfg.diffusion)
        u = slow_step(*u, 0.5 * dt, prm)
    else:
        u = slow_step(*u, dt, prm)
        u = _diffuse(u, dt, prm, grid, cfg.diffusion)
        u = _fast(u, dt, prm)
    for name, f in zip(FastState.FIELDS, u):
        if not np.all(np.isfinite(f)) or f.max(initial=0.0) > BLOWUP_LIMIT:
            raise BlowUpError(f"{name} exceeded {BLOWUP_LIMIT:g} at t={st.t + dt:g}")
    return FastState(st.t + dt, *u, grid)


def integrate_fast(
    init: FastState,
    cfg: SolverConfig,
    prm: Parameters,
    sinks: Iterable[Sink] = (),
    beta: float = 0.0,
    energy_p: float | None = None,
    raise_errors: bool = True,
) -> Trajectory:
    """Run from ``init`` to ``cfg.t_end``.

    Snapshots are kept every ``cfg.stride`` steps (plus the initial and final
    state); a diagnostics record is produced after every step and streamed
    to each sink as ``sink(t, record)``. On failure the partial trajectory is
    returned with ``error`` set, or the error re-raised if ``raise_errors``.
    """
    sinks = list(sinks)
    p = prm.p_energy if energy_p is None else energy_p
    traj = Trajectory(states=[init], params=prm)
    monitor = diagnostics.FastRunMonitor(prm, beta=beta, p=p)
    rec = monitor.initial(init)
    traj.records.append(rec)
    emit(sinks, init.t, rec)
    times = cfg.step_times()
    st = init
    try:
        for k, t_next in enumerate(times, start=1):
            check_time_step(st, cfg, prm, (prm.d1, prm.d2, prm.d3))
            new = step_fast(st, cfg, prm, dt=t_next - st.t)
            new = FastState(t_next, new.N, new.ps, new.ph, new.grid)
            snap = k % cfg.stride == 0 or k == len(times)
            rec = monitor.update(st, new, with_energy=snap)
            traj.records.append(rec)
            emit(sinks, new.t, rec)
            if snap:
                traj.states.append(new)
            st = new
    except Exception as exc:
        if st is not traj.states[-1]:
            traj.states.append(st)
        traj.error = f"{type(exc).__name__}: {exc}"
        traj.summary = monitor.summary()
        log.warning("fast integration aborted at t=%g: %s", st.t, exc)
        if raise_errors:
            raise
        return traj
    traj.summary = monitor.summary()
    return traj
