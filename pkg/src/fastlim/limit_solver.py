"""Time integration of the limiting cross-diffusion (N, P) systems."""
from __future__ import annotations

import logging
from typing import Iterable

import numpy as np

from . import diagnostics
from .fast_solver import check_time_step
from .grid import diffusion_step, laplacian
from .kinetics import Parameters, phi, reaction_limit
from .states import (
    BLOWUP_LIMIT,
    BlowUpError,
    LimitState,
    Sink,
    SolverConfig,
    TimeStepError,
    Trajectory,
    clip_roundoff,
    emit,
)

log = logging.getLogger(__name__)


def cross_dt_limit(grid, prm: Parameters, cross_bound: float = 1.0) -> float:
    """Bound dt <= h^2/(2*dim*|d3-d2|*Lambda) for the explicit cross term."""
    dd = abs(prm.d3 - prm.d2)
    if dd == 0.0:
        return np.inf
    return min(grid.h) ** 2 / (2.0 * grid.dim * dd * cross_bound)


def p_rhs_explicit(N, P, prm: Parameters, grid) -> np.ndarray:
    """Explicit part of the P equation: (d3-d2)*Lap(phi) + Gamma*phi - mu*P."""
    _, dP = reaction_limit(N, P, prm)
    if prm.d3 == prm.d2:
        return dP
    return (prm.d3 - prm.d2) * laplacian(phi(N, P, prm), grid) + dP


def step_limit(st: LimitState, cfg: SolverConfig, prm: Parameters, dt: float | None = None) -> LimitState:
    """Lie step: explicit reaction and cross term, then implicit diffusion."""
    dt = cfg.dt if dt is None else dt
    grid = st.grid
    lim = cross_dt_limit(grid, prm, cfg.cross_bound)
    if dt > lim * (1 + 1e-12):
        raise TimeStepError(f"dt={dt:g} exceeds cross-diffusion limit {lim:g}")
    dN, _ = reaction_limit(st.N, st.P, prm)
    N = st.N + dt * dN
    P = st.P + dt * p_rhs_explicit(st.N, st.P, prm, grid)
    N = clip_roundoff(diffusion_step(N, prm.d1, dt, grid, cfg.diffusion), "N")
    P = clip_roundoff(diffusion_step(P, prm.d2, dt, grid, cfg.diffusion), "P")
    for name, f in (("N", N), ("P", P)):
        if not np.all(np.isfinite(f)) or f.max(initial=0.0) > BLOWUP_LIMIT:
            raise BlowUpError(f"{name} exceeded {BLOWUP_LIMIT:g} at t={st.t + dt:g}")
    return LimitState(st.t + dt, N, P, grid)


def integrate_limit(
    init: LimitState,
    cfg: SolverConfig,
    prm: Parameters,
    sinks: Iterable[Sink] = (),
    raise_errors: bool = True,
) -> Trajectory:
    """Run the limit system to ``cfg.t_end``; same contract as ``integrate_fast``."""
    sinks = list(sinks)
    traj = Trajectory(states=[init], params=prm)
    monitor = diagnostics.LimitRunMonitor(prm)
    rec = monitor.initial(init)
    traj.records.append(rec)
    emit(sinks, init.t, rec)
    times = cfg.step_times()
    st = init
    try:
        for k, t_next in enumerate(times, start=1):
            check_time_step(st, cfg, prm, (prm.d1, prm.d2))
            new = step_limit(st, cfg, prm, dt=t_next - st.t)
            new = LimitState(t_next, new.N, new.P, new.grid)
            rec = monitor.update(st, new)
            traj.records.append(rec)
            emit(sinks, new.t, rec)
            if k % cfg.stride == 0 or k == len(times):
                traj.states.append(new)
            st = new
    except Exception as exc:
        if st is not traj.states[-1]:
            traj.states.append(st)
        traj.error = f"{type(exc).__name__}: {exc}"
        traj.summary = monitor.summary()
        log.warning("limit integration aborted at t=%g: %s", st.t, exc)
        if raise_errors:
            raise
        return traj
    traj.summary = monitor.summary()
    return traj
