"""Quantitative instruments: space-time norms, energy, dissipation, monitors,
weak-form residuals and log-log rate fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec

from .grid import Grid
from .kinetics import Parameters, nonneg, phi, predation, reaction_limit
from .states import FastState, LimitState, Trajectory

ENERGY_RTOL = 1e-12


# ---------------------------------------------------------------- norms

def spacetime_lp(times, space_integrals, p: float) -> float:
    """(int_0^T S(t) dt)^(1/p) from per-time spatial integrals S(t) = int |f|^p dx."""
    times = np.asarray(times, dtype=float)
    s = np.asarray(space_integrals, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two time levels")
    return float(np.trapezoid(s, times) ** (1.0 / p))


def lp_norm_spacetime(traj: Trajectory, extract: Callable, p: float = 2.0, t0: float = 0.0) -> float:
    """L^p(Q_T) norm of ``extract(state)``: midpoint in space, trapezoid in time.

    Snapshots with ``t < t0`` are left out (initial-layer exclusion).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if len(traj) < 2:
        raise ValueError("trajectory needs at least two time levels")
    states = [s for s in traj.states if s.t >= t0]
    if len(states) < 2:
        raise ValueError(f"fewer than two snapshots with t >= {t0}")
    grid = states[0].grid
    vals = [grid.integrate(np.abs(np.asarray(extract(s), dtype=float)) ** p) for s in states]
    return spacetime_lp([s.t for s in states], vals, p)


# ---------------------------------------------------------------- energy

@dataclass(frozen=True)
class EnergyReport:
    t: float
    H: float
    beta: float
    p: float
    dissipation: float


def _check_energy_args(beta: float, p: float) -> None:
    if not p > 1:
        raise ValueError(f"energy exponent must be > 1, got {p}")
    if not beta >= 0:
        raise ValueError(f"beta must be >= 0, got {beta}")


def searching_potential(ps, prm: Parameters, p: float) -> np.ndarray:
    """Cellwise int_0^ps (alpha*r/(xi*r+1))**(p-1) dr.

    Closed form for xi == 0. Otherwise adaptive Gauss-Kronrod quadrature of
    ps*(alpha*ps)**(p-1) * int_0^1 u**(p-1) * (1 + xi*ps*u)**(1-p) du, with
    u = s**m, m = max(1, 1/(p-1)), so the integrand is smooth at s = 0.
    """
    ps = nonneg(ps, "ps")
    a, xi = prm.alpha, prm.xi
    if xi == 0.0:
        return a ** (p - 1) * ps**p / p
    flat = ps.ravel()
    out = np.zeros_like(flat)
    pos = flat > 0
    if pos.any():
        z = xi * flat[pos]
        m = max(1.0, 1.0 / (p - 1.0))

        def integrand(s):
            u = s**m
            return m * s ** (m * p - 1.0) * (1.0 + z * u) ** (1.0 - p)

        inner, _ = quad_vec(integrand, 0.0, 1.0, epsabs=0.0, epsrel=ENERGY_RTOL, norm="max", limit=200)
        q = flat[pos]
        out[pos] = q * (a * q) ** (p - 1) * inner
    return out.reshape(ps.shape)


def energy(st: FastState, prm: Parameters, beta: float = 0.0, p: float | None = None) -> float:
    """Modified energy int (N+beta)^(p-1) * Phi(ps) + (1/p) int gamma^(p-1) ph^p."""
    p = prm.p_energy if p is None else p
    _check_energy_args(beta, p)
    pot = searching_potential(st.ps, prm, p)
    dens = (st.N + beta) ** (p - 1) * pot + prm.gamma ** (p - 1) * st.ph**p / p
    return st.grid.integrate(dens)


def _dissipation_density(st: FastState, prm: Parameters, beta: float, p: float) -> np.ndarray:
    frac = predation(1.0, st.ps, prm)
    a = frac * st.N
    a_beta = frac * (st.N + beta)
    b = prm.gamma * st.ph
    return (a - b) * (a_beta ** (p - 1) - b ** (p - 1))


def dissipation(st: FastState, prm: Parameters, beta: float = 0.0, p: float | None = None) -> float:
    """int (a - b) * (a_beta**(p-1) - b**(p-1)) with a the predation flux,
    a_beta the flux at N + beta and b = gamma*ph."""
    p = prm.p_energy if p is None else p
    _check_energy_args(beta, p)
    return st.grid.integrate(_dissipation_density(st, prm, beta, p))


def dissipation_sign_failures(st: FastState, prm: Parameters, beta: float, p: float | None = None) -> int:
    """Number of cells where the dissipation integrand is negative."""
    p = prm.p_energy if p is None else p
    d = _dissipation_density(st, prm, beta, p)
    scale = 1e-12 * max(1.0, float(np.max(np.abs(d), initial=0.0)))
    return int(np.count_nonzero(d < -scale))


def energy_report(st: FastState, prm: Parameters, beta: float = 0.0, p: float | None = None) -> EnergyReport:
    p = prm.p_energy if p is None else p
    return EnergyReport(st.t, energy(st, prm, beta, p), beta, p, dissipation(st, prm, beta, p))


def beta_schedule(eps: float, p: float) -> float:
    """Energy shift beta(eps) = eps**(1/(4-p)) for 1 < p <= 2."""
    if not (1.0 < p <= 2.0):
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return eps ** (1.0 / (4.0 - p))


# ---------------------------------------------------------------- monitors

def extremum_and_mass_monitor(st, prm: Parameters | None = None) -> dict:
    """Min/max and mass of every field, predator mass, and min_cells N."""
    rec = {}
    for name, f in st.fields().items():
        rec[f"min_{name}"] = float(f.min())
        rec[f"max_{name}"] = float(f.max())
        rec[f"mass_{name}"] = st.grid.integrate(f)
    if isinstance(st, FastState):
        rec["mass_predators"] = rec["mass_ps"] + rec["mass_ph"]
    else:
        rec["mass_predators"] = rec["mass_P"]
    rec["m_estimate"] = rec["min_N"]
    return rec


def mass_inequality(prev, new, prm: Parameters) -> tuple[float, float]:
    """Defect and tolerance of the discrete predator mass balance over one step.

    defect = D_t M - (Gamma * mass(ph) - mu * M), both sources averaged over
    the step endpoints; the inequality holds when defect <= tolerance. The
    tolerance covers the O(dt) quadrature error of the endpoint average.
    """
    dt = new.t - prev.t
    g = prev.grid
    if isinstance(prev, FastState):
        M0, M1 = g.integrate(prev.ps + prev.ph), g.integrate(new.ps + new.ph)
        H0, H1 = g.integrate(prev.ph), g.integrate(new.ph)
    else:
        M0, M1 = g.integrate(prev.P), g.integrate(new.P)
        H0 = g.integrate(phi(prev.N, prev.P, prm))
        H1 = g.integrate(phi(new.N, new.P, prm))
    source = prm.Gamma * 0.5 * (H0 + H1) - prm.mu * 0.5 * (M0 + M1)
    defect = (M1 - M0) / dt - source
    scale = prm.Gamma * max(H0, H1) + prm.mu * max(M0, M1)
    tol = dt * (prm.Gamma + prm.mu) * scale + 1e-12 * (1.0 + max(M0, M1)) / dt
    return defect, tol


class FastRunMonitor:
    """Per-step diagnostics for fast-system runs; also accumulates a run summary."""

    def __init__(self, prm: Parameters, beta: float = 0.0, p: float = 2.0):
        self.prm = prm
        self.beta = beta
        self.p = p
        self._min = {}
        self._max_N = -np.inf
        self._min_dissipation = np.inf
        self._sign_fail = 0
        self._mass_viol = 0
        self._max_mass_ratio = -np.inf
        self._H0 = None
        self._Hmax = -np.inf
        self._m_est = np.inf

    def _base(self, st: FastState, with_energy: bool) -> dict:
        prm = self.prm
        rec = {"t": st.t}
        rec.update(extremum_and_mass_monitor(st, prm))
        R = predation(st.N, st.ps, prm) - prm.gamma * st.ph
        rec["manifold_l2sq"] = st.grid.integrate(R**2)
        rec["manifold_l43"] = st.grid.integrate(np.abs(R) ** (4.0 / 3.0))
        rec["manifold_max"] = float(np.max(np.abs(R)))
        rec["dissipation"] = dissipation(st, prm, 0.0, self.p)
        if self.beta > 0:
            rec["dissipation_beta"] = dissipation(st, prm, self.beta, self.p)
            rec["dissipation_sign_fail_cells"] = float(
                dissipation_sign_failures(st, prm, self.beta, self.p)
            )
        if with_energy:
            rec["energy"] = energy(st, prm, self.beta, self.p)
        self._track(rec)
        return rec

    def _track(self, rec: dict) -> None:
        for k in ("N", "ps", "ph"):
            self._min[k] = min(self._min.get(k, np.inf), rec[f"min_{k}"])
        self._max_N = max(self._max_N, rec["max_N"])
        self._min_dissipation = min(self._min_dissipation, rec["dissipation"])
        self._sign_fail += int(rec.get("dissipation_sign_fail_cells", 0))
        self._m_est = min(self._m_est, rec["m_estimate"])
        if "energy" in rec:
            if self._H0 is None:
                self._H0 = rec["energy"]
            self._Hmax = max(self._Hmax, rec["energy"])

    def initial(self, st: FastState) -> dict:
        return self._base(st, with_energy=True)

    def update(self, prev: FastState, new: FastState, with_energy: bool = False) -> dict:
        rec = self._base(new, with_energy)
        dt = new.t - prev.t
        dN = (new.N - prev.N) / dt
        rec["int_abs_dtN"] = new.grid.integrate(np.abs(dN))
        rec["int_dtN"] = new.grid.integrate(dN)
        defect, tol = mass_inequality(prev, new, self.prm)
        rec["mass_defect"] = defect
        rec["mass_tol"] = tol
        if defect > tol:
            self._mass_viol += 1
        self._max_mass_ratio = max(self._max_mass_ratio, defect / tol)
        return rec

    def summary(self) -> dict:
        out = {f"min_{k}": v for k, v in self._min.items()}
        out.update(
            max_N=self._max_N,
            min_dissipation=self._min_dissipation,
            dissipation_sign_fail_cells=self._sign_fail,
            mass_inequality_violations=self._mass_viol,
            max_mass_defect_ratio=self._max_mass_ratio,
            m_estimate=self._m_est,
        )
        if self._H0 is not None:
            out["energy_initial"] = self._H0
            out["energy_growth"] = self._Hmax - self._H0
        return out


class LimitRunMonitor:
    def __init__(self, prm: Parameters):
        self.prm = prm
        self._min = {}
        self._max_N = -np.inf
        self._mass_viol = 0

    def _base(self, st: LimitState) -> dict:
        rec = {"t": st.t}
        rec.update(extremum_and_mass_monitor(st, self.prm))
        for k in ("N", "P"):
            self._min[k] = min(self._min.get(k, np.inf), rec[f"min_{k}"])
        self._max_N = max(self._max_N, rec["max_N"])
        return rec

    def initial(self, st: LimitState) -> dict:
        return self._base(st)

    def update(self, prev: LimitState, new: LimitState, with_energy: bool = False) -> dict:
        rec = self._base(new)
        defect, tol = mass_inequality(prev, new, self.prm)
        rec["mass_defect"] = defect
        rec["mass_tol"] = tol
        if defect > tol:
            self._mass_viol += 1
        return rec

    def summary(self) -> dict:
        out = {f"min_{k}": v for k, v in self._min.items()}
        out.update(max_N=self._max_N, mass_inequality_violations=self._mass_viol)
        return out


def records_spacetime_norm(records: Sequence[dict], key: str, p: float, t0: float = 0.0) -> float:
    """Space-time norm from per-step spatial integrals of |f|^p stored under ``key``."""
    rows = [r for r in records if r["t"] >= t0 and key in r]
    return spacetime_lp([r["t"] for r in rows], [r[key] for r in rows], p)


# ---------------------------------------------------------------- rates

@dataclass(frozen=True)
class RateReport:
    samples: list[tuple[float, float]]
    slope: float
    intercept: float
    r_squared: float
    plateau_detected: bool
    fit_range_used: list[float]
    failures: list[float] = field(default_factory=list)

    def predicted(self, eps) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(eps, dtype=float) ** self.slope


PLATEAU_DECREASE = 0.05


def fit_rate(samples, drop_plateau: bool = True) -> RateReport:
    """Least-squares slope of log(residual) against log(eps).

    With ``drop_plateau`` the smallest-eps points are discarded from the first
    pair (in order of decreasing eps) whose residual falls by less than 5% per
    decade of eps.
    """
    pts = sorted(((float(e), float(r)) for e, r in samples), key=lambda s: -s[0])
    if len(pts) < 3:
        raise ValueError("fit_rate needs at least 3 samples")
    if any(not (e > 0 and r > 0 and math.isfinite(e) and math.isfinite(r)) for e, r in pts):
        raise ValueError("samples must be positive and finite")
    used = pts
    plateau = False
    if drop_plateau:
        for i in range(len(pts) - 1):
            (e0, r0), (e1, r1) = pts[i], pts[i + 1]
            decades = math.log10(e0 / e1)
            per_decade = (r1 / r0) ** (1.0 / decades) if decades > 0 else 1.0
            if per_decade > 1.0 - PLATEAU_DECREASE:
                used = pts[: i + 1]
                plateau = True
                break
    if len(used) < 3:
        raise ValueError(f"only {len(used)} usable points after plateau removal")
    x = np.log([e for e, _ in used])
    y = np.log([r for _, r in used])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateReport(pts, float(slope), float(intercept), r2, plateau, [e for e, _ in used])


# ---------------------------------------------------------------- weak residual

@dataclass(frozen=True)
class WeakResidual:
    """Signed residuals ``raw[eq][k, j]`` for test functions cos(k*pi*x/L) * hat_j(t)."""

    raw: dict
    norms: np.ndarray
    hat_nodes: np.ndarray

    def normalized(self, eq: str) -> np.ndarray:
        return np.abs(self.raw[eq]) / self.norms

    def max(self, eq: str | None = None) -> float:
        eqs = [eq] if eq else list(self.raw)
        return max(float(self.normalized(e).max()) for e in eqs)

    def as_dict(self) -> dict:
        return {eq: self.max(eq) for eq in self.raw}


def _hat_antiderivative(t, nodes: np.ndarray, j: int) -> np.ndarray:
    """int_{nodes[0]}^t of the j-th piecewise-linear hat on ``nodes``."""
    t = np.asarray(t, dtype=float)
    c = nodes[j]
    out = np.zeros_like(t)
    if j > 0:
        a = nodes[j - 1]
        w = c - a
        s = np.clip(t, a, c)
        out += (s - a) ** 2 / (2 * w)
    if j < len(nodes) - 1:
        b = nodes[j + 1]
        w = b - c
        s = np.clip(t, c, b)
        out += (s - c) - (s - c) ** 2 / (2 * w)
    return out


def _hat(t, nodes: np.ndarray, j: int) -> np.ndarray:
    e = np.zeros(len(nodes))
    e[j] = 1.0
    return np.interp(t, nodes, e)


def weak_residual(traj: Trajectory, prm: Parameters, n_modes: int = 8, n_hats: int = 8) -> WeakResidual:
    """Weak-form residuals of a 1-D limit trajectory.

    Test functions are cos(k*pi*x/L) * theta_j(t), k = 0..n_modes, with
    theta_j the hat functions on ``n_hats`` equal intervals of [t_0, T]. The
    time derivative is integrated exactly for the piecewise-linear-in-time
    interpolant, the gradient and cross-diffusion terms are moved onto the
    test function (Laplacian = -(k*pi/L)**2 times itself), and the rest uses
    midpoint quadrature in space and the trapezoid rule in time.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if len(traj) < 2:
        raise ValueError("trajectory needs at least two time levels")
    grid = traj.grid
    if grid.dim != 1:
        raise ValueError("weak_residual supports 1-D trajectories only")
    t = traj.times
    L = grid.extent[0]
    nodes = np.linspace(t[0], t[-1], n_hats + 1)
    if np.max(np.diff(t)) > 0.5 * (nodes[1] - nodes[0]) * (1 + 1e-9):
        raise ValueError("trajectory too coarse in time for the hat basis (need >= 2 samples per hat interval)")

    x = grid.axes()[0]
    ks = np.arange(n_modes + 1)
    C = np.cos(np.outer(ks, x) * np.pi / L) * grid.h[0]  # midpoint weights folded in
    lam = (ks * np.pi / L) ** 2

    N = traj.stack(lambda s: s.N)
    P = traj.stack(lambda s: s.P)
    h = phi(N, P, prm)
    fN, fP = reaction_limit(N, P, prm)

    def modes(f):
        return f @ C.T  # (time, k)

    Nk, Pk, hk, fNk, fPk = map(modes, (N, P, h, fN, fP))
    # spatial operator and source terms, per time level and mode
    gN = prm.d1 * lam * Nk - fNk
    gP = prm.d2 * lam * Pk + (prm.d3 - prm.d2) * lam * hk - fPk

    dt = np.diff(t)
    raw = {"N": np.zeros((len(ks), len(nodes))), "P": np.zeros((len(ks), len(nodes)))}
    for j in range(len(nodes)):
        Theta = _hat_antiderivative(t, nodes, j)
        w_int = np.diff(Theta)  # exact int of theta_j over each step
        th = _hat(t, nodes, j)
        for eq, U, g in (("N", Nk, gN), ("P", Pk, gP)):
            dU = np.diff(U, axis=0) / dt[:, None]
            time_term = (dU * w_int[:, None]).sum(axis=0)
            src = np.trapezoid(th[:, None] * g, t, axis=0)
            raw[eq][:, j] = time_term + src

    cos_norm2 = np.where(ks == 0, L, L / 2.0)
    widths = np.diff(nodes)
    hat_norm2 = np.zeros(len(nodes))
    hat_norm2[:-1] += widths / 3.0
    hat_norm2[1:] += widths / 3.0
    norms = np.sqrt(np.outer(cos_norm2, hat_norm2))
    return WeakResidual(raw, norms, nodes)
