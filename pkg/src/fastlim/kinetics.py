"""Pointwise model algebra for the searching/handling predator-prey system.

All functions are vectorised over numpy arrays (scalars work too) and are
pure: they never mutate their inputs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

# values in [-CLAMP_TOL, 0) are treated as solver round-off and set to zero
CLAMP_TOL = 1e-14


class DomainError(ValueError):
    """Raised for negative densities, non-finite inputs or invalid parameters."""


class DiffusionOrderWarning(UserWarning):
    """Handling predators diffuse at least as fast as searching ones (d3 >= d2)."""


@dataclass(frozen=True)
class Parameters:
    d1: float
    d2: float
    d3: float
    r0: float
    eta: float
    alpha: float
    xi: float
    gamma: float
    Gamma: float
    mu: float
    eps: float = 1.0
    p_energy: float = 2.0
    allow_d3_ge_d2: bool = False

    _POSITIVE = ("d1", "d2", "d3", "eta", "gamma", "eps")
    # zero switches the corresponding process off
    _NONNEGATIVE = ("r0", "alpha", "xi", "Gamma", "mu")

    def __post_init__(self):
        for f in fields(self):
            if f.name == "allow_d3_ge_d2":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool):
                raise DomainError(f"parameter {f.name} must be a number, got {v!r}")
            if not math.isfinite(v):
                raise DomainError(f"parameter {f.name} must be finite, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        for name in self._POSITIVE:
            if getattr(self, name) <= 0.0:
                raise DomainError(f"parameter {name} must be > 0, got {getattr(self, name)!r}")
        for name in self._NONNEGATIVE:
            if getattr(self, name) < 0.0:
                raise DomainError(f"parameter {name} must be >= 0, got {getattr(self, name)!r}")
        if self.p_energy <= 1.0:
            raise DomainError(f"parameter p_energy must be > 1, got {self.p_energy!r}")
        if self.d3 >= self.d2 and not self.allow_d3_ge_d2:
            warnings.warn(
                f"d3={self.d3} >= d2={self.d2}: handling predators are expected to move less "
                "than searching ones (set allow_d3_ge_d2 to silence)",
                DiffusionOrderWarning,
                stacklevel=3,
            )

    def with_(self, **changes) -> "Parameters":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


class PointState(NamedTuple):
    N: np.ndarray
    ps: np.ndarray
    ph: np.ndarray


def nonneg(x, name: str = "value") -> np.ndarray:
    """Validate a density array, clamping round-off negatives to exact zero."""
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite values")
    if a.size and a.min() < 0.0:
        if a.min() < -CLAMP_TOL:
            raise DomainError(f"{name} is negative (min {a.min():.3e})")
        a = np.maximum(a, 0.0)
    return a


def predation(N, ps, prm: Parameters):
    """Saturating predation flux alpha*ps*N/(xi*ps + 1)."""
    return prm.alpha * ps * N / (prm.xi * ps + 1.0)


def reaction_fast(N, ps, ph, prm: Parameters):
    """Full right-hand sides of the fast-reaction system, 1/eps switching included."""
    N = nonneg(N, "N")
    ps = nonneg(ps, "ps")
    ph = nonneg(ph, "ph")
    flux = predation(N, ps, prm)
    switch = (prm.gamma * ph - flux) / prm.eps
    dN = prm.r0 * (1.0 - prm.eta * N) * N - flux
    dps = switch - prm.mu * ps + prm.Gamma * ph
    dph = -switch - prm.mu * ph
    return dN, dps, dph


def slow_manifold_residual(N, ps, ph, prm: Parameters):
    """alpha*ps*N/(xi*ps+1) - gamma*ph; positive when predation outpaces return."""
    N = nonneg(N, "N")
    ps = nonneg(ps, "ps")
    ph = nonneg(ph, "ph")
    return predation(N, ps, prm) - prm.gamma * ph


def phi(N, P, prm: Parameters):
    """Handling-predator density on the slow manifold for prey N and total predators P.

    For ``xi > 0`` this is the smaller root of
    ``gamma*xi*ph**2 - (alpha*N + gamma + gamma*xi*P)*ph + alpha*N*P``; for
    ``xi == 0`` the linear relation ``alpha*N*P/(alpha*N + gamma)`` is used.
    The result lies in ``[0, min(P, alpha*N/(gamma*xi))]``.
    """
    N = nonneg(N, "N")
    P = nonneg(P, "P")
    a, g, xi = prm.alpha, prm.gamma, prm.xi
    aN = a * N
    if xi == 0.0:
        return aN * P / (aN + g)
    A = aN + g + g * xi * P
    B = aN + g - g * xi * P
    disc = np.sqrt(B * B + 4.0 * g * g * xi * P)
    with np.errstate(divide="ignore", invalid="ignore"):
        # A - disc cancels when B > 0; use the conjugate form there
        r = np.where(B > 0.0, 2.0 * aN * P / (A + disc), (A - disc) / (2.0 * xi * g))
    r = np.minimum(np.maximum(r, 0.0), np.minimum(P, aN / (g * xi)))
    return r if np.ndim(r) else float(r)


def quadratic_residual(ph, N, P, prm: Parameters):
    if prm.xi == 0.0:
        raise DomainError("quadratic degenerates for xi == 0; use phi's linear branch")
    ph = nonneg(ph, "ph")
    N = nonneg(N, "N")
    P = nonneg(P, "P")
    g, xi = prm.gamma, prm.xi
    return g * xi * ph * ph - (prm.alpha * N + g + g * xi * P) * ph + prm.alpha * N * P


def reaction_limit(N, P, prm: Parameters):
    """Reaction part of the limiting (N, P) system; cross-diffusion is not included."""
    N = nonneg(N, "N")
    P = nonneg(P, "P")
    if prm.xi == 0.0:
        h = prm.alpha * N * P / (prm.alpha * N + prm.gamma)
    else:
        h = phi(N, P, prm)
    dN = prm.r0 * (1.0 - prm.eta * N) * N - prm.gamma * h
    dP = prm.Gamma * h - prm.mu * P
    return dN, dP


@dataclass(frozen=True)
class DualityCheck:
    holds: bool
    ratio: float
    margin: float
    q0: float
    c_mr: float
    q0_prime: float


def check_duality_condition(prm: Parameters, c_mr: float, q0_prime: float) -> DualityCheck:
    """Check the diffusion-closeness condition (d2-d3)/(d2+d3) < 1/c_mr.

    ``c_mr`` is the maximal-regularity constant for exponent ``q0_prime``; it
    cannot be computed here and must come from the caller.
    """
    if not (c_mr > 0.0 and math.isfinite(c_mr)):
        raise DomainError(f"c_mr must be a positive finite number, got {c_mr!r}")
    if not (1.0 < q0_prime < 1.25):
        raise DomainError(f"q0_prime must lie in (1, 5/4), got {q0_prime!r}")
    ratio = (prm.d2 - prm.d3) / (prm.d2 + prm.d3)
    margin = 1.0 / c_mr - ratio
    return DualityCheck(
        holds=bool(ratio < 1.0 / c_mr),
        ratio=ratio,
        margin=margin,
        q0=q0_prime / (q0_prime - 1.0),
        c_mr=float(c_mr),
        q0_prime=float(q0_prime),
    )
