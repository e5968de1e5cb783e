"""State containers shared by the fast and limit solvers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Union

import numpy as np

from .grid import Grid


class BlowUpError(RuntimeError):
    """A field exceeded the blow-up guard."""


class TimeStepError(ValueError):
    """The time step is too large for the explicit sub-steps to stay positive."""


BLOWUP_LIMIT = 1e12
ROUNDOFF_NEG = 1e-10


class NegativityError(RuntimeError):
    """A sub-step produced a negative density beyond round-off."""


def clip_roundoff(u: np.ndarray, name: str = "field") -> np.ndarray:
    """Set round-off negatives to zero; anything more negative is an error."""
    lo = u.min(initial=0.0)
    if lo < 0.0:
        if lo < -ROUNDOFF_NEG * (1.0 + np.abs(u).max()):
            raise NegativityError(f"{name} went negative (min {lo:.3e})")
        u = np.maximum(u, 0.0)
    return u


def _field(a, grid: Grid, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.shape != grid.shape:
        raise ValueError(f"{name} has shape {a.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if a.size and a.min() < 0.0:
        raise ValueError(f"{name} is negative (min {a.min():.3e})")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FastState:
    t: float
    N: np.ndarray
    ps: np.ndarray
    ph: np.ndarray
    grid: Grid

    FIELDS = ("N", "ps", "ph")

    def __post_init__(self):
        for name in self.FIELDS:
            object.__setattr__(self, name, _field(getattr(self, name), self.grid, name))
        object.__setattr__(self, "t", float(self.t))

    @property
    def P(self) -> np.ndarray:
        return self.ps + self.ph

    def fields(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass(frozen=True)
class LimitState:
    t: float
    N: np.ndarray
    P: np.ndarray
    grid: Grid

    FIELDS = ("N", "P")

    def __post_init__(self):
        for name in self.FIELDS:
            object.__setattr__(self, name, _field(getattr(self, name), self.grid, name))
        object.__setattr__(self, "t", float(self.t))

    def fields(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.FIELDS}


State = Union[FastState, LimitState]
Sink = Callable[[float, dict], None]


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    splitting: str = "strang"
    diffusion: str = "implicit"
    stride: int = 1
    cross_bound: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.t_end >= self.dt:
            raise ValueError(f"t_end={self.t_end!r} must be >= dt={self.dt!r}")
        if self.splitting not in ("strang", "lie"):
            raise ValueError(f"splitting must be 'strang' or 'lie', got {self.splitting!r}")
        if self.diffusion not in ("implicit", "explicit"):
            raise ValueError(f"diffusion must be 'implicit' or 'explicit', got {self.diffusion!r}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride!r}")
        if not self.cross_bound > 0:
            raise ValueError("cross_bound must be positive")
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def n_steps(self) -> int:
        return max(1, int(np.ceil(self.t_end / self.dt - 1e-9)))

    def step_times(self) -> np.ndarray:
        """Times t_1..t_n reached after each step; the last one is exactly t_end."""
        t = np.arange(1, self.n_steps + 1) * self.dt
        t[-1] = self.t_end
        return t

    def refined(self, factor: int = 2) -> "SolverConfig":
        return SolverConfig(
            self.dt / factor, self.t_end, self.splitting, self.diffusion,
            self.stride * factor, self.cross_bound,
        )


@dataclass
class Trajectory:
    """Snapshots at every ``stride`` steps plus per-step diagnostics records."""

    states: list = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None
    params: object = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    def __len__(self) -> int:
        return len(self.states)

    def stack(self, extract: Callable) -> np.ndarray:
        return np.stack([np.asarray(extract(s), dtype=float) for s in self.states])


def emit(sinks: Iterable[Sink], t: float, record: dict) -> None:
    for sink in sinks:
        sink(t, record)
