"""Uniform cell-centred grids with mirror-ghost Neumann boundaries, and diffusion steps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded


class CFLError(ValueError):
    """Explicit time step exceeds the stability/positivity bound."""


@dataclass(frozen=True)
class Grid:
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if len(extent) != len(cells) or len(extent) not in (1, 2):
            raise ValueError("grid must be 1-D or 2-D with one extent and cell count per axis")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise ValueError(f"grid extents must be positive, got {extent}")
        if any(c < 4 for c in cells):
            raise ValueError(f"grid needs at least 4 cells per axis, got {cells}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, length: float = 1.0, cells: int = 128, dim: int = 1) -> "Grid":
        return cls((length,) * dim, (cells,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extent, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def axes(self) -> list[np.ndarray]:
        return [(np.arange(c) + 0.5) * h for c, h in zip(self.cells, self.h)]

    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.extent, tuple(c * factor for c in self.cells))

    def integrate(self, f) -> float:
        """Midpoint rule over the domain."""
        return float(np.sum(f) * self.cell_volume)

    def restrict(self, f: np.ndarray, factor: int = 2) -> np.ndarray:
        """Average blocks of ``factor`` cells per axis onto the coarser grid."""
        f = np.asarray(f)
        shape = []
        for c in f.shape:
            if c % factor:
                raise ValueError("field shape not divisible by restriction factor")
            shape += [c // factor, factor]
        return f.reshape(shape).mean(axis=tuple(range(1, 2 * f.ndim, 2)))

    def as_dict(self) -> dict:
        return {"extent": list(self.extent), "cells": list(self.cells)}


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order central Laplacian; ghost cells mirror the boundary cell."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    for ax, h in enumerate(grid.h):
        g = np.concatenate(
            [np.take(f, [0], axis=ax), f, np.take(f, [-1], axis=ax)], axis=ax
        )
        n = f.shape[ax]
        lo = np.take(g, np.arange(0, n), axis=ax)
        hi = np.take(g, np.arange(2, n + 2), axis=ax)
        out += (lo - 2.0 * f + hi) / (h * h)
    return out


def laplacian_eigenvalue(k: int, h: float, length: float) -> float:
    """Eigenvalue of the discrete Neumann Laplacian for the mode cos(k*pi*x/L)."""
    return -(2.0 / h**2) * (1.0 - np.cos(k * np.pi * h / length))


def explicit_dt_limit(grid: Grid, d: float) -> float:
    if d <= 0:
        return np.inf
    return min(grid.h) ** 2 / (2.0 * grid.dim * d)


def _implicit_sweep(f: np.ndarray, c: float, axis: int) -> np.ndarray:
    """Solve (I - c*D_axis) u = f with the 1-D Neumann second difference D."""
    n = f.shape[axis]
    ab = np.empty((3, n))
    ab[0, :] = -c
    ab[2, :] = -c
    ab[1, :] = 1.0 + 2.0 * c
    ab[1, 0] = ab[1, -1] = 1.0 + c
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    rhs = np.moveaxis(f, axis, 0)
    u = solve_banded((1, 1), ab, rhs.reshape(n, -1), check_finite=False)
    return np.moveaxis(u.reshape(rhs.shape), 0, axis)


def diffusion_step(f, d: float, dt: float, grid: Grid, scheme: str = "implicit") -> np.ndarray:
    """Advance du/dt = d * Laplacian(u) by one step of length ``dt``.

    ``implicit`` is backward Euler (one tridiagonal solve per line; 2-D uses
    alternating-direction sweeps), ``explicit`` is forward Euler and checks
    the CFL bound ``dt <= h**2 / (2 * dim * d)``. Both keep the spatial mean;
    the implicit scheme keeps nonnegativity for any ``dt``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("diffusion_step received non-finite values")
    if d < 0 or dt < 0:
        raise ValueError("diffusivity and time step must be nonnegative")
    if d == 0.0 or dt == 0.0:
        return f.copy()
    if scheme == "explicit":
        lim = explicit_dt_limit(grid, d)
        if dt > lim * (1 + 1e-12):
            raise CFLError(f"explicit diffusion dt={dt:g} exceeds h^2/(2*dim*d)={lim:g}")
        return f + dt * d * laplacian(f, grid)
    if scheme != "implicit":
        raise ValueError(f"unknown diffusion scheme {scheme!r}")
    u = f
    for ax, h in enumerate(grid.h):
        u = _implicit_sweep(u, d * dt / (h * h), ax)
    return u
