"""Simulation and convergence diagnostics for a fast-reaction predator-prey
reaction-diffusion system and its cross-diffusion limits."""
from .grid import Grid, diffusion_step
from .kinetics import (
    DomainError,
    Parameters,
    check_duality_condition,
    phi,
    quadratic_residual,
    reaction_fast,
    reaction_limit,
    slow_manifold_residual,
)
from .states import FastState, LimitState, SolverConfig, Trajectory
from .fast_solver import fast_reaction_pointwise_solve, integrate_fast, step_fast
from .limit_solver import integrate_limit, step_limit

__version__ = "0.1.0"
