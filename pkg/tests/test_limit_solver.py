import numpy as np
import pytest

from conftest import make_params, smooth_initial
from fastlim.grid import Grid, diffusion_step, laplacian
from fastlim.kinetics import phi, reaction_limit
from fastlim.limit_solver import cross_dt_limit, integrate_limit, p_rhs_explicit, step_limit
from fastlim.states import LimitState, SolverConfig, TimeStepError
from oracles import limit_ode_reference


def _state(grid):
    N, P = smooth_initial(grid)
    return LimitState(0.0, N, P, grid)


def test_equal_diffusivities_remove_cross_term():
    prm = make_params(d3=0.1, allow_d3_ge_d2=True)
    g = Grid.uniform(1.0, 32)
    st = _state(g)
    assert cross_dt_limit(g, prm) == np.inf
    assert np.array_equal(p_rhs_explicit(st.N, st.P, prm, g), reaction_limit(st.N, st.P, prm)[1])


def test_reduced_p_equation_is_assembled_exactly():
    # d2 = d3, xi = 0: the explicit part is Gamma*alpha*N*P/(alpha*N+gamma) - mu*P
    prm = make_params(d3=0.1, xi=0.0, allow_d3_ge_d2=True)
    g = Grid.uniform(1.0, 32)
    st = _state(g)
    N, P = st.N, st.P
    direct = prm.Gamma * (prm.alpha * N * P / (prm.alpha * N + prm.gamma)) - prm.mu * P
    assert np.array_equal(p_rhs_explicit(N, P, prm, g), direct)


def test_cross_term_uses_laplacian_of_phi():
    prm = make_params()
    g = Grid.uniform(1.0, 32)
    st = _state(g)
    expected = (prm.d3 - prm.d2) * laplacian(phi(st.N, st.P, prm), g) + reaction_limit(st.N, st.P, prm)[1]
    assert np.allclose(p_rhs_explicit(st.N, st.P, prm, g), expected, rtol=0, atol=1e-14)


def test_cross_term_cfl_guard():
    prm = make_params()
    g = Grid.uniform(1.0, 64)
    lim = cross_dt_limit(g, prm)
    assert lim == pytest.approx(g.h[0] ** 2 / (2 * 0.07))
    with pytest.raises(TimeStepError):
        step_limit(_state(g), SolverConfig(1.01 * lim, 1.0), prm)
    # a larger bound on d(phi)/dP tightens the limit
    assert cross_dt_limit(g, prm, cross_bound=2.0) == pytest.approx(lim / 2)


def test_zero_predators_stay_zero_and_prey_is_logistic_diffusion():
    prm = make_params()
    g = Grid.uniform(1.0, 32)
    N0, _ = smooth_initial(g)
    st = LimitState(0.0, N0, np.zeros(32), g)
    new = step_limit(st, SolverConfig(1e-3, 1.0), prm)
    assert not new.P.any()
    expected = diffusion_step(N0 + 1e-3 * prm.r0 * (1 - prm.eta * N0) * N0, prm.d1, 1e-3, g)
    assert np.allclose(new.N, expected, rtol=0, atol=1e-15)


def test_zero_data_gives_zero_trajectory():
    prm = make_params()
    g = Grid.uniform(1.0, 16)
    z = np.zeros(16)
    traj = integrate_limit(LimitState(0.0, z, z, g), SolverConfig(1e-3, 0.01), prm)
    assert all(not s.N.any() and not s.P.any() for s in traj.states)


def test_single_step_when_t_end_equals_dt():
    prm = make_params()
    g = Grid.uniform(1.0, 16)
    traj = integrate_limit(_state(g), SolverConfig(1e-3, 1e-3), prm)
    assert len(traj) == 2 and traj.states[-1].t == 1e-3


def _run_constant(prm, dt, y0, T=1.0):
    g = Grid.uniform(1.0, 4)
    cfg = SolverConfig(dt, T)
    st = LimitState(0.0, *[np.full(4, v) for v in y0], g)
    for t in cfg.step_times():
        st = step_limit(st, cfg, prm, dt=t - st.t)
    assert max(np.ptp(st.N), np.ptp(st.P)) <= 1e-15 * cfg.n_steps
    return np.array([st.N[0], st.P[0]])


@pytest.mark.slow
@pytest.mark.parametrize("xi", [0.0, 1.0])
def test_constant_data_matches_ode_reference(xi):
    # first order in dt: Richardson extrapolation of dt0/2^7 and dt0/2^8
    prm = make_params(xi=xi)
    y0 = [0.5, 0.6]
    ref = limit_ode_reference(y0, prm, 1.0)
    a = _run_constant(prm, 1e-2 / 2**7, y0)
    b = _run_constant(prm, 1e-2 / 2**8, y0)
    assert np.max(np.abs(2 * b - a - ref)) <= 1e-6


def test_nonnegative_and_mass_inequality_on_smooth_run():
    prm = make_params(xi=0.0)
    g = Grid.uniform(1.0, 64)
    traj = integrate_limit(_state(g), SolverConfig(5e-4, 0.5, stride=100), prm)
    s = traj.summary
    assert s["min_N"] >= 0 and s["min_P"] >= 0
    assert s["mass_inequality_violations"] == 0
    assert s["max_N"] <= 1.0 + 1e-10


def _finals(prm, runs):
    out = []
    for cells, dt, T in runs:
        g = Grid.uniform(1.0, cells)
        traj = integrate_limit(_state(g), SolverConfig(dt, T, stride=10**6), prm)
        out.append(traj.states[-1])
    return out


@pytest.mark.slow
def test_self_convergence_first_order_in_dt():
    prm = make_params()
    f = _finals(prm, [(64, 1e-3, 1.0), (64, 5e-4, 1.0), (64, 2.5e-4, 1.0)])
    d1 = np.max(np.abs(f[0].N - f[1].N))
    d2 = np.max(np.abs(f[1].N - f[2].N))
    assert d1 / d2 == pytest.approx(2.0, abs=0.2)


@pytest.mark.slow
def test_self_convergence_second_order_in_h():
    prm = make_params()
    f = _finals(prm, [(16, 5e-5, 0.2), (32, 5e-5, 0.2), (64, 5e-5, 0.2)])
    g16, g32 = Grid.uniform(1.0, 16), Grid.uniform(1.0, 32)
    d1 = np.max(np.abs(g16.restrict(f[1].N) - f[0].N))
    d2 = np.max(np.abs(g32.restrict(f[2].N) - f[1].N))
    assert d1 / d2 == pytest.approx(4.0, rel=0.1)
