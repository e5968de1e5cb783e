import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_params
from fastlim.kinetics import (
    DiffusionOrderWarning,
    DomainError,
    check_duality_condition,
    phi,
    quadratic_residual,
    reaction_fast,
    reaction_limit,
    slow_manifold_residual,
)
from oracles import phi_bisect

dens = st.floats(0.0, 10.0, allow_nan=False)


def test_parameters_reject_invalid_values():
    for bad in (dict(d1=0.0), dict(alpha=-1.0), dict(eps=0.0), dict(xi=-1.0), dict(p_energy=1.0)):
        with pytest.raises(DomainError):
            make_params(**bad)


def test_parameters_warn_when_handlers_diffuse_faster():
    with pytest.warns(DiffusionOrderWarning):
        make_params(d3=0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_params(d3=0.2, allow_d3_ge_d2=True)


def test_reaction_fast_fixed_points():
    prm = make_params()
    assert reaction_fast(0.0, 0.0, 0.0, prm) == (0.0, 0.0, 0.0)
    dN, dps, dph = reaction_fast(1.0 / prm.eta, 0.0, 0.0, prm)
    assert (dN, dps, dph) == (0.0, 0.0, 0.0)


def test_reaction_fast_hand_value():
    prm = make_params(alpha=1.0, gamma=1.0, xi=0.0, Gamma=0.0, mu=0.0, eps=1.0, r0=2.0, eta=0.5)
    dN, dps, dph = reaction_fast(1.0, 2.0, 3.0, prm)
    assert dps == pytest.approx(1.0, abs=1e-12)
    assert dph == pytest.approx(-1.0, abs=1e-12)
    assert dN == pytest.approx(2.0 * (1 - 0.5) - 2.0)


@given(dens, dens, dens, st.floats(1e-6, 1e3), st.floats(0.0, 5.0))
def test_fast_terms_cancel(N, ps, ph, eps, xi):
    prm = make_params(eps=eps, xi=xi)
    zero = make_params(eps=eps, xi=xi, mu=0.0, Gamma=0.0)
    _, dps, dph = reaction_fast(N, ps, ph, zero)
    assert abs(dps + dph) <= 1e-12 * (1 + abs(dps))
    _, dps, dph = reaction_fast(N, ps, ph, prm)
    slow = -prm.mu * (ps + ph) + prm.Gamma * ph
    assert abs(dps + dph - slow) <= 1e-12 * (1 + abs(dps) + abs(dph))


def test_reaction_fast_rejects_negative():
    with pytest.raises(DomainError):
        reaction_fast(-1e-3, 0.0, 0.0, make_params())
    # round-off negatives are clamped
    assert reaction_fast(-1e-15, 0.0, 0.0, make_params())[0] == 0.0


def test_slow_manifold_residual_examples():
    prm = make_params(xi=0.0, alpha=1.0, gamma=1.0)
    assert slow_manifold_residual(1.0, 2.0, 3.0, prm) == pytest.approx(-1.0)
    assert slow_manifold_residual(2.0, 0.0, 0.7, prm) == pytest.approx(-0.7)
    prm1 = make_params()
    N, ps = 0.8, 0.4
    ph = prm1.alpha * ps * N / (prm1.gamma * (prm1.xi * ps + 1))
    assert abs(slow_manifold_residual(N, ps, ph, prm1)) < 1e-15


def test_phi_examples():
    p1 = make_params(alpha=1.0, gamma=1.0, xi=1.0)
    assert phi(1.0, 1.0, p1) == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-15)
    assert phi(1.0, 1.0, p1) == pytest.approx(0.3819660, abs=1e-7)
    p0 = make_params(alpha=2.0, gamma=1.0, xi=0.0)
    assert phi(1.0, 3.0, p0) == pytest.approx(2.0)
    for prm in (p0, p1, make_params(xi=10.0)):
        assert phi(0.0, 5.0, prm) == 0.0
        assert phi(5.0, 0.0, prm) == 0.0


def test_phi_matches_bisection_oracle():
    rng = np.random.default_rng(1)
    for xi in (0.0, 0.1, 1.0, 10.0):
        prm = make_params(xi=xi)
        for N, P in rng.uniform(0, 10, size=(200, 2)):
            assert phi(N, P, prm) == pytest.approx(phi_bisect(N, P, prm.alpha, prm.gamma, xi), abs=1e-12)


def test_phi_rejects_negative():
    with pytest.raises(DomainError):
        phi(-1.0, 1.0, make_params())


def test_phi_vectorised_and_scalar():
    prm = make_params()
    v = phi(np.array([0.0, 1.0]), np.array([1.0, 1.0]), prm)
    assert v.shape == (2,)
    assert isinstance(phi(1.0, 1.0, prm), float)


def test_quadratic_residual_examples():
    prm = make_params(alpha=1.0, gamma=1.0, xi=1.0)
    assert quadratic_residual(1.0, 1.0, 1.0, prm) == pytest.approx(-1.0)
    assert quadratic_residual(0.0, 0.0, 3.0, prm) == 0.0
    assert abs(quadratic_residual(phi(1.0, 1.0, prm), 1.0, 1.0, prm)) < 1e-15
    with pytest.raises(DomainError):
        quadratic_residual(0.1, 1.0, 1.0, make_params(xi=0.0))


@settings(max_examples=300)
@given(dens, dens, st.sampled_from([0.1, 1.0, 10.0]))
def test_phi_root_and_bounds(N, P, xi):
    prm = make_params(xi=xi)
    r = phi(N, P, prm)
    assert abs(quadratic_residual(r, N, P, prm)) <= 1e-12 * (1 + prm.alpha * N * P)
    assert 0.0 <= r <= min(P, prm.alpha * N / (prm.gamma * xi)) + 1e-15


@given(dens, dens, st.sampled_from([0.0, 1.0]))
def test_on_manifold_residual_vanishes(N, P, xi):
    prm = make_params(xi=xi)
    h = phi(N, P, prm)
    assert abs(slow_manifold_residual(N, P - h, h, prm)) <= 1e-12 * (1 + prm.alpha * N * P)


def test_phi_continuity_in_xi():
    p_small = make_params(xi=1e-8)
    p0 = make_params(xi=0.0)
    N, P = np.meshgrid(np.linspace(0, 10, 60), np.linspace(0, 10, 60))
    assert np.all(np.abs(phi(N, P, p_small) - phi(N, P, p0)) <= 1e-6 * (1 + P))


def test_reaction_limit_examples():
    prm = make_params(xi=0.0, alpha=1.0, gamma=1.0, r0=1.0, eta=1.0, mu=1.0, Gamma=1.0)
    assert reaction_limit(0.0, 0.0, prm) == (0.0, 0.0)
    dN, dP = reaction_limit(1.0, 2.0, prm)
    assert dN == pytest.approx(-1.0)
    assert dP == pytest.approx(-1.0)
    N = np.linspace(0, 5, 20)
    _, dP = reaction_limit(N, np.full_like(N, 3.0), prm)
    assert np.all(dP <= 0)


def test_reaction_limit_xi_positive_uses_phi():
    prm = make_params()
    dN, dP = reaction_limit(0.7, 0.9, prm)
    h = phi(0.7, 0.9, prm)
    assert dN == pytest.approx(prm.r0 * (1 - 0.7) * 0.7 - prm.gamma * h)
    assert dP == pytest.approx(prm.Gamma * h - prm.mu * 0.9)


def test_duality_condition_examples():
    eq = check_duality_condition(make_params(d2=0.1, d3=0.1, allow_d3_ge_d2=True), 100.0, 1.1)
    assert eq.holds and eq.ratio == 0.0
    a = check_duality_condition(make_params(d2=3.0, d3=1.0), 1.0, 1.2)
    assert a.holds and a.ratio == pytest.approx(0.5) and a.margin == pytest.approx(0.5)
    assert a.q0 == pytest.approx(6.0)
    b = check_duality_condition(make_params(d2=3.0, d3=1.0), 3.0, 1.2)
    assert not b.holds and b.margin == pytest.approx(1 / 3 - 0.5)


def test_duality_condition_rejects_bad_exponent():
    for q in (1.0, 1.25, 2.0):
        with pytest.raises(DomainError):
            check_duality_condition(make_params(), 1.0, q)
    with pytest.raises(DomainError):
        check_duality_condition(make_params(), 0.0, 1.1)
