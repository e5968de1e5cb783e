import numpy as np
import pytest

from fastlim.grid import Grid
from fastlim.kinetics import Parameters

DEFAULT = dict(d1=0.05, d2=0.1, d3=0.03, r0=2.0, eta=1.0, alpha=3.0, xi=1.0,
               gamma=1.0, Gamma=1.5, mu=0.4)


def make_params(**kw) -> Parameters:
    base = dict(DEFAULT)
    base.update(kw)
    return Parameters(**base)


@pytest.fixture
def prm():
    return make_params()


@pytest.fixture
def prm0():
    return make_params(xi=0.0, p_energy=1.1)


@pytest.fixture
def grid64():
    return Grid.uniform(1.0, 64)


def smooth_initial(grid):
    x = grid.coords()[0]
    return 0.5 + 0.3 * np.cos(np.pi * x), 0.6 + 0.2 * np.cos(2 * np.pi * x)


PARAM_YAML = """parameters:
  d1: 0.05
  d2: 0.1
  d3: 0.03
  r0: 2.0
  eta: 1.0
  alpha: 3.0
  xi: {xi}
  gamma: 1.0
  Gamma: 1.5
  mu: 0.4
"""

SMALL_PLAN = PARAM_YAML + """name: small
eps: [1.0e-1, 1.0e-2, 1.0e-3]
grid:
  cells: 16
solver:
  dt: 2.0e-3
  t_end: 0.1
  stride: 5
initial:
  N: "0.5 + 0.3*cos(pi*x)"
  P: "0.6 + 0.2*cos(2*pi*x)"
"""


def small_plan_text(xi: float = 1.0, extra: str = "") -> str:
    return SMALL_PLAN.format(xi=xi) + extra


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
