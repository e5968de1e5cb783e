"""Run and experiment-plan configuration: YAML parsing with line-anchored
errors, and safe evaluation of initial-data expressions."""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .diagnostics import beta_schedule
from .grid import Grid
from .kinetics import DomainError, Parameters, phi
from .states import FastState, LimitState, SolverConfig

_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending line."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


# ---------------------------------------------------------------- YAML with line numbers

class _Map:
    """Mapping section that remembers key lines and rejects unknown keys."""

    def __init__(self, items: dict, lines: dict, line: int, path: str):
        self.items = items
        self.lines = lines
        self.line = line
        self.path = path
        self.known: list[str] = []

    def where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def err(self, key: str, msg: str) -> ConfigError:
        return ConfigError(f"{self.where(key)}: {msg}", self.lines.get(key, self.line))

    def has(self, key: str) -> bool:
        return key in self.items

    def take(self, key: str, conv=None, default: Any = _REQUIRED):
        self.known.append(key)
        if key not in self.items:
            if default is _REQUIRED:
                raise ConfigError(f"{self.where(key)}: required key missing", self.line)
            return default
        v = self.items.pop(key)
        if conv is None or v is None and default is None:
            return v
        try:
            return conv(v)
        except ConfigError:
            raise
        except (TypeError, ValueError, DomainError) as exc:
            raise self.err(key, str(exc)) from None

    def section(self, key: str, required: bool = False) -> "_Map":
        self.known.append(key)
        if key not in self.items:
            if required:
                raise ConfigError(f"{self.where(key)}: required section missing", self.line)
            return _Map({}, {}, self.line, self.where(key))
        v = self.items.pop(key)
        if not isinstance(v, _Map):
            raise self.err(key, "expected a mapping")
        return v

    def done(self) -> None:
        if self.items:
            key = min(self.items, key=lambda k: self.lines.get(k, 0))
            raise self.err(key, f"unknown key; expected one of {', '.join(self.known)}")


def _compose(text: str):
    try:
        return yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"parse error: {exc.problem}", mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None


def _convert(node, loader, path: str):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        items, lines = {}, {}
        for knode, vnode in node.value:
            if not isinstance(knode, yaml.ScalarNode):
                raise ConfigError(f"{path or '<root>'}: keys must be plain strings", knode.start_mark.line + 1)
            key = str(loader.construct_object(knode))
            kline = knode.start_mark.line + 1
            if key in items:
                sub = f"{path}.{key}" if path else key
                raise ConfigError(f"duplicate key {sub!r} (first defined on line {lines[key]})", kline)
            lines[key] = kline
            items[key] = _convert(vnode, loader, f"{path}.{key}" if path else key)
        return _Map(items, lines, line, path)
    if isinstance(node, yaml.SequenceNode):
        return [_convert(v, loader, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return loader.construct_object(node)


def load_yaml(text: str) -> _Map:
    node = _compose(text)
    if node is None:
        return _Map({}, {}, 1, "")
    loader = yaml.SafeLoader("")
    root = _convert(node, loader, "")
    if not isinstance(root, _Map):
        raise ConfigError("top level must be a mapping", node.start_mark.line + 1)
    return root


# ---------------------------------------------------------------- value converters

def as_float(v) -> float:
    # YAML 1.1 reads "1e-3" as a string, so numeric strings are accepted
    if isinstance(v, bool):
        raise ValueError(f"expected a number, got {v!r}")
    if isinstance(v, str):
        try:
            v = float(v)
        except ValueError:
            raise ValueError(f"expected a number, got {v!r}") from None
    if not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {v!r}")
    return v


def as_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def as_bool(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true/false, got {v!r}")
    return v


def as_str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(map(str, options))}; got {v!r}")
        return v
    return conv


def float_list(v) -> list[float]:
    if not isinstance(v, list):
        raise ValueError(f"expected a list of numbers, got {v!r}")
    return [as_float(x) for x in v]


def auto_or(conv):
    def inner(v):
        return "auto" if v == "auto" else conv(v)
    return inner


# ---------------------------------------------------------------- initial-data expressions

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def _gauss(u, center, width):
    return np.exp(-0.5 * ((u - center) / width) ** 2)


FUNCTIONS = {
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
    "gauss": _gauss,
    "minimum": np.minimum,
    "maximum": np.maximum,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


def _eval_node(node, env):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        raise ValueError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left, env), _eval_node(node.right, env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand, env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        fn = FUNCTIONS.get(node.func.id)
        if fn is None:
            raise ValueError(f"unknown function {node.func.id!r}")
        return fn(*[_eval_node(a, env) for a in node.args])
    raise ValueError(f"unsupported expression element {type(node).__name__}")


def evaluate_expression(expr: str, grid: Grid) -> np.ndarray:
    """Evaluate an arithmetic expression in x (and y in 2-D) on the cell centres.

    Allowed: numbers, + - * / **, pi, e, L (first-axis length) and the
    functions in ``FUNCTIONS``; gauss(u, c, w) = exp(-((u-c)/w)**2 / 2).
    """
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        expr = repr(float(expr))
    if not isinstance(expr, str):
        raise ValueError(f"expected an expression string, got {expr!r}")
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    coords = grid.coords()
    env = dict(CONSTANTS, L=grid.extent[0], x=coords[0])
    if grid.dim == 2:
        env["y"] = coords[1]
    with np.errstate(all="ignore"):
        val = _eval_node(tree, env)
    val = np.broadcast_to(np.asarray(val, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(val)):
        raise ValueError(f"expression {expr!r} is not finite on the grid")
    if val.min() < 0:
        raise ValueError(f"expression {expr!r} is negative on the grid (min {val.min():.3g})")
    return val


@dataclass(frozen=True)
class InitialData:
    """Expressions for N and either P (split onto the slow manifold) or ps and ph."""

    N: str
    P: str | None = None
    ps: str | None = None
    ph: str | None = None
    perturbation: float = 0.0
    perturb_fields: tuple[str, ...] = ("N",)
    off_manifold: bool = False

    def __post_init__(self):
        if (self.P is None) == (self.ps is None or self.ph is None):
            raise ValueError("give either P, or both ps and ph")
        if self.P is not None and (self.ps is not None or self.ph is not None):
            raise ValueError("give either P, or both ps and ph, not both")
        if not 0.0 <= self.perturbation < 1.0:
            raise ValueError("perturbation amplitude must lie in [0, 1)")
        allowed = ("N", "P") if self.P is not None else ("N", "ps", "ph")
        bad = [f for f in self.perturb_fields if f not in allowed]
        if bad:
            raise ValueError(f"cannot perturb {bad}; allowed fields are {allowed}")

    @property
    def splits_on_manifold(self) -> bool:
        return self.P is not None

    def fields(self, grid: Grid, seed: int = 0) -> dict[str, np.ndarray]:
        names = ("N", "P") if self.P is not None else ("N", "ps", "ph")
        out = {n: evaluate_expression(getattr(self, n), grid) for n in names}
        if self.perturbation > 0:
            rng = np.random.default_rng(seed)
            for n in names:
                # one draw per field in a fixed order, so results do not depend on perturb_fields
                u = rng.uniform(-1.0, 1.0, size=grid.shape)
                if n in self.perturb_fields:
                    out[n] = out[n] * (1.0 + self.perturbation * u)
        return out

    def fast_state(self, grid: Grid, prm: Parameters, seed: int = 0) -> FastState:
        f = self.fields(grid, seed)
        if "P" in f:
            ph = phi(f["N"], f["P"], prm)
            return FastState(0.0, f["N"], np.maximum(f["P"] - ph, 0.0), ph, grid)
        return FastState(0.0, f["N"], f["ps"], f["ph"], grid)

    def limit_state(self, grid: Grid, prm: Parameters, seed: int = 0) -> LimitState:
        f = self.fields(grid, seed)
        P = f["P"] if "P" in f else f["ps"] + f["ph"]
        return LimitState(0.0, f["N"], P, grid)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def manifold_defect(st: FastState, prm: Parameters) -> float:
    """max |ph - phi(N, ps+ph)|; zero for well-prepared data."""
    return float(np.max(np.abs(st.ph - phi(st.N, st.P, prm))))


# ---------------------------------------------------------------- sections shared by run configs and plans

PARAM_KEYS = ("d1", "d2", "d3", "r0", "eta", "alpha", "xi", "gamma", "Gamma", "mu")


def _parameters(sec: _Map, allow_eps: bool = True) -> Parameters:
    vals = {k: sec.take(k, as_float) for k in PARAM_KEYS}
    if allow_eps:
        vals["eps"] = sec.take("eps", as_float, 1.0)
    elif sec.has("eps"):
        raise sec.err("eps", "eps is set by the plan's eps list, not in parameters")
    p = sec.take("p_energy", auto_or(as_float), "auto")
    vals["p_energy"] = (2.0 if vals["xi"] > 0 else 1.1) if p == "auto" else p
    vals["allow_d3_ge_d2"] = sec.take("allow_d3_ge_d2", as_bool, False)
    try:
        prm = Parameters(**vals)
    except DomainError as exc:
        name = str(exc).split()[1] if str(exc).startswith("parameter ") else ""
        raise ConfigError(f"{sec.where(name) if name else sec.path}: {exc}",
                          sec.lines.get(name, sec.line)) from None
    sec.done()
    return prm


def _grid(sec: _Map) -> Grid:
    dim = sec.take("dim", as_int, 1)
    length = sec.take("length", as_float, 1.0)
    cells = sec.take("cells", as_int, 128)
    sec.done()
    if dim not in (1, 2):
        raise ConfigError(f"{sec.where('dim')}: must be 1 or 2", sec.lines.get("dim", sec.line))
    try:
        return Grid.uniform(length, cells, dim)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}", sec.line) from None


def _solver(sec: _Map, grid: Grid, prm: Parameters) -> SolverConfig:
    kw = dict(
        dt=sec.take("dt", as_float),
        t_end=sec.take("t_end", as_float, 1.0),
        splitting=sec.take("splitting", choice("strang", "lie"), "strang"),
        diffusion=sec.take("diffusion", choice("implicit", "explicit"), "implicit"),
        stride=sec.take("stride", as_int, 1),
        cross_bound=sec.take("cross_bound", as_float, 1.0),
    )
    sec.done()
    try:
        cfg = SolverConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}", sec.line) from None
    if cfg.diffusion == "explicit":
        lim = min(grid.h) ** 2 / (2 * grid.dim * max(prm.d1, prm.d2, prm.d3))
        if cfg.dt > lim:
            raise ConfigError(f"{sec.where('dt')}: explicit diffusion needs dt <= {lim:g}",
                              sec.lines.get("dt", sec.line))
    return cfg


def _initial(sec: _Map, grid: Grid) -> InitialData:
    kw = {k: sec.take(k, lambda v: v if isinstance(v, str) else repr(as_float(v)), None)
          for k in ("N", "P", "ps", "ph")}
    pert = sec.section("perturbation")
    kw["perturbation"] = pert.take("amplitude", as_float, 0.0)
    fields_ = pert.take("fields", lambda v: tuple(as_str(x) for x in v), ("N",))
    kw["perturb_fields"] = fields_
    pert.done()
    kw["off_manifold"] = sec.take("off_manifold", as_bool, False)
    if kw["N"] is None:
        raise ConfigError(f"{sec.where('N')}: required key missing", sec.line)
    try:
        data = InitialData(**kw)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}", sec.line) from None
    for k in ("N", "P", "ps", "ph"):
        expr = getattr(data, k)
        if expr is not None:
            try:
                evaluate_expression(expr, grid)
            except ValueError as exc:
                raise ConfigError(f"{sec.where(k)}: {exc}", sec.lines.get(k, sec.line)) from None
    sec.done()
    return data


def default_beta(prm: Parameters, p: float) -> float:
    """beta = 0 when xi > 0; the eps-dependent schedule when xi = 0."""
    if prm.xi > 0 or p > 2:
        return 0.0
    return beta_schedule(prm.eps, p)


# ---------------------------------------------------------------- run configuration

@dataclass(frozen=True)
class RunConfig:
    params: Parameters
    grid: Grid
    solver: SolverConfig
    initial: InitialData
    seed: int = 0
    beta: float = 0.0
    diagnostics: tuple[str, ...] | None = None
    out_dir: Path = Path("fastlim-out")
    snapshots: str = "all"

    def fast_state(self) -> FastState:
        return self.initial.fast_state(self.grid, self.params, self.seed)

    def limit_state(self) -> LimitState:
        return self.initial.limit_state(self.grid, self.params, self.seed)


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse a single-run configuration.

    Relative output paths are resolved against ``base_dir`` (default: the
    current directory) so that every path is absolute after parsing.
    """
    root = load_yaml(text)
    prm = _parameters(root.section("parameters", required=True))
    grid = _grid(root.section("grid"))
    solver = _solver(root.section("solver", required=True), grid, prm)
    initial = _initial(root.section("initial", required=True), grid)
    seed = root.take("seed", as_int, 0)
    diag = root.section("diagnostics")
    beta = diag.take("beta", auto_or(as_float), "auto")
    beta = default_beta(prm, prm.p_energy) if beta == "auto" else beta
    if beta < 0:
        raise ConfigError("diagnostics.beta: must be >= 0", diag.lines.get("beta", diag.line))
    names = diag.take("stream", lambda v: "all" if v == "all" else tuple(as_str(x) for x in v), "all")
    diag.done()
    out = root.section("output")
    out_dir = out.take("dir", as_str, "fastlim-out")
    snapshots = out.take("snapshots", choice("all", "final", "none"), "all")
    out.done()
    root.done()
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    out_path = (base / out_dir).resolve()
    if out_path.exists() and not out_path.is_dir():
        raise ConfigError(f"output.dir: {out_path} exists and is not a directory",
                          out.lines.get("dir", out.line))
    return RunConfig(
        params=prm,
        grid=grid,
        solver=solver,
        initial=initial,
        seed=seed,
        beta=beta,
        diagnostics=None if names == "all" else names,
        out_dir=out_path,
        snapshots=snapshots,
    )


# ---------------------------------------------------------------- experiment plans

@dataclass(frozen=True)
class Acceptance:
    """Pass/fail thresholds evaluated after a sweep; ``None`` disables a check."""

    min_slope: float | None = None
    residual_strictly_decreasing: bool = True
    limit_error_monotone: bool = True
    self_convergence_factor: float | None = 5.0
    positivity: bool = True
    mass_inequality: bool = True
    max_principle: bool = True
    dissipation_nonnegative: bool = True


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    params: Parameters
    eps: tuple[float, ...]
    grid: Grid
    solver: SolverConfig
    initial: InitialData
    seed: int = 0
    residual_exponent: float | None = None
    t0: float = 0.0
    beta: float | str = "auto"
    compare_limit: bool = True
    self_convergence: bool = True
    c_mr: float | None = None
    q0_prime: float | None = None
    acceptance: Acceptance = field(default_factory=Acceptance)
    out_dir: Path | None = None
    snapshots: str = "final"
    jobs: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if len(eps) < 3:
            raise ValueError("eps list needs at least 3 entries")
        if any(e <= 0 for e in eps):
            raise ValueError("eps values must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError(f"eps list must be strictly decreasing, got {list(eps)}")
        if self.compare_limit and not self.initial.splits_on_manifold and not self.initial.off_manifold:
            raise ValueError(
                "limit comparison with explicit ps/ph needs initial.off_manifold: true "
                "(or give P to start on the slow manifold)"
            )
        if (self.c_mr is None) != (self.q0_prime is None):
            raise ValueError("duality check needs both c_mr and q0_prime")
        if not 0.0 <= self.t0 < self.solver.t_end:
            raise ValueError("t0 must lie in [0, t_end)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def norm_exponent(self) -> float:
        """L^2 for xi > 0, L^(4/3) for xi = 0, unless set explicitly."""
        if self.residual_exponent is not None:
            return self.residual_exponent
        return 2.0 if self.params.xi > 0 else 4.0 / 3.0

    def params_for(self, eps: float) -> Parameters:
        return self.params.with_(eps=eps)

    def beta_for(self, eps: float) -> float:
        if self.beta == "auto":
            return default_beta(self.params_for(eps), self.params.p_energy)
        return float(self.beta)


def parse_plan(text: str, base_dir=None) -> ExperimentPlan:
    root = load_yaml(text)
    name = root.take("name", as_str, "plan")
    prm = _parameters(root.section("parameters", required=True), allow_eps=False)
    eps_line = root.lines.get("eps", root.line)
    eps = root.take("eps", float_list)
    grid = _grid(root.section("grid"))
    solver = _solver(root.section("solver", required=True), grid, prm)
    initial = _initial(root.section("initial", required=True), grid)
    seed = root.take("seed", as_int, 0)
    jobs = root.take("jobs", as_int, 1)

    norms = root.section("norms")
    expo = norms.take("residual_exponent", auto_or(as_float), "auto")
    t0 = norms.take("t0", as_float, 0.0)
    beta = norms.take("beta", auto_or(as_float), "auto")
    norms.done()

    lim = root.section("limit")
    compare = lim.take("enabled", as_bool, True)
    selfconv = lim.take("self_convergence", as_bool, compare)
    lim.done()

    dual = root.section("duality")
    c_mr = dual.take("c_mr", as_float, None)
    q0p = dual.take("q0_prime", as_float, None)
    dual.done()

    acc = root.section("acceptance")
    acceptance = Acceptance(
        min_slope=acc.take("min_slope", as_float, None),
        residual_strictly_decreasing=acc.take("residual_strictly_decreasing", as_bool, True),
        limit_error_monotone=acc.take("limit_error_monotone", as_bool, compare),
        self_convergence_factor=acc.take("self_convergence_factor", as_float, 5.0 if selfconv else None),
        positivity=acc.take("positivity", as_bool, True),
        mass_inequality=acc.take("mass_inequality", as_bool, True),
        max_principle=acc.take("max_principle", as_bool, True),
        dissipation_nonnegative=acc.take("dissipation_nonnegative", as_bool, True),
    )
    acc.done()

    out = root.section("output")
    out_dir = out.take("dir", as_str, None)
    snapshots = out.take("snapshots", choice("all", "final", "none"), "final")
    out.done()
    root.done()
    if out_dir is not None:
        out_dir = ((Path(base_dir) if base_dir is not None else Path.cwd()) / out_dir).resolve()
    try:
        return ExperimentPlan(
            name=name, params=prm, eps=tuple(eps), grid=grid, solver=solver, initial=initial,
            seed=seed, residual_exponent=None if expo == "auto" else expo, t0=t0, beta=beta,
            compare_limit=compare, self_convergence=selfconv, c_mr=c_mr, q0_prime=q0p,
            acceptance=acceptance, out_dir=out_dir, snapshots=snapshots, jobs=jobs,
        )
    except ValueError as exc:
        line = eps_line if "eps" in str(exc) else root.line
        raise ConfigError(str(exc), line) from None


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    return parse_plan(path.read_text(), base_dir=path.parent)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
