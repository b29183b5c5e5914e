"""Run configuration: TOML file, schema validation and resolution into model objects.

Example::

    experiment = "interior"
    t = 0.5

    [problem]
    alpha = 0.5
    g = [0.0, 0.0]
    mechanism = { atoms = [[1.0, 0.2]], b = 0.03 }

    [discretization]
    n_grid = 401
    n_steps = 512
    dt = 0.015625

    [simulation]
    n_paths = 100000
    master_seed = 1
    dt_flow = 0.015625

    [input]
    f = "1 + cos(pi*x)"
    mu0 = { dirac = 0.5 }
    m0 = [1.0, 0.0]
    f_boundary = [1.0, 1.0]
"""
from __future__ import annotations

import ast
import copy
import operator
from pathlib import Path

import numpy as np
import tomli

from .grid1d import Grid1D, GridFunction
from .measures import Measure
from .mechanism import BranchingMechanism, truncated_stable
from .pde import NeumannProblem
from .pdmp import SimConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "experiment": "interior",
    "output_dir": "out",
    "t": 0.5,
    "problem": {"alpha": 0.5, "g": [0.0, 0.0], "unsafe": False,
                "mechanism": {"atoms": [[1.0, 0.2]], "b": 0.03}},
    "discretization": {"n_grid": 401, "n_steps": 512, "dt": 1.0 / 64},
    "simulation": {"n_paths": 100000, "master_seed": 1, "dt_flow": 1.0 / 64, "t_end": None,
                   "threads": 1, "flip_decay_sign": False},
    "input": {"f": "1 + cos(pi*x)", "f_file": None, "mu0": {"dirac": 0.5}, "mu0_file": None,
              "m0": [1.0, 0.0], "f_boundary": [1.0, 1.0]},
    "tolerance": {"rel_tol": 0.02, "abs_floor": 0.005, "abs_floor_boundary": 0.0},
}

EXPERIMENTS = ("interior", "boundary")
_MECH_KEYS = ({"atoms", "b"}, {"stable_m", "stable_N", "nodes"})


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base[k], dict) and k != "mechanism" and k != "mu0":
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a table")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Read a TOML file (or the defaults), apply overrides, validate, return the resolved dict."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = _merge(DEFAULTS, raw)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    validate(cfg)
    return cfg


def _number(cfg, block, key, lo=None, integer=False, strict=False):
    v = cfg[block][key] if block else cfg[key]
    name = f"{block}.{key}" if block else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{name}' must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"'{name}' must be an integer")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"'{name}' must be {'>' if strict else '>='} {lo}, got {v}")


def validate(cfg: dict) -> None:
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    _number(cfg, None, "t", 0)
    _number(cfg, "problem", "alpha", 0)
    g = cfg["problem"]["g"]
    if not (isinstance(g, list) and len(g) == 2 and all(isinstance(v, (int, float)) and v >= 0 for v in g)):
        raise ConfigError("problem.g must be a pair of nonnegative numbers")
    mech = cfg["problem"]["mechanism"]
    if not isinstance(mech, dict) or set(mech) not in _MECH_KEYS:
        raise ConfigError("problem.mechanism needs keys {atoms, b} or {stable_m, stable_N, nodes}")
    _number(cfg, "discretization", "n_grid", 4, integer=True)
    _number(cfg, "discretization", "n_steps", 1, integer=True)
    _number(cfg, "discretization", "dt", 0, strict=True)
    sim = cfg["simulation"]
    _number(cfg, "simulation", "n_paths", 1, integer=True)
    _number(cfg, "simulation", "master_seed", 0, integer=True)
    if sim["master_seed"] >= 2**64:
        raise ConfigError("simulation.master_seed must fit in 64 bits")
    _number(cfg, "simulation", "dt_flow", 0, strict=True)
    _number(cfg, "simulation", "threads", 1, integer=True)
    if sim["t_end"] is not None:
        _number(cfg, "simulation", "t_end", 0)
    for key in ("rel_tol", "abs_floor", "abs_floor_boundary"):
        _number(cfg, "tolerance", key, 0)
    inp = cfg["input"]
    for key in ("m0", "f_boundary"):
        v = inp[key]
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(a, (int, float)) and a >= 0 for a in v)):
            raise ConfigError(f"input.{key} must be a pair of nonnegative numbers")
    mu0 = inp["mu0"]
    if inp["mu0_file"] is None and not (isinstance(mu0, dict) and set(mu0) <= {"dirac", "mass", "density"}
                                        and mu0):
        raise ConfigError("input.mu0 must be a table with 'dirac' (and optional 'mass') or 'density'")
    if inp["f_file"] is None:
        if not isinstance(inp["f"], str):
            raise ConfigError("input.f must be an expression string in x")
        parse_expression(inp["f"])


# -- safe expressions in x ---------------------------------------------------

_FUNCS = {name: getattr(np, name) for name in
          ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh",
           "maximum", "minimum")}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_expression(src: str):
    """Compile an arithmetic expression in x into a vectorized callable."""
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {src!r}: {exc.msg}") from exc

    def ev(node, x):
        if isinstance(node, ast.Expression):
            return ev(node.body, x)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id in _CONSTS:
                return _CONSTS[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, x), ev(node.right, x))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand, x))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*(ev(a, x) for a in node.args))
        raise ConfigError(f"unsupported element {ast.dump(node)[:40]} in {src!r}")

    ev(tree, np.linspace(0, 1, 3))
    return lambda x: np.broadcast_to(np.asarray(ev(tree, x), dtype=float), np.shape(x)).copy()


# -- resolution ----------------------------------------------------------------

def build_mechanism(spec: dict) -> BranchingMechanism:
    if "atoms" in spec:
        try:
            return BranchingMechanism(tuple(tuple(a) for a in spec["atoms"]), spec["b"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad mechanism: {exc}") from exc
    return truncated_stable(spec["stable_m"], spec["stable_N"], int(spec["nodes"]))


def build_grid(cfg: dict) -> Grid1D:
    return Grid1D(int(cfg["discretization"]["n_grid"]))


def build_problem(cfg: dict) -> NeumannProblem:
    pr = cfg["problem"]
    return NeumannProblem(float(pr["alpha"]), build_mechanism(pr["mechanism"]), tuple(pr["g"]),
                          build_grid(cfg), unsafe=bool(pr["unsafe"]))


def build_f(cfg: dict, grid: Grid1D) -> GridFunction:
    inp = cfg["input"]
    if inp["f_file"] is not None:
        f = GridFunction.from_csv(inp["f_file"])
        if f.grid.n != grid.n:
            raise ConfigError(f"f_file has {f.grid.n} nodes but n_grid = {grid.n}")
        return f
    return grid.function(parse_expression(inp["f"]))


def build_mu0(cfg: dict, grid: Grid1D) -> Measure:
    inp = cfg["input"]
    if inp["mu0_file"] is not None:
        mu = Measure.from_files(inp["mu0_file"])
        if mu.grid.n != grid.n:
            raise ConfigError(f"mu0_file has {mu.grid.n} nodes but n_grid = {grid.n}")
        return mu
    spec = inp["mu0"]
    if "density" in spec:
        return Measure.from_density(parse_expression(spec["density"]), grid)
    return Measure.dirac(grid, float(spec["dirac"]), float(spec.get("mass", 1.0)))


def build_sim(cfg: dict) -> SimConfig:
    sim = cfg["simulation"]
    t_end = sim["t_end"] if sim["t_end"] is not None else cfg["t"]
    return SimConfig(dt_flow=float(sim["dt_flow"]), n_paths=int(sim["n_paths"]),
                     master_seed=int(sim["master_seed"]), t_end=float(t_end),
                     n_workers=int(sim["threads"]), flip_decay_sign=bool(sim["flip_decay_sign"]))
