"""Piecewise-deterministic simulation of the measure-valued branching process.

Between events the density follows the Robin heat flow

    ρ' = ½Δρ - αρ  in (0, 1),   ∂_ν ρ = b ρ  on {0, 1},

and at a boundary point y events arrive at rate ½ρ(y)(Σw_i + g(y)):
a fraction Σw_i/(Σw_i + g(y)) of them add mass s_i (chosen ∝ w_i) at y,
the rest kill the path. These are exactly the rates that reproduce the
generator on exponentials, including the ½ that comes with ½Δ.

The flow is propagated exactly in the eigenbasis of the semi-discrete
operator, so deposited point masses never produce negative densities.
Event times are sampled by thinning with a windowed rate bound.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time as _time
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .grid1d import Grid1D, GridFunction, RobinHeatSemigroup
from .measures import Measure
from .pde import NeumannProblem

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PdmpState:
    mu: Measure
    time: float = 0.0
    alive: bool = True

    def __post_init__(self):
        if self.mu.atoms:
            object.__setattr__(self, "mu", self.mu.deposited())


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    dt_flow is the thinning window. Any positive value is exact in
    distribution; windows much longer than 1/(event rate) only waste
    rejected candidates, and the bound is refreshed at every window.
    """

    dt_flow: float = 1.0 / 256
    n_paths: int = 1000
    master_seed: int = 0
    t_end: float = 1.0
    safety: float = 1.5
    n_workers: int = 1
    # negative control: run the flow with +α instead of -α
    flip_decay_sign: bool = False

    def __post_init__(self):
        if not self.dt_flow > 0:
            raise ValueError(f"dt_flow must be positive, got {self.dt_flow}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if not self.safety > 1:
            raise ValueError("safety factor must exceed 1")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")


@dataclass
class SimResult:
    estimate: float
    std_error: float
    n_paths: int
    seed: int
    config: dict
    n_dead: int = 0
    flags: list[str] = field(default_factory=list)
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("estimate", "std_error"):
            if not math.isfinite(d[k]):
                d[k] = str(d[k])
        return json.dumps(d, sort_keys=True)

    def append_csv(self, path, t: float) -> None:
        path = Path(path)
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["run_id", "t", "estimate", "std_error", "n_paths", "seed"])
            w.writerow([self.run_id, f"{t:.17g}", f"{self.estimate:.17g}",
                        f"{self.std_error:.17g}", self.n_paths, self.seed])


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based substream: Philox keyed by the seed, counter offset by the path."""
    return np.random.Generator(np.random.Philox(key=int(master_seed),
                                                counter=int(path_index) << 192))


@lru_cache(maxsize=32)
def _semigroup(n: int, alpha: float, kappa: float) -> RobinHeatSemigroup:
    return RobinHeatSemigroup(Grid1D(n), alpha, kappa)


def flow_semigroup(p: NeumannProblem, flip_decay_sign: bool = False) -> RobinHeatSemigroup:
    alpha = -p.alpha if flip_decay_sign else p.alpha
    return _semigroup(p.grid.n, alpha, 0.5 * p.mech.b)


def flow_step(p: NeumannProblem, state: PdmpState, dt: float) -> PdmpState:
    """Advance the density by the exact semi-discrete Robin heat flow."""
    if not state.alive:
        raise ValueError("cannot flow a dead state")
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    rho = flow_semigroup(p).propagate(np.array(state.mu.density), dt)
    return PdmpState(Measure(_clip(rho), p.grid), state.time + dt, True)


def jump_rates(p: NeumannProblem, state: PdmpState) -> tuple[float, float]:
    """(branching rate, killing rate) = (½ Σw (ρ(0)+ρ(1)), ½ (g₀ρ(0) + g₁ρ(1)))."""
    if not state.alive:
        raise ValueError("dead state has no rates")
    r0, r1 = state.mu.trace()
    jump = 0.5 * p.mech.total_mass * (r0 + r1)
    kill = 0.5 * (p.g[0] * r0 + p.g[1] * r1)
    return float(jump), float(kill)


def _clip(rho: np.ndarray) -> np.ndarray:
    # modal round-off can leave -1e-16-sized entries
    scale = max(float(np.max(np.abs(rho))), 1e-300)
    if np.min(rho) < -1e-9 * scale:
        raise FloatingPointError(f"flow produced a negative density ({np.min(rho):.3g})")
    return np.maximum(rho, 0.0)


class PdmpEngine:
    """Path mechanics in the eigenbasis of the flow operator.

    State is the modal coefficient vector c; the density is modes @ c.
    """

    def __init__(self, p: NeumannProblem, cfg: SimConfig):
        self.p = p
        self.cfg = cfg
        self.sg = flow_semigroup(p, cfg.flip_decay_sign)
        w = p.grid.weights
        self.ends = np.ascontiguousarray(self.sg.modes[[0, -1], :])
        self.deposit = (self.sg.coeff_map[:, 0] / w[0], self.sg.coeff_map[:, -1] / w[-1])
        self.total_w = p.mech.total_mass
        self.rate_coef = 0.5 * (self.total_w + np.asarray(p.g, dtype=float))
        self.kill_coef = 0.5 * np.asarray(p.g, dtype=float)
        if p.mech.atoms:
            self.size_cdf = np.cumsum(p.mech.masses) / p.mech.total_mass
        self.retries = 0
        self._decay_cache: dict[float, np.ndarray] = {}

    def decay(self, t: float) -> np.ndarray:
        d = self._decay_cache.get(t)
        if d is None:
            d = self.sg.decay(t)
            if len(self._decay_cache) < 64:
                self._decay_cache[t] = d
        return d

    def to_modal(self, rho: np.ndarray) -> np.ndarray:
        return self.sg.to_modal(rho)

    def density(self, c: np.ndarray) -> np.ndarray:
        return _clip(self.sg.from_modal(c))

    def trace(self, c: np.ndarray) -> np.ndarray:
        return np.maximum(self.ends @ c, 0.0)

    def rate(self, c: np.ndarray) -> float:
        return float(self.rate_coef @ self.trace(c))

    def apply_event(self, c: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
        """Resolve an accepted event: None on death, else the post-jump coefficients."""
        tr = self.trace(c)
        jump = 0.5 * self.total_w * tr.sum()
        kill = float(self.kill_coef @ tr)
        u = rng.random()
        if u * (jump + kill) < kill:
            return None
        y = 0 if rng.random() * tr.sum() < tr[0] else 1
        i = int(np.searchsorted(self.size_cdf, rng.random(), side="right"))
        i = min(i, len(self.size_cdf) - 1)
        return c + self.p.mech.sizes[i] * self.deposit[y]

    def window(self, c: np.ndarray, length: float, rng: np.random.Generator
               ) -> tuple[np.ndarray | None, float, bool]:
        """Thin one window of the given length starting from c.

        Returns (state, elapsed, event_happened); state is None after death.
        The rate bound is safety * max(rate at start, rate at end); if a
        candidate exceeds it the window is halved and redrawn.
        """
        while True:
            c_end = self.decay(length) * c
            bound = self.cfg.safety * max(self.rate(c), self.rate(c_end))
            if bound <= 0.0:
                return c_end, length, False
            s = 0.0
            violated = False
            while True:
                s += rng.standard_exponential() / bound
                if s >= length:
                    return c_end, length, False
                c_s = self.sg.decay(s) * c
                r = self.rate(c_s)
                if r > bound:
                    violated = True
                    break
                if rng.random() * bound < r:
                    return self.apply_event(c_s, rng), s, True
            if violated:
                self.retries += 1
                log.info("thinning bound exceeded; retrying window of length %.3g with half length",
                         length)
                length *= 0.5

    def run(self, c: np.ndarray, t0: float, t_end: float, rng: np.random.Generator
            ) -> np.ndarray | None:
        t = t0
        dt = self.cfg.dt_flow
        while t < t_end and c is not None:
            length = min(dt, t_end - t)
            if t_end - t - length < 1e-14 * max(1.0, t_end):
                length = t_end - t
            c, elapsed, _ = self.window(c, length, rng)
            t += elapsed
        return c


class _BaseTrajectory:
    """Event-free trajectory of a fixed initial state, shared by all paths.

    Stores the window grid, piecewise-constant rate envelope and its
    cumulative integral so the first event of each path is drawn by
    inverting the integrated envelope.
    """

    def __init__(self, engine: PdmpEngine, c0: np.ndarray, t_end: float):
        self.engine = engine
        self.c0 = c0
        self.t_end = t_end
        cfg = engine.cfg
        n_win = max(1, int(math.ceil(t_end / cfg.dt_flow - 1e-12)))
        edges = list(np.linspace(0.0, t_end, n_win + 1)) if t_end > 0 else [0.0]
        self.edges, self.env = self._envelope(edges)
        self.cum = np.concatenate([[0.0], np.cumsum(self.env * np.diff(self.edges))])
        self.c_end = engine.decay(t_end) * c0 if t_end > 0 else c0.copy()

    def _rate_at(self, t: float) -> float:
        return self.engine.rate(self.engine.sg.decay(t) * self.c0)

    def _envelope(self, edges: list[float], n_check: int = 8):
        safety = self.engine.cfg.safety
        out_edges = [edges[0]]
        env = []
        stack = list(zip(edges[:-1], edges[1:]))[::-1]
        while stack:
            a, b = stack.pop()
            bound = safety * max(self._rate_at(a), self._rate_at(b))
            probe = [self._rate_at(a + (b - a) * k / n_check) for k in range(1, n_check)]
            if max(probe, default=0.0) > bound and b - a > 1e-9:
                m = 0.5 * (a + b)
                stack.extend([(m, b), (a, m)])
                continue
            out_edges.append(b)
            env.append(bound)
        return np.array(out_edges), np.array(env)

    def first_candidate(self, level: float) -> tuple[float, float]:
        """Time where the integrated envelope reaches level, and the envelope there."""
        if level >= self.cum[-1]:
            return math.inf, 0.0
        k = int(np.searchsorted(self.cum, level, side="right")) - 1
        while self.env[k] <= 0.0:
            k += 1
        t = self.edges[k] + (level - self.cum[k]) / self.env[k]
        return min(t, self.edges[k + 1]), float(self.env[k])


def _simulate_coeffs(engine: PdmpEngine, base: _BaseTrajectory, rng: np.random.Generator
                     ) -> np.ndarray | None:
    level = 0.0
    while True:
        level += rng.standard_exponential()
        tau, bound = base.first_candidate(level)
        if not math.isfinite(tau):
            return base.c_end
        c_tau = engine.sg.decay(tau) * base.c0
        r = engine.rate(c_tau)
        if r > bound:  # envelope was probed densely; this should not happen
            engine.retries += 1
            log.warning("shared envelope exceeded at t=%.6g (rate %.6g > %.6g)", tau, r, bound)
        if rng.random() * bound < r:
            c = engine.apply_event(c_tau, rng)
            if c is None:
                return None
            return engine.run(c, tau, base.t_end, rng)


def _initial_coeffs(engine: PdmpEngine, mu0: Measure) -> np.ndarray:
    if mu0.grid.n != engine.p.grid.n:
        raise ValueError("initial measure and problem use different grids")
    return engine.to_modal(np.array(mu0.deposited().density))


def step_event(p: NeumannProblem, state: PdmpState, rng: np.random.Generator,
               cfg: SimConfig | None = None) -> PdmpState:
    """Advance by one thinning window of length cfg.dt_flow (shorter if an event occurs)."""
    if not state.alive:
        raise ValueError("cannot step a dead state")
    cfg = cfg or SimConfig()
    eng = PdmpEngine(p, cfg)
    c = eng.to_modal(np.array(state.mu.density))
    c, elapsed, _ = eng.window(c, cfg.dt_flow, rng)
    if c is None:
        return PdmpState(Measure.zero(p.grid), state.time + elapsed, False)
    return PdmpState(Measure(eng.density(c), p.grid), state.time + elapsed, True)


def simulate_path(p: NeumannProblem, mu0: Measure, t: float, cfg: SimConfig,
                  path_index: int, *, _cache: dict | None = None) -> PdmpState:
    """Terminal state of path number path_index; a pure function of (cfg, path_index)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    engine, base = _engine_and_base(p, mu0, t, cfg, _cache)
    c = _simulate_coeffs(engine, base, path_rng(cfg.master_seed, path_index))
    if c is None:
        return PdmpState(Measure.zero(p.grid), t, False)
    return PdmpState(Measure(engine.density(c), p.grid), t, True)


def _engine_and_base(p, mu0, t, cfg, cache):
    if cache is not None and "engine" in cache:
        return cache["engine"], cache["base"]
    engine = PdmpEngine(p, cfg)
    base = _BaseTrajectory(engine, _initial_coeffs(engine, mu0), t)
    if cache is not None:
        cache.update(engine=engine, base=base)
    return engine, base


def _path_values(p, mu0, f_values, t, cfg, start, stop):
    """(e^{-<f, ρ_T>} or 0 if dead, death indicator) for paths start..stop-1."""
    engine, base = _engine_and_base(p, mu0, t, cfg, None)
    fw = (p.grid.weights * f_values) @ engine.sg.modes
    vals = np.empty(stop - start)
    dead = np.zeros(stop - start, dtype=bool)
    base_val = math.exp(-float(fw @ base.c_end))
    for k, i in enumerate(range(start, stop)):
        c = _simulate_coeffs(engine, base, path_rng(cfg.master_seed, i))
        if c is None:
            vals[k] = 0.0
            dead[k] = True
        elif c is base.c_end:
            vals[k] = base_val
        else:
            vals[k] = math.exp(-max(float(fw @ c), 0.0))
    return vals, dead, engine.retries


def _chunks(n: int, k: int) -> list[tuple[int, int]]:
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def sample_laplace(p: NeumannProblem, mu0: Measure, f: GridFunction, t: float,
                   cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-path samples of e_f(X_t)·1{t < ζ}, in path order."""
    if np.any(f.values < 0):
        raise ValueError("f must be nonnegative")
    fv = np.array(f.values)
    chunks = _chunks(cfg.n_paths, cfg.n_workers)
    if cfg.n_workers == 1 or len(chunks) == 1:
        parts = [_path_values(p, mu0, fv, t, cfg, a, b) for a, b in chunks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as ex:
            futs = [ex.submit(_path_values, p, mu0, fv, t, cfg, a, b) for a, b in chunks]
            parts = [fu.result() for fu in futs]
    vals = np.concatenate([v for v, _, _ in parts])
    dead = np.concatenate([d for _, d, _ in parts])
    return vals, dead, sum(r for _, _, r in parts)


def log_mean_estimate(vals: np.ndarray) -> tuple[float, float, list[str]]:
    """-ln(mean) with the delta-method standard error std/(sqrt(n)·mean)."""
    n = len(vals)
    mean = float(np.mean(vals))
    if mean <= 0.0:
        return math.inf, math.inf, ["all_paths_dead"]
    sd = float(np.std(vals, ddof=1)) if n > 1 else 0.0
    return 0.0 - math.log(mean), sd / (math.sqrt(n) * mean), []


def mc_log_laplace(p: NeumannProblem, mu0: Measure, f: GridFunction, t: float,
                   cfg: SimConfig) -> SimResult:
    """Monte Carlo estimate of -ln E_{μ0}[e_f(X_t); t < ζ]."""
    t0 = _time.perf_counter()
    vals, dead, retries = sample_laplace(p, mu0, f, t, cfg)
    est, se, flags = log_mean_estimate(vals)
    if retries:
        flags.append(f"thinning_retries={retries}")
    conf = asdict(cfg) | {"t": t, "alpha": p.alpha, "g": list(p.g), "n_grid": p.grid.n,
                          "mechanism": p.mech.to_dict(),
                          "elapsed_s": round(_time.perf_counter() - t0, 3)}
    return SimResult(est, se, cfg.n_paths, cfg.master_seed, conf, int(dead.sum()), flags)


def first_moment_mass(p: NeumannProblem, mu0: Measure, t: float) -> float:
    """E[total mass of X_t] for g = 0.

    Linearizing the jumps, mass arrives at y at mean rate ½(Σw_i s_i)ρ(y),
    which acts as an extra Robin coefficient: ∂_ν ρ̄ = (b + Σw_i s_i) ρ̄.
    """
    if any(gv != 0 for gv in p.g):
        raise ValueError("first-moment oracle assumes g = 0")
    kappa = 0.5 * (p.mech.b + p.mech.first_moment)
    sg = _semigroup(p.grid.n, p.alpha, kappa)
    rho = sg.propagate(np.array(mu0.deposited().density), t)
    return float(p.grid.weights @ rho)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
