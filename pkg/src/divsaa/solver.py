"""Sample Average Approximation of risk-averse programs over a parameter box.

The inner problem over ``x`` is solved exactly per ``theta`` (closed form or
bisection); the outer problem over ``theta`` by an exhaustive tensor grid
followed by coordinate pattern search from the best grid points.  The goal may
be discontinuous in ``theta``, so no derivatives are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .divergence import DivergencePair, risk_batch
from .errors import ConfigError, NonUniqueOptimum
from .models import GoalModel

__all__ = [
    "SolveConfig",
    "SaaSolution",
    "PopulationSolution",
    "saa_objective",
    "saa_objective_batch",
    "solve_saa",
    "solve_population",
]

_TIE = 1e-12
_AGREE = 1e-6
_X_UNIQUE = 1e-6


@dataclass(frozen=True)
class SolveConfig:
    grid_points_per_dim: int = 33
    multistart_k: int = 5
    pattern_iters: int = 200
    pattern_tol: float = 1e-8
    inner_tol: float = 1e-10
    chunk: int = 256

    def __post_init__(self):
        if self.grid_points_per_dim < 3:
            raise ConfigError("grid_points_per_dim must be at least 3")
        for name in ("multistart_k", "pattern_iters", "chunk"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not (self.pattern_tol > 0 and self.inner_tol > 0):
            raise ConfigError("tolerances must be positive")


@dataclass(frozen=True)
class SaaSolution:
    theta_hat: Tuple[float, ...]
    x_hat: float
    value: float
    evals: int
    restarts_agree: bool
    x_lo: float
    x_hi: float

    @property
    def x_unique(self) -> bool:
        return self.x_hi - self.x_lo <= _X_UNIQUE

    def to_dict(self) -> dict:
        return {
            "theta_hat": list(self.theta_hat),
            "x_hat": self.x_hat,
            "x_interval": [self.x_lo, self.x_hi],
            "x_unique": self.x_unique,
            "value": self.value,
            "evals": self.evals,
            "restarts_agree": self.restarts_agree,
        }


@dataclass(frozen=True)
class PopulationSolution:
    theta: Tuple[float, ...]
    x: float
    value: float
    unique: bool
    nodes: int
    refined: Tuple[Tuple[Tuple[float, ...], float], ...] = field(default=(), repr=False)

    def require_unique(self) -> "PopulationSolution":
        if not self.unique:
            raise NonUniqueOptimum(
                "population optimum is not unique; experiments need a single theta*"
            )
        return self


def saa_objective_batch(model: GoalModel, spec: DivergencePair, sample, thetas, tol: float = 1e-10):
    """Risk of the transformed sample at each row of ``thetas``.

    Returns ``(value, x_lo, x_hi)`` arrays.
    """
    Y = model.goal.values(np.asarray(thetas, dtype=float).reshape(-1, model.m), sample)
    return risk_batch(Y, spec, tol)


def saa_objective(model: GoalModel, spec: DivergencePair, sample, theta, tol: float = 1e-10):
    """``(value, x_hat)`` of the empirical risk at a single ``theta``."""
    v, lo, hi = saa_objective_batch(model, spec, sample, theta, tol)
    return float(v[0]), float(0.5 * (lo[0] + hi[0]))


def _grid(model: GoalModel, points: int) -> np.ndarray:
    axes = [np.linspace(l, h, points) for l, h in zip(model.box.lower, model.box.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.m)


def _best_index(values: np.ndarray, thetas: np.ndarray) -> int:
    """Smallest value; near-ties go to the lexicographically smallest theta."""
    best = np.min(values)
    tied = np.flatnonzero(values <= best + _TIE)
    if tied.size == 1:
        return int(tied[0])
    keys = thetas[tied]
    order = np.lexsort(keys.T[::-1])
    return int(tied[order[0]])


class _Evaluator:
    def __init__(self, model, spec, sample, cfg):
        self.model, self.spec, self.sample, self.cfg = model, spec, sample, cfg
        self.count = 0

    def __call__(self, thetas: np.ndarray):
        self.count += thetas.shape[0]
        out = [saa_objective_batch(self.model, self.spec, self.sample,
                                   thetas[i:i + self.cfg.chunk], self.cfg.inner_tol)
               for i in range(0, thetas.shape[0], self.cfg.chunk)]
        return tuple(np.concatenate(parts) for parts in zip(*out))


def _pattern_search(ev: _Evaluator, box, theta0, f0, lo0, hi0, step0, cfg: SolveConfig):
    theta = theta0.copy()
    f, xlo, xhi = f0, lo0, hi0
    step = step0.copy()
    m = theta.size
    for _ in range(cfg.pattern_iters):
        if np.max(step) < cfg.pattern_tol:
            break
        cands = []
        for k in range(m):
            if step[k] == 0.0:
                continue
            for sgn in (-1.0, 1.0):
                c = theta.copy()
                c[k] += sgn * step[k]
                c = box.clip(c)
                if not np.array_equal(c, theta):
                    cands.append(c)
        if not cands:
            step = step / 2.0
            continue
        C = np.array(cands)
        vals, los, his = ev(C)
        j = _best_index(vals, C)
        if vals[j] < f:
            theta, f, xlo, xhi = C[j], float(vals[j]), float(los[j]), float(his[j])
        else:
            step = step / 2.0
    return theta, f, xlo, xhi


def _multistart(model: GoalModel, spec: DivergencePair, sample, cfg: SolveConfig):
    ev = _Evaluator(model, spec, sample, cfg)
    grid = _grid(model, cfg.grid_points_per_dim)
    vals, los, his = ev(grid)
    keys = [grid[:, k] for k in range(model.m - 1, -1, -1)] + [vals]
    order = np.lexsort(keys)[: cfg.multistart_k]
    step0 = (model.box.hi - model.box.lo) / (cfg.grid_points_per_dim - 1)
    refined = []
    for idx in order:
        refined.append(_pattern_search(ev, model.box, grid[idx], float(vals[idx]),
                                       float(los[idx]), float(his[idx]), step0, cfg))
    return refined, ev.count


def _pick(refined):
    thetas = np.array([r[0] for r in refined])
    values = np.array([r[1] for r in refined])
    return _best_index(values, thetas), values


def solve_saa(model: GoalModel, spec: Optional[DivergencePair], sample,
              cfg: Optional[SolveConfig] = None) -> SaaSolution:
    """Minimize the empirical risk ``theta -> rho(G(theta, Z_i))`` over the box."""
    cfg = cfg or SolveConfig()
    spec = spec or model.risk
    sample = np.asarray(sample, dtype=float).reshape(-1, model.d)
    refined, evals = _multistart(model, spec, sample, cfg)
    j, values = _pick(refined)
    theta, f, xlo, xhi = refined[j]
    agree = bool(np.all(np.abs(values - f) <= _AGREE))
    return SaaSolution(tuple(float(t) for t in theta), 0.5 * (xlo + xhi), float(f), evals,
                       agree, float(xlo), float(xhi))


def solve_population(model: GoalModel, spec: Optional[DivergencePair] = None, nodes: int = 100_000,
                     cfg: Optional[SolveConfig] = None) -> PopulationSolution:
    """Same search as :func:`solve_saa` with the population risk as objective.

    The population risk is evaluated on equally weighted quadrature nodes of
    the noise law.  Two refined optima further apart than 1e-3 in theta with
    values within 1e-9 mark the optimum as non-unique.
    """
    cfg = cfg or SolveConfig()
    spec = spec or model.risk
    z = model.noise.nodes(nodes)
    refined, _ = _multistart(model, spec, z, cfg)
    j, values = _pick(refined)
    theta, f, xlo, xhi = refined[j]
    unique = True
    for other in refined:
        if abs(other[1] - f) < 1e-9 and np.max(np.abs(other[0] - theta)) > 1e-3:
            unique = False
    if xhi - xlo > _X_UNIQUE:
        unique = False
    return PopulationSolution(tuple(float(t) for t in theta), 0.5 * (xlo + xhi), float(f), unique,
                              int(z.shape[0]),
                              tuple((tuple(map(float, r[0])), float(r[1])) for r in refined))
