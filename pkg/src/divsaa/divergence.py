"""Divergence risk measures evaluated through the optimized certainty equivalent.

A divergence generator ``phi`` on ``[0, inf)`` has a Fenchel-Legendre transform
``phi_star`` that is finite, convex and nondecreasing with ``phi_star(0) == 0``.
The risk of a random outcome ``Y`` is

    rho(Y) = inf_x  E[phi_star(Y + x)] - x,

a one-dimensional convex minimization.  This module evaluates the objective,
its one-sided derivatives, an explicit bracket for the set of minimizers, and
the minimizer interval itself, plus closed forms for Average Value at Risk and
the entropic risk measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .errors import (
    BracketUnavailableError,
    EmptySampleError,
    NumericOverflowError,
    UnboundedSupportError,
)

__all__ = [
    "DivergencePair",
    "avar",
    "entropic",
    "polynomial",
    "custom",
    "EmpiricalSample",
    "OceResult",
    "oce_objective",
    "oce_subgradient",
    "minimizer_bracket",
    "oce_minimize",
    "avar_closed_form",
    "entropic_closed_form",
    "evaluate_risk",
    "risk_batch",
    "population_oce",
    "midpoint_nodes",
]

# exp() overflows a double just above 709.78
_EXP_LIMIT = 700.0
_MAX_BISECTIONS = 200
_MAX_DOUBLINGS = 60


# ---------------------------------------------------------------------------
# Divergence pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DivergencePair:
    """A divergence generator together with its conjugate and derivatives.

    Built-in kinds are ``"avar"`` (parameter alpha), ``"entropic"``
    (parameter gamma) and ``"polynomial"`` (parameter p).  A ``"custom"`` pair
    carries user callables in ``funcs``; those should be module-level
    functions if the pair is sent to worker processes.
    """

    kind: str
    param: Optional[float] = None
    funcs: Optional[dict] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "avar":
            if self.param is None or not 0.0 < self.param < 1.0:
                raise ValueError(f"avar needs alpha in (0,1), got {self.param}")
        elif self.kind == "entropic":
            if self.param is None or not self.param > 0.0:
                raise ValueError(f"entropic needs gamma > 0, got {self.param}")
        elif self.kind == "polynomial":
            if self.param is None or not self.param > 1.0:
                raise ValueError(f"polynomial needs p > 1, got {self.param}")
        elif self.kind == "custom":
            needed = {"phi", "phi_star", "phi_star_dplus", "phi_star_dminus", "phi_at_zero"}
            missing = needed - set(self.funcs or {})
            if missing:
                raise ValueError(f"custom divergence missing {sorted(missing)}")
        else:
            raise ValueError(f"unknown divergence kind {self.kind!r}")

    # -- generator ---------------------------------------------------------
    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "avar":
            return np.where(x <= 1.0 / (1.0 - self.param), 0.0, np.inf)
        if self.kind == "entropic":
            with np.errstate(divide="ignore", invalid="ignore"):
                xlogx = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
            return (xlogx - x + 1.0) / self.param
        if self.kind == "polynomial":
            return x ** self.param / self.param
        return np.asarray(self.funcs["phi"](x), dtype=float)

    # -- conjugate ---------------------------------------------------------
    def phi_star(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "avar":
            return np.maximum(y, 0.0) / (1.0 - self.param)
        if self.kind == "entropic":
            g = self.param
            with np.errstate(over="ignore"):
                return np.expm1(g * y) / g
        if self.kind == "polynomial":
            p = self.param
            return (p - 1.0) * np.maximum(y, 0.0) ** (p / (p - 1.0)) / p
        return np.asarray(self.funcs["phi_star"](y), dtype=float)

    def phi_star_dplus(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "avar":
            return (y >= 0.0) / (1.0 - self.param)
        if self.kind == "entropic":
            with np.errstate(over="ignore"):
                return np.exp(self.param * y)
        if self.kind == "polynomial":
            return np.maximum(y, 0.0) ** (1.0 / (self.param - 1.0))
        return np.asarray(self.funcs["phi_star_dplus"](y), dtype=float)

    def phi_star_dminus(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "avar":
            return (y > 0.0) / (1.0 - self.param)
        if self.kind in ("entropic", "polynomial"):
            return self.phi_star_dplus(y)
        return np.asarray(self.funcs["phi_star_dminus"](y), dtype=float)

    # -- constants -----------------------------------------------------------
    @property
    def phi_at_zero(self) -> float:
        if self.kind == "entropic":
            return 1.0 / self.param
        if self.kind in ("avar", "polynomial"):
            return 0.0
        return float(self.funcs["phi_at_zero"])

    @property
    def anchor(self) -> Optional[Tuple[float, float]]:
        """A point ``x0 > 1`` in the effective domain of phi and ``phi(x0)``."""
        if self.kind == "avar":
            x0 = 1.0 / (1.0 - self.param)
            return (x0, 0.0)
        if self.kind in ("entropic", "polynomial"):
            return (2.0, float(self.phi(2.0)))
        return self.funcs.get("anchor")

    @property
    def unique_minimizer_flag(self) -> bool:
        """True when phi(0) == 0 and phi_star is strictly convex on (0, inf)."""
        if self.kind == "polynomial":
            return True
        if self.kind in ("avar", "entropic"):
            return False
        return self.phi_at_zero == 0.0 and bool(self.funcs.get("strictly_convex", False))

    @property
    def differentiable_everywhere(self) -> bool:
        return self.kind in ("entropic", "polynomial")

    def describe(self) -> dict:
        names = {"avar": "alpha", "entropic": "gamma", "polynomial": "p"}
        if self.kind in names:
            return {"kind": self.kind, names[self.kind]: self.param}
        return {"kind": "custom"}


def avar(alpha: float) -> DivergencePair:
    return DivergencePair("avar", float(alpha))


def entropic(gamma: float) -> DivergencePair:
    return DivergencePair("entropic", float(gamma))


def polynomial(p: float) -> DivergencePair:
    return DivergencePair("polynomial", float(p))


def custom(
    phi: Callable,
    phi_star: Callable,
    phi_star_dplus: Callable,
    phi_star_dminus: Callable,
    phi_at_zero: float,
    anchor: Optional[Tuple[float, float]] = None,
    strictly_convex: bool = False,
) -> DivergencePair:
    funcs = dict(
        phi=phi,
        phi_star=phi_star,
        phi_star_dplus=phi_star_dplus,
        phi_star_dminus=phi_star_dminus,
        phi_at_zero=phi_at_zero,
        anchor=anchor,
        strictly_convex=strictly_convex,
    )
    return DivergencePair("custom", None, funcs)


# ---------------------------------------------------------------------------
# Samples and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalSample:
    """Equally weighted observations, stored sorted ascending and read-only."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise EmptySampleError("empty sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def shifted(self, c: float) -> "EmpiricalSample":
        return EmpiricalSample(self.values + c)


SampleLike = Union[EmpiricalSample, Sequence[float], np.ndarray]


def _values(sample: SampleLike) -> np.ndarray:
    if isinstance(sample, EmpiricalSample):
        return sample.values
    v = np.asarray(sample, dtype=float).ravel()
    if v.size == 0:
        raise EmptySampleError("empty sample")
    return v


@dataclass(frozen=True)
class OceResult:
    value: float
    x_lo: float
    x_hi: float
    bracket: Tuple[float, float]
    evals: int = 0
    method: str = "generic"

    @property
    def x_mid(self) -> float:
        return 0.5 * (self.x_lo + self.x_hi)

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo


# ---------------------------------------------------------------------------
# Objective, derivatives, bracket
# ---------------------------------------------------------------------------

def _check_entropic_range(y: np.ndarray, spec: DivergencePair, x: float) -> None:
    if spec.kind == "entropic" and spec.param * (float(np.max(y)) + x) > _EXP_LIMIT:
        raise NumericOverflowError(
            "objective overflow: use the log-sum-exp closed form for the entropic measure"
        )


def oce_objective(sample: SampleLike, spec: DivergencePair, x: float) -> float:
    """Return ``mean(phi_star(y + x)) - x``."""
    y = _values(sample)
    _check_entropic_range(y, spec, x)
    val = float(np.mean(spec.phi_star(y + x)) - x)
    if not math.isfinite(val):
        raise NumericOverflowError(f"objective overflow at x={x}")
    return val


def oce_subgradient(sample: SampleLike, spec: DivergencePair, x: float) -> Tuple[float, float]:
    """Left and right derivatives of the objective at ``x``."""
    y = _values(sample)
    with np.errstate(over="ignore"):
        left = float(np.mean(spec.phi_star_dminus(y + x)) - 1.0)
        right = float(np.mean(spec.phi_star_dplus(y + x)) - 1.0)
    return left, right


def minimizer_bracket(sample: SampleLike, spec: DivergencePair) -> Tuple[float, float]:
    """Interval guaranteed to contain every minimizer of the objective.

    Both ends come from the affine minorants of ``phi_star`` at slopes 0 and
    ``x0``; anything outside is strictly worse than ``x = 0``.
    """
    anchor = spec.anchor
    if anchor is None:
        raise BracketUnavailableError("bracket unavailable: divergence has no anchor")
    x0, phi_x0 = anchor
    y = _values(sample)
    with np.errstate(over="ignore"):
        ps = spec.phi_star(y)
        mean_ps = float(np.mean(ps))
        upper = float(np.mean(ps - x0 * y))
    lb = min(0.0, -spec.phi_at_zero - mean_ps)
    ub = max(0.0, (upper + phi_x0) / (x0 - 1.0))
    if not (math.isfinite(lb) and math.isfinite(ub)):
        raise NumericOverflowError("minimizer bracket overflows; use a closed form")
    return lb, ub


def _geometric_bracket(y: np.ndarray, spec: DivergencePair) -> Tuple[float, float, int]:
    lo, hi, evals = -1.0, 1.0, 0
    for _ in range(_MAX_DOUBLINGS):
        evals += 1
        if oce_subgradient(y, spec, lo)[1] < 0.0:
            break
        lo *= 2.0
    else:
        raise BracketUnavailableError("geometric expansion failed on the left")
    for _ in range(_MAX_DOUBLINGS):
        evals += 1
        if oce_subgradient(y, spec, hi)[0] > 0.0:
            break
        hi *= 2.0
    else:
        raise BracketUnavailableError("geometric expansion failed on the right")
    return lo, hi, evals


def _bisect(pred, a: float, b: float, tol: float) -> Tuple[float, float, int]:
    """Shrink ``[a, b]`` keeping ``pred(a)`` False and ``pred(b)`` True."""
    evals = 0
    for _ in range(_MAX_BISECTIONS):
        if b - a <= tol * (1.0 + max(abs(a), abs(b))):
            break
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        evals += 1
        if pred(mid):
            b = mid
        else:
            a = mid
    return a, b, evals


def oce_minimize(sample: SampleLike, spec: DivergencePair, tol: float = 1e-10) -> OceResult:
    """Minimize the objective by bisection on the sign of its one-sided derivatives.

    Returns the whole minimizer interval ``[x_lo, x_hi]``; the reported value is
    the objective at its midpoint.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    y = _values(sample)
    evals = 0
    try:
        lb, ub = minimizer_bracket(y, spec)
    except BracketUnavailableError:
        lb, ub, evals = _geometric_bracket(y, spec)

    # derivatives inside a flat stretch are zero only up to summation roundoff
    eps = 64.0 * np.finfo(float).eps

    def right_nonneg(x):
        return oce_subgradient(y, spec, x)[1] >= -eps

    def left_pos(x):
        return oce_subgradient(y, spec, x)[0] > eps

    evals += 2
    if right_nonneg(lb):
        x_lo = lb
    else:
        _, x_lo, k = _bisect(right_nonneg, lb, ub, tol)
        evals += k
    evals += 1
    if not left_pos(ub):
        x_hi = ub
    else:
        x_hi, _, k = _bisect(left_pos, lb, ub, tol)
        evals += k
    if x_lo > x_hi:
        x_lo = x_hi = 0.5 * (x_lo + x_hi)
    mid = 0.5 * (x_lo + x_hi)
    value = oce_objective(y, spec, mid)
    return OceResult(value, x_lo, x_hi, (lb, ub), evals + 1, "generic")


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def _avar_weights(n: int, alpha: float) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    return np.clip(i / n - np.maximum((i - 1) / n, alpha), 0.0, None) / (1.0 - alpha)


def _quantile_indices(n: int, alpha: float) -> Tuple[int, int]:
    """0-based indices of the left and right alpha-quantiles of n sorted atoms."""
    k = n * alpha
    kr = round(k)
    if abs(k - kr) <= 1e-9 * max(1.0, k) and 1 <= kr < n:
        return kr - 1, kr
    j = min(max(math.ceil(k), 1), n) - 1
    return j, j


def avar_closed_form(sample: SampleLike, alpha: float) -> OceResult:
    """Average Value at Risk as an upper-tail average of the sorted sample.

    The minimizer interval is the negated alpha-quantile interval
    ``[-q_right, -q_left]``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0,1)")
    y = np.sort(_values(sample))
    n = y.size
    value = float(y @ _avar_weights(n, alpha))
    jl, jr = _quantile_indices(n, alpha)
    x_lo, x_hi = -float(y[jr]), -float(y[jl])
    return OceResult(value, x_lo, x_hi, (x_lo, x_hi), 1, "closed-form")


def entropic_closed_form(sample: SampleLike, gamma: float) -> OceResult:
    """Entropic risk ``log(mean(exp(gamma*y)))/gamma`` via a shifted log-sum-exp."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    y = _values(sample)
    value = float((logsumexp(gamma * y) - math.log(y.size)) / gamma)
    return OceResult(value, -value, -value, (-value, -value), 1, "closed-form")


def evaluate_risk(sample: SampleLike, spec: DivergencePair, tol: float = 1e-10) -> OceResult:
    """Closed form when one exists, generic bisection otherwise."""
    if spec.kind == "entropic":
        return entropic_closed_form(sample, spec.param)
    if spec.kind == "avar":
        return avar_closed_form(sample, spec.param)
    return oce_minimize(sample, spec, tol)


def risk_batch(values: np.ndarray, spec: DivergencePair, tol: float = 1e-10):
    """Row-wise risk of a ``(k, n)`` array.

    Returns ``(value, x_lo, x_hi)`` arrays of length k.
    """
    Y = np.atleast_2d(np.asarray(values, dtype=float))
    k, n = Y.shape
    if n == 0:
        raise EmptySampleError("empty sample")
    if spec.kind == "entropic":
        g = spec.param
        val = (logsumexp(g * Y, axis=1) - math.log(n)) / g
        return val, -val, -val
    if spec.kind == "avar":
        S = np.sort(Y, axis=1)
        val = S @ _avar_weights(n, spec.param)
        jl, jr = _quantile_indices(n, spec.param)
        return val, -S[:, jr], -S[:, jl]
    out = np.empty((3, k))
    for r in range(k):
        res = oce_minimize(Y[r], spec, tol)
        out[:, r] = (res.value, res.x_lo, res.x_hi)
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# Population quadrature
# ---------------------------------------------------------------------------

def midpoint_nodes(count: int) -> np.ndarray:
    return (np.arange(count, dtype=float) + 0.5) / count


def population_oce(
    quantile_fn: Callable[[np.ndarray], np.ndarray],
    spec: DivergencePair,
    nodes: int = 100_000,
    tol: float = 1e-10,
) -> float:
    """Risk of a bounded distribution given by its quantile function.

    Uses the midpoint rule on a uniform grid in probability space; the inner
    minimization runs on the induced equally weighted atoms.
    """
    u = midpoint_nodes(nodes)
    y = np.asarray(quantile_fn(u), dtype=float)
    if not np.all(np.isfinite(y)):
        raise UnboundedSupportError("unbounded support: quantile function not finite at grid nodes")
    return evaluate_risk(y, spec, tol).value
