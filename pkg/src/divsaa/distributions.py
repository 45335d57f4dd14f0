"""Bounded noise distributions with inversion samplers.

Every sampler draws through its quantile function from uniforms supplied by a
caller-owned ``numpy.random.Generator``, so a seed fixes the draw sequence.
Quadrature nodes are quantiles at the midpoints of a uniform probability grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from .divergence import midpoint_nodes

__all__ = [
    "Distribution",
    "UniformBox",
    "TruncatedNormal",
    "PointMasses",
    "GappedBeta",
    "distribution_from_dict",
]


class Distribution:
    """Interface: ``d``, ``support``, ``quantile``, ``sample`` and ``nodes``."""

    d: int = 1

    @property
    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(n, d)`` to draws of shape ``(n, d)``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.quantile(rng.random((n, self.d)))

    def nodes(self, count: int) -> np.ndarray:
        """Equally weighted quadrature nodes, shape ``(N, d)``.

        For d == 1 these are quantiles at ``count`` midpoints; for d > 1 a
        tensor product of per-axis midpoints with about ``count`` points total.
        """
        if self.d == 1:
            return self.quantile(midpoint_nodes(count)[:, None])
        per_axis = max(2, int(round(count ** (1.0 / self.d))))
        axes = [midpoint_nodes(per_axis)] * self.d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return self.quantile(grid)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformBox(Distribution):
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))
        if len(self.lower) != len(self.upper) or any(l > u for l, u in zip(self.lower, self.upper)):
            raise ValueError("UniformBox bounds mismatched")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def support(self):
        return np.array(self.lower), np.array(self.upper)

    def quantile(self, u):
        u = np.asarray(u, dtype=float).reshape(-1, self.d)
        lo, hi = self.support
        return lo + (hi - lo) * u

    def to_dict(self):
        return {"kind": "uniform", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class TruncatedNormal(Distribution):
    mean: float = 0.0
    sd: float = 1.0
    lower: float = -2.0
    upper: float = 2.0

    @property
    def support(self):
        return np.array([self.lower]), np.array([self.upper])

    def quantile(self, u):
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        a = stats.norm.cdf((self.lower - self.mean) / self.sd)
        b = stats.norm.cdf((self.upper - self.mean) / self.sd)
        z = self.mean + self.sd * stats.norm.ppf(a + u * (b - a))
        return np.clip(z, self.lower, self.upper)

    def to_dict(self):
        return {"kind": "truncated_normal", "mean": self.mean, "sd": self.sd,
                "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class PointMasses(Distribution):
    """Finite mixture of point masses in one dimension."""

    points: Tuple[float, ...]
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        w = tuple(float(v) for v in self.weights) or tuple([1.0] * len(pts))
        if len(w) != len(pts) or not pts or min(w) < 0:
            raise ValueError("PointMasses needs matching nonnegative weights")
        order = np.argsort(pts, kind="stable")
        object.__setattr__(self, "points", tuple(pts[i] for i in order))
        total = sum(w)
        object.__setattr__(self, "weights", tuple(w[i] / total for i in order))

    @property
    def support(self):
        return np.array([self.points[0]]), np.array([self.points[-1]])

    def quantile(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        cdf = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(cdf, u, side="left"), len(self.points) - 1)
        return np.asarray(self.points)[idx][:, None]

    def to_dict(self):
        return {"kind": "point_masses", "points": list(self.points), "weights": list(self.weights)}


@dataclass(frozen=True)
class GappedBeta(Distribution):
    """Symmetric law on ``[-outer, -inner] U [inner, outer]``.

    ``|Z| = inner + (outer - inner) * B`` with ``B ~ Beta(shape, shape)`` and a
    fair random sign.  No mass falls in ``(-inner, inner)``; with ``shape >= 3``
    the density is continuously differentiable everywhere.
    """

    inner: float = 0.3
    outer: float = 2.0
    shape: float = 3.0

    @property
    def support(self):
        return np.array([-self.outer]), np.array([self.outer])

    def quantile(self, u):
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        span = self.outer - self.inner
        pos = u >= 0.5
        t = np.where(pos, 2.0 * u - 1.0, 1.0 - 2.0 * u)
        mag = self.inner + span * stats.beta.ppf(t, self.shape, self.shape)
        return np.where(pos, mag, -mag)

    def abs_pdf(self, t):
        """Density of ``|Z|`` on ``[inner, outer]``."""
        span = self.outer - self.inner
        return stats.beta.pdf((np.asarray(t) - self.inner) / span, self.shape, self.shape) / span

    def to_dict(self):
        return {"kind": "gapped_beta", "inner": self.inner, "outer": self.outer, "shape": self.shape}


def distribution_from_dict(spec: dict) -> Distribution:
    kind = spec.get("kind")
    if kind == "uniform":
        return UniformBox(tuple(spec["lower"]), tuple(spec["upper"]))
    if kind == "truncated_normal":
        return TruncatedNormal(float(spec.get("mean", 0.0)), float(spec.get("sd", 1.0)),
                               float(spec["lower"]), float(spec["upper"]))
    if kind == "point_masses":
        return PointMasses(tuple(spec["points"]), tuple(spec.get("weights", ())))
    if kind == "gapped_beta":
        return GappedBeta(float(spec["inner"]), float(spec["outer"]), float(spec.get("shape", 3.0)))
    raise ValueError(f"unknown noise kind {kind!r}")
