"""Parametric goal functions, the piecewise-linear family and the model catalog.

A goal maps a batch of parameters ``thetas`` of shape ``(k, m)`` and noise
draws ``z`` of shape ``(n, d)`` to outcomes of shape ``(k, n)``.  Goals are
plain frozen dataclasses so models can be pickled to worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .distributions import Distribution, GappedBeta, TruncatedNormal, UniformBox
from .divergence import DivergencePair, entropic, avar
from .errors import InvalidPLInstance

__all__ = [
    "ParamBox",
    "Truth",
    "GoalModel",
    "SquaredDistance",
    "Newsvendor",
    "HolderCusp",
    "AffineQuadGoal",
    "PLPiece",
    "PLGoal",
    "pl_selectors",
    "pl_evaluate",
    "PartitionReport",
    "validate_partition",
    "pl_mdot",
    "c_diagnostics",
    "builtin_models",
    "auxiliary_models",
    "resolve_model",
]


def _as_thetas(thetas, m: int) -> np.ndarray:
    return np.asarray(thetas, dtype=float).reshape(-1, m)


def _as_z(z, d: int) -> np.ndarray:
    return np.asarray(z, dtype=float).reshape(-1, d)


@dataclass(frozen=True)
class ParamBox:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box needs lower <= upper with equal lengths")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lo) and np.all(t <= self.hi))

    def interior(self, theta, margin: float = 0.0) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t > self.lo + margin) and np.all(t < self.hi - margin))

    def clip(self, theta) -> np.ndarray:
        return np.clip(theta, self.lo, self.hi)


@dataclass(frozen=True)
class Truth:
    theta: Tuple[float, ...]
    x: float
    source: str = ""

    @property
    def theta_array(self) -> np.ndarray:
        return np.array(self.theta, dtype=float)


# ---------------------------------------------------------------------------
# Smooth / Hoelder goals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SquaredDistance:
    """``G(theta, z) = |theta - z|^2``."""

    m: int = 1

    @property
    def d(self) -> int:
        return self.m

    def values(self, thetas, z):
        t = _as_thetas(thetas, self.m)
        zz = _as_z(z, self.d)
        diff = t[:, None, :] - zz[None, :, :]
        return np.einsum("knd,knd->kn", diff, diff)

    def to_dict(self):
        return {"kind": "squared_distance", "m": self.m}


@dataclass(frozen=True)
class Newsvendor:
    """Loss ``cost*theta - price*min(theta, z)`` of ordering ``theta`` units."""

    cost: float = 1.0
    price: float = 3.0
    m: int = 1
    d: int = 1

    def values(self, thetas, z):
        t = _as_thetas(thetas, 1)
        zz = _as_z(z, 1)[:, 0]
        return self.cost * t - self.price * np.minimum(t, zz[None, :])

    def to_dict(self):
        return {"kind": "newsvendor", "cost": self.cost, "price": self.price}


@dataclass(frozen=True)
class HolderCusp:
    """``|theta - z|^power + ridge * theta^2``; Hoelder of order ``power`` in theta."""

    power: float = 0.5
    ridge: float = 0.25
    m: int = 1
    d: int = 1

    def values(self, thetas, z):
        t = _as_thetas(thetas, 1)
        zz = _as_z(z, 1)[:, 0]
        return np.abs(t - zz[None, :]) ** self.power + self.ridge * t ** 2

    def to_dict(self):
        return {"kind": "holder_cusp", "power": self.power, "ridge": self.ridge}


@dataclass(frozen=True)
class AffineQuadGoal:
    """``lin.theta + quad*|theta|^2 + zcoef.z + const`` (test and toy goals)."""

    lin: Tuple[float, ...] = (1.0,)
    quad: float = 0.0
    zcoef: Tuple[float, ...] = (1.0,)
    const: float = 0.0

    @property
    def m(self) -> int:
        return len(self.lin)

    @property
    def d(self) -> int:
        return len(self.zcoef)

    def values(self, thetas, z):
        t = _as_thetas(thetas, self.m)
        zz = _as_z(z, self.d)
        th = t @ np.asarray(self.lin) + self.quad * np.sum(t * t, axis=1)
        return th[:, None] + (zz @ np.asarray(self.zcoef))[None, :] + self.const

    def to_dict(self):
        return {"kind": "affine_quad", "lin": list(self.lin), "quad": self.quad,
                "zcoef": list(self.zcoef), "const": self.const}


# ---------------------------------------------------------------------------
# Piecewise-linear goals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PLPiece:
    """One affine piece ``Lambda.(T theta + z) + b`` gated by half-line selectors.

    Selector ``l`` is active when ``L[l].(T theta + z) + a[l]`` lies in
    ``[0, inf)`` (closed) or ``(0, inf)`` (open).
    """

    Lambda: np.ndarray
    b: float
    L: np.ndarray
    a: np.ndarray
    closed: Tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "Lambda", np.asarray(self.Lambda, dtype=float).ravel())
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(L.shape[0]))
        object.__setattr__(self, "closed", tuple(bool(c) for c in self.closed))
        if len(self.closed) != L.shape[0]:
            raise ValueError("one interval kind per selector")

    @property
    def s(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True, eq=False)
class PLGoal:
    """Piecewise-linear goal over a partition given by half-line selectors."""

    T: np.ndarray
    pieces: Tuple[PLPiece, ...]

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "pieces", tuple(self.pieces))
        d = T.shape[0]
        for p in self.pieces:
            if p.Lambda.size != d or p.L.shape[1] != d:
                raise ValueError("piece dimensions do not match T")

    @property
    def m(self) -> int:
        return self.T.shape[1]

    @property
    def d(self) -> int:
        return self.T.shape[0]

    @property
    def r(self) -> int:
        return len(self.pieces)

    def shifted_noise(self, thetas, z) -> np.ndarray:
        """``T theta + z`` with shape ``(k, n, d)``."""
        t = _as_thetas(thetas, self.m)
        zz = _as_z(z, self.d)
        return (t @ self.T.T)[:, None, :] + zz[None, :, :]

    def selector_matrix(self, thetas, z) -> np.ndarray:
        """Selector values ``f^i`` with shape ``(k, n, r)``; exact comparisons."""
        U = self.shifted_noise(thetas, z)
        out = np.empty(U.shape[:2] + (self.r,), dtype=np.int8)
        for i, p in enumerate(self.pieces):
            w = U @ p.L.T + p.a
            closed = np.asarray(p.closed)
            inside = np.where(closed, w >= 0.0, w > 0.0)
            out[..., i] = np.all(inside, axis=-1)
        return out

    def piece_values(self, thetas, z) -> np.ndarray:
        U = self.shifted_noise(thetas, z)
        lam = np.stack([p.Lambda for p in self.pieces], axis=1)
        b = np.array([p.b for p in self.pieces])
        return U @ lam + b

    def values(self, thetas, z):
        F = self.selector_matrix(thetas, z)
        count = F.sum(axis=-1)
        bad = np.argwhere(count != 1)
        if bad.size:
            kk, nn = bad[0]
            t = _as_thetas(thetas, self.m)[kk]
            zz = _as_z(z, self.d)[nn]
            raise InvalidPLInstance(
                f"invalid PL instance: {int(count[kk, nn])} active pieces at theta={t.tolist()}, z={zz.tolist()}",
                theta=t, z=zz,
            )
        return np.sum(F * self.piece_values(thetas, z), axis=-1)

    def to_dict(self) -> dict:
        return {
            "kind": "pl",
            "T": self.T.tolist(),
            "pieces": [
                {
                    "Lambda": p.Lambda.tolist(),
                    "b": float(p.b),
                    "L": p.L.tolist(),
                    "a": p.a.tolist(),
                    "intervals": ["closed" if c else "open" for c in p.closed],
                }
                for p in self.pieces
            ],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "PLGoal":
        try:
            pieces = []
            for p in spec["pieces"]:
                kinds = p["intervals"]
                if any(k not in ("closed", "open") for k in kinds):
                    raise ValueError(f"interval kinds must be 'closed' or 'open', got {kinds}")
                pieces.append(PLPiece(p["Lambda"], float(p["b"]), p["L"], p["a"],
                                      tuple(k == "closed" for k in kinds)))
            return cls(spec["T"], tuple(pieces))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed PL definition: {exc}") from exc


def pl_selectors(g: PLGoal, theta, z) -> np.ndarray:
    """Binary vector of length r for a single ``(theta, z)``."""
    return g.selector_matrix(theta, z)[0, 0].astype(int)


def pl_evaluate(g: PLGoal, theta, z) -> float:
    return float(g.values(theta, z)[0, 0])


@dataclass(frozen=True)
class PartitionReport:
    points: int
    sum_violations: int
    overlap_violations: int
    first_offender: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None

    @property
    def ok(self) -> bool:
        return self.sum_violations == 0 and self.overlap_violations == 0


def validate_partition(g: PLGoal, theta_grid, z_sample, chunk: int = 200) -> PartitionReport:
    """Count points of ``theta_grid x z_sample`` breaking the partition identities."""
    thetas = _as_thetas(theta_grid, g.m) if np.size(theta_grid) else np.empty((0, g.m))
    z = _as_z(z_sample, g.d) if np.size(z_sample) else np.empty((0, g.d))
    points = thetas.shape[0] * z.shape[0]
    sum_bad = overlap_bad = 0
    offender = None
    if points == 0:
        return PartitionReport(0, 0, 0, None)
    for start in range(0, thetas.shape[0], chunk):
        block = thetas[start:start + chunk]
        count = g.selector_matrix(block, z).sum(axis=-1, dtype=np.int64)
        sum_bad += int(np.count_nonzero(count != 1))
        overlap_bad += int(np.count_nonzero(count >= 2))
        if offender is None:
            bad = np.argwhere(count != 1)
            if bad.size:
                kk, nn = bad[0]
                offender = (tuple(block[kk].tolist()), tuple(z[nn].tolist()))
    return PartitionReport(points, sum_bad, overlap_bad, offender)


def pl_mdot(g: PLGoal, spec: DivergencePair, theta_star, x_star: float, z):
    """Score vector of the joint objective at ``(theta*, x*)`` per noise draw.

    Returns ``(mdot, c5_flag)``: ``mdot`` has shape ``(n, m+1)`` and
    ``c5_flag[j]`` is True when the active argument sits on a kink of
    ``phi_star`` (left and right derivatives differ).  A single ``z`` of
    length d yields a vector and a bool.
    """
    single = np.ndim(z) == 1 and np.size(z) == g.d
    F = g.selector_matrix(theta_star, z)[0]
    arg = g.piece_values(theta_star, z)[0] + x_star
    dplus = spec.phi_star_dplus(arg)
    dminus = spec.phi_star_dminus(arg)
    t_dirs = np.stack([p.Lambda @ g.T for p in g.pieces], axis=0)
    grad = np.concatenate([t_dirs, np.ones((g.r, 1))], axis=1)
    mdot = (F * dplus) @ grad
    c5 = np.any(F.astype(bool) & (dplus != dminus), axis=1)
    if single:
        return mdot[0], bool(c5[0])
    return mdot, c5


def _classify(ratios: Sequence[float]) -> str:
    r = np.asarray(ratios, dtype=float)
    if np.all(r == 0):
        return "vanishing"
    if np.all(np.diff(r) <= 0) and r[-1] < r[0]:
        return "decreasing"
    if r[-1] >= 1.5 * r[0] and np.all(np.diff(r) >= 0):
        return "diverging"
    return "bounded"


def c_diagnostics(g: PLGoal, theta_star, z_sample, delta_grid) -> List[dict]:
    """Empirical near-boundary ratios for every cross pair of selectors.

    For pieces ``i < i'`` and selectors ``l, l'`` the ratio is
    ``#{|W_il| <= delta and |W_i'l'| <= delta} / (N * delta^2)`` with
    ``W_il(z) = L_il.z + L_il.(T theta*) + a_il``.  Deltas are reported in
    decreasing order together with a trend label.
    """
    deltas = sorted((float(d) for d in delta_grid), reverse=True)
    z = _as_z(z_sample, g.d) if np.size(z_sample) else np.empty((0, g.d))
    N = z.shape[0]
    shift = g.T @ np.asarray(theta_star, dtype=float).reshape(g.m)
    W = [(z @ p.L.T) + (p.L @ shift) + p.a for p in g.pieces]
    rows = []
    for i in range(g.r):
        for j in range(i + 1, g.r):
            for l in range(g.pieces[i].s):
                for lp in range(g.pieces[j].s):
                    ratios = []
                    for dlt in deltas:
                        if N == 0:
                            ratios.append(0.0)
                            continue
                        both = (np.abs(W[i][:, l]) <= dlt) & (np.abs(W[j][:, lp]) <= dlt)
                        ratios.append(float(np.count_nonzero(both)) / (N * dlt * dlt))
                    rows.append({
                        "pair": (i + 1, l + 1, j + 1, lp + 1),
                        "deltas": deltas,
                        "ratios": ratios,
                        "trend": _classify(ratios),
                    })
    return rows


# ---------------------------------------------------------------------------
# Models and catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GoalModel:
    name: str
    goal: object
    noise: Distribution
    box: ParamBox
    risk: DivergencePair
    smoothness: str = "holder"
    beta: float = 1.0
    truth: Optional[Truth] = None
    description: str = ""

    def __post_init__(self):
        if self.smoothness not in ("holder", "piecewise_linear"):
            raise ValueError("smoothness must be 'holder' or 'piecewise_linear'")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.goal.m != self.box.m or self.goal.d != self.noise.d:
            raise ValueError("goal, box and noise dimensions disagree")

    @property
    def m(self) -> int:
        return self.box.m

    @property
    def d(self) -> int:
        return self.noise.d

    def evaluate(self, theta, z) -> np.ndarray:
        """Outcomes at a single ``theta`` for every row of ``z``."""
        return self.goal.values(np.asarray(theta, dtype=float).reshape(1, self.m), z)[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.noise.sample(rng, n)

    def with_risk(self, risk: DivergencePair) -> "GoalModel":
        return GoalModel(self.name, self.goal, self.noise, self.box, risk,
                         self.smoothness, self.beta, self.truth, self.description)

    def with_truth(self, truth: Optional[Truth]) -> "GoalModel":
        return GoalModel(self.name, self.goal, self.noise, self.box, self.risk,
                         self.smoothness, self.beta, truth, self.description)


# x* = -log(int_0^1 exp(t^2) dt), scipy.integrate.quad
MODEL_A_X_STAR = -0.38025105262664977
# mu = E exp(|Z|) for modelC noise, scipy.integrate.quad on the Beta(3,3) density
MODEL_C_MU = 3.3244853047997016
MODEL_C_JUMP = 0.36


def _model_c_goal(jump: float = MODEL_C_JUMP) -> PLGoal:
    # piece 1 on w = theta + z >= 0 with value w; piece 2 on -w > 0 with -w + jump
    return PLGoal(
        T=[[1.0]],
        pieces=(
            PLPiece(Lambda=[1.0], b=0.0, L=[[1.0]], a=[0.0], closed=(True,)),
            PLPiece(Lambda=[-1.0], b=jump, L=[[-1.0]], a=[0.0], closed=(False,)),
        ),
    )


def builtin_models() -> Dict[str, GoalModel]:
    """The four reference models with their ground truth."""
    model_a = GoalModel(
        "modelA_quad_entropic",
        SquaredDistance(1),
        UniformBox((-1.0,), (1.0,)),
        ParamBox((-2.0,), (2.0,)),
        entropic(1.0),
        "holder",
        1.0,
        Truth((0.0,), MODEL_A_X_STAR, "symmetry; x* by quadrature"),
        "G = (theta - z)^2, Z ~ U(-1,1), entropic gamma=1",
    )
    model_b = GoalModel(
        "modelB_newsvendor_avar",
        Newsvendor(1.0, 3.0),
        UniformBox((0.0,), (1.0,)),
        ParamBox((0.0,), (1.0,)),
        avar(0.9),
        "holder",
        1.0,
        Truth((1.0 / 15.0,), 2.0 / 15.0, "hand-derived tail average; grid oracle"),
        "newsvendor loss theta - 3 min(theta, z), Z ~ U(0,1), AVaR 0.9",
    )
    jump = MODEL_C_JUMP
    model_c = GoalModel(
        "modelC_twopiece_pl",
        _model_c_goal(jump),
        GappedBeta(0.3, 2.0, 3.0),
        ParamBox((-1.0,), (1.0,)),
        entropic(1.0),
        "piecewise_linear",
        1.0,
        Truth((jump / 2.0,), -jump / 2.0 - float(np.log(MODEL_C_MU)), "balance of tail masses; grid oracle"),
        "two-piece PL with a jump on theta + z = 0, symmetric gapped Beta noise, entropic gamma=1",
    )
    model_d = GoalModel(
        "modelD_holder_half",
        HolderCusp(0.5, 0.25),
        UniformBox((-1.0,), (1.0,)),
        ParamBox((-1.0,), (1.0,)),
        entropic(1.0),
        "holder",
        0.5,
        Truth((0.0,), -float(np.log(2.0)), "symmetry; int_0^1 exp(sqrt t) dt = 2"),
        "G = |theta - z|^(1/2) + theta^2/4, Z ~ U(-1,1), entropic gamma=1",
    )
    return {m.name: m for m in (model_a, model_b, model_c, model_d)}


def auxiliary_models() -> Dict[str, GoalModel]:
    """Small models used by tests and CLI examples."""
    unif = UniformBox((-1.0,), (1.0,))
    box = ParamBox((-1.0,), (1.0,))
    log_sinh1 = float(np.log(np.sinh(1.0)))
    affine_pl = PLGoal(
        T=[[1.0]],
        pieces=(PLPiece(Lambda=[1.0], b=0.0, L=[[0.0]], a=[0.0], closed=(True,)),),
    )
    models = [
        GoalModel("deterministic_linear", AffineQuadGoal((1.0,), 0.0, (0.0,), 0.0), unif, box,
                  entropic(1.0), "holder", 1.0, Truth((0.0,), 0.0, "supplied point"),
                  "G = theta; the joint Hessian is singular"),
        GoalModel("translation_quadratic", AffineQuadGoal((0.0,), 1.0, (1.0,), 0.0), unif, box,
                  entropic(1.0), "holder", 1.0, Truth((0.0,), -log_sinh1, "translation structure"),
                  "G = theta^2 + z"),
        GoalModel("affine_single_piece", affine_pl, unif, box, entropic(1.0), "piecewise_linear",
                  1.0, Truth((0.0,), -log_sinh1, "supplied point"),
                  "single-piece PL goal theta + z"),
    ]
    return {m.name: m for m in models}


def resolve_model(name: str) -> GoalModel:
    catalog = {**builtin_models(), **auxiliary_models()}
    if name not in catalog:
        raise KeyError(f"unknown model {name!r}; known: {sorted(catalog)}")
    return catalog[name]
