"""Asymptotic predictions for SAA minimizers and the replication harness.

The joint objective is ``f(theta, x) = E[phi_star(G(theta, Z) + x)] - x``.
Its Hessian ``H`` at ``(theta*, x*)`` and the covariance ``Sigma`` of the
score vector give the sandwich covariance of ``sqrt(n) (theta_hat - theta*)``.
Replications draw each sample from its own counter-derived stream, so tables
do not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, stats

from .divergence import DivergencePair
from .errors import (
    C5Violation,
    DivSaaError,
    HessianNotPositiveDefinite,
    InsufficientRowsError,
)
from .models import GoalModel, PLGoal, Truth, pl_mdot
from .solver import SolveConfig, solve_population, solve_saa
from .streams import generator, mix64

__all__ = [
    "AsymptoticPrediction",
    "ReplicationRow",
    "ReplicationTable",
    "RateDiagnostic",
    "CoverageResult",
    "joint_objective",
    "estimate_hessian",
    "estimate_sigma_fd",
    "sigma_pl",
    "predict_covariance",
    "predict",
    "run_replications",
    "rate_diagnostic",
    "coverage_normality",
]

_PD_FLOOR = 1e-8
_C5_MAX_FRACTION = 1e-3


@dataclass(frozen=True, eq=False)
class AsymptoticPrediction:
    H: np.ndarray
    Sigma: np.ndarray
    C_pred: np.ndarray
    beta: float
    theta_star: Tuple[float, ...]
    x_star: float
    settings: Dict[str, object] = field(default_factory=dict)

    @property
    def rate_exponent(self) -> float:
        return 1.0 / (4.0 - 2.0 * self.beta)

    def to_dict(self) -> dict:
        return {
            "H": self.H.tolist(),
            "Sigma": self.Sigma.tolist(),
            "C_pred": self.C_pred.tolist(),
            "beta": self.beta,
            "rate_exponent": self.rate_exponent,
            "theta_star": list(self.theta_star),
            "x_star": self.x_star,
            "settings": dict(self.settings),
        }


# ---------------------------------------------------------------------------
# Hessian and score covariance
# ---------------------------------------------------------------------------

def _eval_nodes(model: GoalModel, nodes: Union[int, np.ndarray]) -> np.ndarray:
    if np.ndim(nodes) == 0:
        return model.noise.nodes(int(nodes))
    return np.asarray(nodes, dtype=float).reshape(-1, model.d)


def joint_objective(model: GoalModel, spec: DivergencePair, z, points) -> np.ndarray:
    """``mean_j phi_star(G(theta, z_j) + x) - x`` for each row ``(theta, x)``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m = model.m
    Y = model.goal.values(P[:, :m], z)
    x = P[:, m]
    return np.mean(spec.phi_star(Y + x[:, None]), axis=1) - x


def _check_pd(H: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(H)):
        raise HessianNotPositiveDefinite("(A 4) violated: Hessian has non-finite entries", H, np.nan)
    lam = float(np.min(np.linalg.eigvalsh(H)))
    if lam <= _PD_FLOOR:
        raise HessianNotPositiveDefinite(
            f"(A 4) violated: Hessian not positive definite (min eigenvalue {lam:.3e})", H, lam)
    return H


def estimate_hessian(model: GoalModel, spec: Optional[DivergencePair], theta_star, x_star: float,
                     step: float = 1e-3, nodes: Union[int, np.ndarray] = 100_000) -> np.ndarray:
    """Central second differences of the joint objective at ``(theta*, x*)``.

    Every stencil point is evaluated on the same node set, so noise in a
    mega-sample cancels between neighbours.  The per-coordinate step is
    ``step * (1 + |coordinate|)``.

    Raises
    ------
    HessianNotPositiveDefinite
        When the smallest eigenvalue is at most 1e-8.
    """
    spec = spec or model.risk
    if step <= 0:
        raise ValueError("step must be positive")
    theta_star = np.asarray(theta_star, dtype=float).reshape(model.m)
    p = np.append(theta_star, float(x_star))
    D = p.size
    h = step * (1.0 + np.abs(p))
    if not model.box.interior(theta_star, margin=float(np.max(h[:-1]))):
        raise ValueError("theta* must lie in the interior of the parameter box")
    z = _eval_nodes(model, nodes)

    pts = [p]
    E = np.eye(D)
    for i in range(D):
        pts += [p + h[i] * E[i], p - h[i] * E[i]]
    for i in range(D):
        for j in range(i + 1, D):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                pts.append(p + si * h[i] * E[i] + sj * h[j] * E[j])
    f = joint_objective(model, spec, z, np.array(pts))

    H = np.empty((D, D))
    f0 = f[0]
    for i in range(D):
        H[i, i] = (f[1 + 2 * i] - 2.0 * f0 + f[2 + 2 * i]) / h[i] ** 2
    k = 1 + 2 * D
    for i in range(D):
        for j in range(i + 1, D):
            pp, pm, mp, mm = f[k:k + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4.0 * h[i] * h[j])
            k += 4
    return _check_pd(0.5 * (H + H.T))


def estimate_sigma_fd(model: GoalModel, spec: Optional[DivergencePair], theta_star, x_star: float,
                      step: float = 1e-5, n_mc: int = 100_000,
                      rng: Optional[np.random.Generator] = None, z=None) -> np.ndarray:
    """Covariance of central-difference score vectors over noise draws.

    Draws come from ``rng`` unless an explicit array ``z`` is given, which
    lets callers exclude draws near a discontinuity.
    """
    spec = spec or model.risk
    if z is None:
        if n_mc < 10_000:
            raise ValueError("n_mc must be at least 1e4")
        if rng is None:
            raise ValueError("an rng or explicit draws are required")
        z = model.sample(rng, n_mc)
    z = np.asarray(z, dtype=float).reshape(-1, model.d)
    p = np.append(np.asarray(theta_star, dtype=float).reshape(model.m), float(x_star))
    D = p.size
    h = step * (1.0 + np.abs(p))
    grads = np.empty((z.shape[0], D))
    for i in range(D):
        e = np.zeros(D)
        e[i] = h[i]
        plus, minus = p + e, p - e
        Y = model.goal.values(np.vstack([plus[:-1], minus[:-1]]), z)
        up = spec.phi_star(Y[0] + plus[-1])
        dn = spec.phi_star(Y[1] + minus[-1])
        grads[:, i] = (up - dn) / (2.0 * h[i])
    return np.atleast_2d(np.cov(grads, rowvar=False))


def sigma_pl(model: GoalModel, spec: Optional[DivergencePair], theta_star, x_star: float,
             n_mc: int = 100_000, rng: Optional[np.random.Generator] = None,
             return_rejected: bool = False):
    """Monte Carlo covariance of the closed-form PL score vector.

    Draws whose active argument lands on a kink of ``phi_star`` are rejected
    and replaced.

    Raises
    ------
    C5Violation
        If more than 0.1% of draws had to be rejected.
    """
    if not isinstance(model.goal, PLGoal):
        raise TypeError("sigma_pl needs a piecewise-linear goal")
    if rng is None:
        raise ValueError("an rng is required")
    spec = spec or model.risk
    kept: List[np.ndarray] = []
    have = drawn = rejected = 0
    while have < n_mc:
        z = model.sample(rng, n_mc - have)
        mdot, flags = pl_mdot(model.goal, spec, theta_star, x_star, z)
        drawn += z.shape[0]
        rejected += int(np.count_nonzero(flags))
        if rejected > _C5_MAX_FRACTION * drawn:
            raise C5Violation(
                f"C5 empirically violated: {rejected} of {drawn} draws hit a kink")
        kept.append(mdot[~flags])
        have += int(np.count_nonzero(~flags))
    S = np.atleast_2d(np.cov(np.concatenate(kept), rowvar=False))
    return (S, rejected) if return_rejected else S


def predict_covariance(H, Sigma, m: int) -> np.ndarray:
    """Top-left ``m x m`` block of ``H^{-1} Sigma H^{-1}`` via linear solves."""
    H = _check_pd(0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T))
    Sigma = np.asarray(Sigma, dtype=float)
    A = linalg.solve(H, Sigma, assume_a="sym")
    B = linalg.solve(H, A.T, assume_a="sym")
    C = B[:m, :m]
    return 0.5 * (C + C.T)


def predict(model: GoalModel, spec: Optional[DivergencePair] = None, truth: Optional[Truth] = None,
            hessian_step: float = 1e-3, quadrature_nodes: int = 100_000,
            sigma_n_mc: int = 100_000, sigma_step: float = 1e-5, seed: int = 0,
            cfg: Optional[SolveConfig] = None) -> AsymptoticPrediction:
    """Full prediction pipeline for a model.

    Without analytic truth the optimum comes from :func:`solve_population`,
    which must be unique.  PL models use the closed-form score; other models
    use finite differences.
    """
    spec = spec or model.risk
    truth = truth or model.truth
    truth_source = truth.source if truth else "solve_population"
    if truth is None:
        pop = solve_population(model, spec, quadrature_nodes, cfg).require_unique()
        truth = Truth(pop.theta, pop.x, truth_source)
    theta_star = truth.theta_array
    H = estimate_hessian(model, spec, theta_star, truth.x, hessian_step, quadrature_nodes)
    rng = generator(mix64(seed, 0, 0))
    if isinstance(model.goal, PLGoal):
        Sigma, rejected = sigma_pl(model, spec, theta_star, truth.x, sigma_n_mc, rng,
                                   return_rejected=True)
        method = "pl_closed_form"
    else:
        Sigma = estimate_sigma_fd(model, spec, theta_star, truth.x, sigma_step, sigma_n_mc, rng)
        rejected, method = 0, "finite_difference"
    C = predict_covariance(H, Sigma, model.m)
    settings = {
        "hessian_step": hessian_step,
        "quadrature_nodes": quadrature_nodes,
        "sigma_method": method,
        "sigma_n_mc": sigma_n_mc,
        "sigma_step": sigma_step if method == "finite_difference" else None,
        "sigma_rejected": rejected,
        "seed": seed,
        "truth_source": truth_source,
    }
    return AsymptoticPrediction(H, Sigma, C, model.beta, tuple(map(float, theta_star)),
                                float(truth.x), settings)


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicationRow:
    n: int
    rep: int
    seed: int
    theta_hat: Tuple[float, ...]
    x_hat: float
    value: float
    solve_ok: bool


@dataclass(frozen=True)
class ReplicationTable:
    m: int
    rows: Tuple[ReplicationRow, ...]

    def __post_init__(self):
        rows = tuple(sorted(self.rows, key=lambda r: (r.n, r.rep)))
        keys = [(r.n, r.rep) for r in rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (n, rep) rows")
        if any(len(r.theta_hat) != self.m for r in rows):
            raise ValueError("theta_hat length does not match m")
        object.__setattr__(self, "rows", rows)

    @property
    def n_values(self) -> List[int]:
        return sorted({r.n for r in self.rows})

    def thetas(self, n: int) -> np.ndarray:
        """Successful ``theta_hat`` rows at sample size ``n``, shape ``(k, m)``."""
        ok = [r.theta_hat for r in self.rows if r.n == n and r.solve_ok]
        return np.array(ok, dtype=float).reshape(-1, self.m)

    def header(self) -> List[str]:
        return (["n", "rep", "seed"] + [f"theta_{k + 1}" for k in range(self.m)]
                + ["x_hat", "value", "solve_ok"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for r in self.rows:
            w.writerow([r.n, r.rep, r.seed, *map(repr, r.theta_hat), repr(r.x_hat),
                        repr(r.value), "true" if r.solve_ok else "false"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReplicationTable":
        reader = csv.reader(io.StringIO(text))
        head = next(reader)
        m = sum(1 for h in head if h.startswith("theta_"))
        rows = []
        for rec in reader:
            rows.append(ReplicationRow(int(rec[0]), int(rec[1]), int(rec[2]),
                                       tuple(float(v) for v in rec[3:3 + m]),
                                       float(rec[3 + m]), float(rec[4 + m]),
                                       rec[5 + m] == "true"))
        return cls(m, tuple(rows))


# Worker state is installed by the pool initializer; with the fork start
# method it is inherited rather than pickled, so custom callables work too.
_WORKER: dict = {}


def _install(model, spec, cfg, n_list, base_seed):
    _WORKER.update(model=model, spec=spec, cfg=cfg, n_list=n_list, base_seed=base_seed)


def _replicate(task: Tuple[int, int]) -> ReplicationRow:
    n_index, rep = task
    model, spec, cfg = _WORKER["model"], _WORKER["spec"], _WORKER["cfg"]
    n = _WORKER["n_list"][n_index]
    seed = mix64(_WORKER["base_seed"], n_index, rep)
    try:
        z = model.sample(generator(seed), n)
        sol = solve_saa(model, spec, z, cfg)
        return ReplicationRow(n, rep, seed, sol.theta_hat, sol.x_hat, sol.value, True)
    except (DivSaaError, ArithmeticError, ValueError, FloatingPointError):
        nan = float("nan")
        return ReplicationRow(n, rep, seed, (nan,) * model.m, nan, nan, False)


def run_replications(model: GoalModel, spec: Optional[DivergencePair], n_list: Sequence[int],
                     R: int, base_seed: int, cfg: Optional[SolveConfig] = None,
                     workers: int = 1) -> ReplicationTable:
    """Solve ``R`` independent SAA problems at every sample size in ``n_list``.

    The sample for ``(n_list[k], rep)`` is drawn from the stream
    ``mix64(base_seed, k, rep)``; rows are merged sorted by ``(n, rep)``.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    n_list = [int(n) for n in n_list]
    if not n_list or min(n_list) < 1:
        raise ValueError("n_list must hold positive sample sizes")
    spec = spec or model.risk
    cfg = cfg or SolveConfig()
    tasks = [(k, rep) for k in range(len(n_list)) for rep in range(R)]
    payload = (model, spec, cfg, n_list, int(base_seed))
    if workers <= 1:
        _install(*payload)
        rows = [_replicate(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_install, initargs=payload) as pool:
            chunk = max(1, len(tasks) // (8 * workers))
            rows = list(pool.map(_replicate, tasks, chunksize=chunk))
    return ReplicationTable(model.m, tuple(rows))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateDiagnostic:
    n_values: Tuple[int, ...]
    medians: Tuple[float, ...]
    slope: float
    slope_se: float
    expected_slope: Optional[float]

    def to_dict(self) -> dict:
        return {
            "medians": {str(n): v for n, v in zip(self.n_values, self.medians)},
            "slope": self.slope,
            "slope_se": self.slope_se,
            "expected_slope": self.expected_slope,
        }


def rate_diagnostic(table: ReplicationTable, theta_star, beta: Optional[float] = None,
                    min_rows: int = 20) -> RateDiagnostic:
    """Log-log regression of the median estimation error on the sample size."""
    theta_star = np.asarray(theta_star, dtype=float).reshape(table.m)
    ns = table.n_values
    if len(ns) < 3:
        raise InsufficientRowsError("need at least three distinct sample sizes")
    meds = []
    for n in ns:
        th = table.thetas(n)
        if th.shape[0] < min_rows:
            raise InsufficientRowsError(f"n={n} has only {th.shape[0]} successful rows")
        meds.append(float(np.median(np.linalg.norm(th - theta_star, axis=1))))
    if min(meds) <= 0.0:
        raise InsufficientRowsError("a median error is zero; the log-log fit is undefined")
    fit = stats.linregress(np.log(ns), np.log(meds))
    expected = None if beta is None else -1.0 / (4.0 - 2.0 * beta)
    return RateDiagnostic(tuple(ns), tuple(meds), float(fit.slope), float(fit.stderr), expected)


@dataclass(frozen=True, eq=False)
class CoverageResult:
    n: int
    R: int
    emp_cov: np.ndarray
    frob_rel_err: float
    ks: Tuple[float, ...]
    ks_critical: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "R": self.R,
            "emp_cov": self.emp_cov.tolist(),
            "frob_rel_err": self.frob_rel_err,
            "ks": list(self.ks),
            "ks_critical": self.ks_critical,
        }


def coverage_normality(table: ReplicationTable, theta_star, C_pred, min_rows: int = 100,
                       n: Optional[int] = None) -> CoverageResult:
    """Compare the spread of ``sqrt(n) (theta_hat - theta*)`` with ``C_pred``.

    Uses the largest sample size in the table unless ``n`` is given.  The KS
    statistic is computed per coordinate after scaling by the predicted
    standard deviation; 1.63/sqrt(R) is the asymptotic 1% critical value.
    """
    C_pred = np.atleast_2d(np.asarray(C_pred, dtype=float))
    if np.any(np.diag(C_pred) <= 0):
        raise ValueError("predicted variances must be positive")
    n = n if n is not None else max(table.n_values)
    th = table.thetas(n)
    R = th.shape[0]
    if R < min_rows:
        raise InsufficientRowsError(f"need at least {min_rows} successful rows, got {R}")
    scaled = np.sqrt(n) * (th - np.asarray(theta_star, dtype=float).reshape(table.m))
    emp = np.atleast_2d(np.cov(scaled, rowvar=False))
    frob = float(np.linalg.norm(emp - C_pred) / np.linalg.norm(C_pred))
    ks = tuple(float(stats.kstest(scaled[:, j] / np.sqrt(C_pred[j, j]), "norm").statistic)
               for j in range(table.m))
    return CoverageResult(int(n), int(R), emp, frob, ks, 1.63 / np.sqrt(R))
