"""Command-line front end.

Exit codes: 0 success, 2 configuration or I/O problems, 3 when the joint
Hessian is not positive definite, 4 when a PL partition check finds
violations.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import divergence as dv
from .asymptotics import (
    coverage_normality,
    predict,
    predict_covariance,
    rate_diagnostic,
    run_replications,
)
from .config import ExperimentConfig, load_config, risk_from_dict
from .errors import ConfigError, DivSaaError, HessianNotPositiveDefinite
from .models import PLGoal, c_diagnostics, validate_partition
from .solver import solve_saa
from .streams import generator, mix64

EXIT_OK, EXIT_CONFIG, EXIT_A4, EXIT_PARTITION = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _header(cfg: ExperimentConfig) -> dict:
    return {
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "model": cfg.model.name,
        "risk": cfg.risk.describe(),
    }


# -- rho -----------------------------------------------------------------

def cmd_rho(args) -> int:
    try:
        text = Path(args.sample).read_text()
    except OSError as exc:
        raise CliError(f"cannot read sample file: {exc}") from exc
    try:
        values = [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise CliError(f"sample file must hold one number per line: {exc}") from exc
    if not values:
        raise CliError("sample file is empty")
    params = {"kind": args.risk, "alpha": args.alpha, "gamma": args.gamma, "p": args.p}
    spec = risk_from_dict({k: v for k, v in params.items() if v is not None})
    if args.generic:
        res = dv.oce_minimize(values, spec, args.tol)
    else:
        res = dv.evaluate_risk(values, spec, args.tol)
    print(f"value={res.value:.12g} x_lo={res.x_lo:.12g} x_hi={res.x_hi:.12g} method={res.method}")
    return EXIT_OK


# -- solve ---------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    n = max(cfg.n_list)
    seed = mix64(cfg.base_seed, len(cfg.n_list) - 1, 0)
    z = cfg.model.sample(generator(seed), n)
    sol = solve_saa(cfg.model, cfg.risk, z, cfg.solver)
    doc = _header(cfg)
    doc.update({"n": n, "seed": seed, "solution": sol.to_dict(),
                "diagnostics": {"restarts_agree": sol.restarts_agree, "x_unique": sol.x_unique}})
    _write(cfg.output_dir / "solution.json", _dump(doc))
    print(f"theta_hat={list(sol.theta_hat)} x_hat={sol.x_hat:.12g} value={sol.value:.12g}")
    return EXIT_OK


# -- predict -------------------------------------------------------------

def _prediction(cfg: ExperimentConfig):
    p = cfg.prediction
    if p["override_H"] is not None:
        H = np.asarray(p["override_H"], dtype=float)
        S = np.asarray(p["override_Sigma"], dtype=float)
        D = cfg.model.m + 1
        if H.shape != (D, D) or S.shape != (D, D):
            raise ConfigError(f"override matrices must be {D}x{D}")
        C = predict_covariance(H, S, cfg.model.m)
        return {"H": H.tolist(), "Sigma": S.tolist(), "C_pred": C.tolist(), "beta": cfg.model.beta,
                "rate_exponent": 1.0 / (4.0 - 2.0 * cfg.model.beta),
                "settings": {"source": "override"}}, C
    pred = predict(cfg.model, cfg.risk, None, float(p["hessian_step"]), int(p["quadrature_nodes"]),
                   int(p["sigma_n_mc"]), float(p["sigma_step"]), cfg.base_seed, cfg.solver)
    return pred.to_dict(), pred.C_pred


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    doc = _header(cfg)
    try:
        body, _ = _prediction(cfg)
    except HessianNotPositiveDefinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_A4
    doc["prediction"] = body
    _write(cfg.output_dir / "prediction.json", _dump(doc))
    print(f"C_pred={body['C_pred']}")
    return EXIT_OK


# -- experiment ----------------------------------------------------------

def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    table = run_replications(cfg.model, cfg.risk, cfg.n_list, cfg.R, cfg.base_seed, cfg.solver,
                             workers=args.threads)
    _write(cfg.output_dir / "replications.csv", table.to_csv())

    thr = cfg.thresholds
    truth = cfg.model.truth
    summary = _header(cfg)
    summary.update({"slope": None, "slope_se": None, "expected_slope": -1.0 / (4.0 - 2.0 * cfg.model.beta),
                    "frob_rel_err": None, "ks": None, "ks_critical": None, "notes": [],
                    "thresholds": thr, "failed_rows": sum(not r.solve_ok for r in table.rows)})
    passes = {}
    if truth is None:
        summary["notes"].append("no ground truth; statistics skipped")
    else:
        if len(cfg.n_list) >= 3:
            try:
                rate = rate_diagnostic(table, truth.theta, cfg.model.beta)
                summary.update(rate.to_dict())
                passes["slope"] = bool(thr["slope_min"] <= rate.slope <= thr["slope_max"])
            except DivSaaError as exc:
                summary["notes"].append(f"rate: {exc}")
                passes["slope"] = False
        else:
            summary["notes"].append("rate: fewer than three sample sizes")
        if cfg.model.beta == 1.0:
            try:
                body, C = _prediction(cfg)
                cov = coverage_normality(table, truth.theta, C, int(thr["coverage_min_rows"]))
                summary.update({"frob_rel_err": cov.frob_rel_err, "ks": list(cov.ks),
                                "ks_critical": cov.ks_critical, "coverage_n": cov.n,
                                "emp_cov": cov.emp_cov.tolist(), "C_pred": body["C_pred"]})
                passes["frob"] = bool(cov.frob_rel_err <= thr["frob_max"])
                passes["ks"] = bool(all(k < cov.ks_critical for k in cov.ks))
            except HessianNotPositiveDefinite as exc:
                summary["notes"].append(f"coverage: {exc}")
                passes["frob"] = passes["ks"] = False
            except DivSaaError as exc:
                summary["notes"].append(f"coverage: {exc}")
        else:
            summary["notes"].append("coverage: only the rate exponent is checked when beta < 1")
    summary["pass"] = passes
    _write(cfg.output_dir / "summary.json", _dump(summary))
    print(_dump({k: summary[k] for k in ("slope", "frob_rel_err", "ks", "ks_critical", "pass")}), end="")
    return EXIT_OK


# -- validate-pl ---------------------------------------------------------

def _theta_grid(cfg: ExperimentConfig) -> np.ndarray:
    v = cfg.validate
    if v["thetas"] is not None:
        return np.asarray(v["thetas"], dtype=float).reshape(-1, cfg.model.m)
    k = int(v["theta_points"])
    axes = [np.linspace(l, h, k) for l, h in zip(cfg.model.box.lower, cfg.model.box.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cfg.model.m)


def cmd_validate_pl(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if not isinstance(cfg.model.goal, PLGoal):
        raise CliError(f"model {cfg.model.name} has no piecewise-linear definition")
    g = cfg.model.goal
    v = cfg.validate
    thetas = _theta_grid(cfg)
    z = cfg.model.sample(generator(mix64(cfg.base_seed, 0, 0)), int(v["z_samples"]))
    rep = validate_partition(g, thetas, z)
    print(f"points={rep.points} sum_violations={rep.sum_violations} "
          f"overlap_violations={rep.overlap_violations}")
    if rep.first_offender is not None:
        print(f"first offender theta={list(rep.first_offender[0])} z={list(rep.first_offender[1])}")
    if cfg.model.truth is not None and int(v["diag_samples"]) > 0:
        zd = cfg.model.sample(generator(mix64(cfg.base_seed, 0, 1)), int(v["diag_samples"]))
        rows = c_diagnostics(g, cfg.model.truth.theta, zd, v["deltas"])
        if rows:
            print("pair            " + " ".join(f"d={d:<10g}" for d in rows[0]["deltas"]) + " trend")
        for row in rows:
            ratios = " ".join(f"{r:<12.6g}" for r in row["ratios"])
            print(f"{str(row['pair']):<16}{ratios} {row['trend']}")
    return EXIT_OK if rep.ok else EXIT_PARTITION


# -- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divsaa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"divsaa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    rho = sub.add_parser("rho", help="risk of a sample file (one number per line)")
    rho.add_argument("sample")
    rho.add_argument("--risk", required=True, choices=["avar", "entropic", "polynomial"])
    rho.add_argument("--alpha", type=float)
    rho.add_argument("--gamma", type=float)
    rho.add_argument("--p", type=float)
    rho.add_argument("--tol", type=float, default=1e-10)
    rho.add_argument("--generic", action="store_true", help="skip closed forms")
    rho.set_defaults(func=cmd_rho)

    for name, func, text in (
        ("solve", cmd_solve, "solve one SAA problem at the largest n"),
        ("predict", cmd_predict, "Hessian, score covariance and sandwich covariance"),
        ("experiment", cmd_experiment, "replications, rate and coverage summary"),
        ("validate-pl", cmd_validate_pl, "partition and boundary diagnostics of a PL model"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int, default=1)
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except HessianNotPositiveDefinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_A4
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
