"""TOML experiment configuration.

One file describes one experiment: a model (built-in name or inline
piecewise-linear definition), an optional risk override, the replication
design, solver settings, prediction settings, pass/fail thresholds and the
output directory.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import tomli

from . import divergence as dv
from .distributions import distribution_from_dict
from .errors import ConfigError
from .models import GoalModel, ParamBox, PLGoal, Truth, resolve_model
from .solver import SolveConfig

__all__ = ["ExperimentConfig", "load_config", "parse_config", "risk_from_dict", "default_slope_window"]

_SECTIONS: Dict[str, set] = {
    "model": {"name", "pl", "noise", "box", "truth", "smoothness", "beta"},
    "risk": {"kind", "alpha", "gamma", "p"},
    "design": {"n_list", "R", "base_seed"},
    "solver": {"grid_points_per_dim", "multistart_k", "pattern_iters", "pattern_tol", "inner_tol"},
    "prediction": {"hessian_step", "sigma_n_mc", "sigma_step", "quadrature_nodes",
                   "override_H", "override_Sigma"},
    "thresholds": {"slope_min", "slope_max", "frob_max", "coverage_min_rows"},
    "validate": {"z_samples", "theta_points", "thetas", "diag_samples", "deltas"},
    "output": {"dir"},
}


def default_slope_window(beta: float):
    """Acceptance window for the log-log slope of the median error."""
    if beta == 1.0:
        return -0.62, -0.38
    if beta == 0.5:
        return -0.48, -0.20
    expected = -1.0 / (4.0 - 2.0 * beta)
    return expected - 0.12, expected + 0.12


def risk_from_dict(spec: Dict[str, Any]) -> dv.DivergencePair:
    kind = spec.get("kind")
    try:
        if kind == "avar":
            return dv.avar(float(spec["alpha"]))
        if kind == "entropic":
            return dv.entropic(float(spec["gamma"]))
        if kind == "polynomial":
            return dv.polynomial(float(spec["p"]))
    except KeyError as exc:
        raise ConfigError(f"risk kind {kind!r} needs parameter {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown risk kind {kind!r}")


@dataclass
class ExperimentConfig:
    model: GoalModel
    risk: dv.DivergencePair
    n_list: List[int]
    R: int
    base_seed: int
    solver: SolveConfig
    prediction: Dict[str, Any]
    thresholds: Dict[str, float]
    validate: Dict[str, Any]
    output_dir: Path
    raw: Dict[str, Any] = field(repr=False, default_factory=dict)

    @property
    def inline_pl(self) -> bool:
        return "pl" in self.raw.get("model", {})

    def config_hash(self) -> str:
        """sha256 of the resolved settings; output location is excluded."""
        doc = {k: v for k, v in self.raw.items() if k != "output"}
        doc.setdefault("design", {})["base_seed"] = self.base_seed
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(raw: Dict[str, Any]) -> None:
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        extra = set(body) - _SECTIONS[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(extra)}")


def _build_model(sec: Dict[str, Any], risk_sec: Optional[Dict[str, Any]]) -> GoalModel:
    if "pl" not in sec:
        if "name" not in sec:
            raise ConfigError("[model] needs a built-in name or an inline pl table")
        try:
            model = resolve_model(sec["name"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        if risk_sec:
            model = model.with_risk(risk_from_dict(risk_sec))
        return model
    try:
        goal = PLGoal.from_dict(sec["pl"])
        noise = distribution_from_dict(sec["noise"])
        box = ParamBox(tuple(sec["box"]["lower"]), tuple(sec["box"]["upper"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed inline PL model: {exc}") from exc
    if not risk_sec:
        raise ConfigError("an inline model needs a [risk] section")
    truth = None
    if "truth" in sec:
        t = sec["truth"]
        try:
            truth = Truth(tuple(float(v) for v in t["theta"]), float(t["x"]), "config")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed [model.truth]: {exc}") from exc
    try:
        return GoalModel(str(sec.get("name", "inline_pl")), goal, noise, box, risk_from_dict(risk_sec),
                         "piecewise_linear", float(sec.get("beta", 1.0)), truth, "inline PL model")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: Dict[str, Any], seed: Optional[int] = None,
                 out: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML document; ``seed`` and ``out`` override the file."""
    _check_keys(raw)
    model = _build_model(raw.get("model", {}), raw.get("risk"))

    design = raw.get("design", {})
    n_list = [int(n) for n in design.get("n_list", [250, 500, 1000, 2000, 4000])]
    if not n_list or min(n_list) < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("design.n_list must be strictly increasing positive integers")
    R = int(design.get("R", 200))
    if R < 2:
        raise ConfigError("design.R must be at least 2")
    base_seed = int(seed if seed is not None else design.get("base_seed", 0))
    if base_seed < 0:
        raise ConfigError("base_seed must be nonnegative")

    try:
        solver = SolveConfig(**raw.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [solver]: {exc}") from exc

    pred = {"hessian_step": 1e-3, "sigma_n_mc": 100_000, "sigma_step": 1e-5,
            "quadrature_nodes": 100_000, "override_H": None, "override_Sigma": None}
    pred.update(raw.get("prediction", {}))
    if (pred["override_H"] is None) != (pred["override_Sigma"] is None):
        raise ConfigError("override_H and override_Sigma must be given together")
    if pred["hessian_step"] <= 0 or pred["sigma_step"] <= 0:
        raise ConfigError("prediction steps must be positive")

    lo, hi = default_slope_window(model.beta)
    thr = {"slope_min": lo, "slope_max": hi, "frob_max": 0.25, "coverage_min_rows": 100}
    thr.update(raw.get("thresholds", {}))
    if thr["slope_min"] >= thr["slope_max"]:
        raise ConfigError("slope_min must be below slope_max")

    val = {"z_samples": 1000, "theta_points": 1000, "thetas": None, "diag_samples": 100_000,
           "deltas": [0.2, 0.1, 0.05, 0.02]}
    val.update(raw.get("validate", {}))
    if val["z_samples"] < 0 or val["theta_points"] < 1:
        raise ConfigError("validate sizes out of range")

    out_dir = Path(out if out is not None else raw.get("output", {}).get("dir", "out"))
    return ExperimentConfig(model, model.risk, n_list, R, base_seed, solver, pred, thr, val,
                            out_dir, raw)


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomli.loads(text.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(raw, seed, out)
