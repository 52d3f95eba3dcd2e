"""Scenario files: YAML documents describing one model plus a task.

Top-level keys::

    seed: int
    task: plan-dss | plan-ns | qlearn | riccati | pg | simulate | evaluate | example
    model: {model_type: finite | lq, ...}
    hyperparameters: {...}
    output: {directory: str, formats: [csv, json]}

Matrix entries may be numbers or strings of the form ``sqrt(x)``.  Unknown
keys anywhere in the document are rejected.
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .errors import DeepTeamsError, InvalidInputError, ScenarioError
from .finite_core import FiniteTeamModel
from .lq_core import DistributionSpec, LqTeamModel, _pd, _psd, build_aggregate_matrices

TASKS = ("plan-dss", "plan-ns", "qlearn", "riccati", "pg", "simulate", "evaluate", "example")
FINITE_TASKS = {"plan-dss", "plan-ns", "qlearn", "simulate", "evaluate"}
LQ_TASKS = {"riccati", "pg", "simulate", "evaluate", "example"}

TOP_KEYS = {"seed", "task", "model", "hyperparameters", "output"}
FINITE_MODEL_KEYS = {"model_type", "states", "actions", "n", "beta", "kernel", "cost", "initial_law"}
LQ_MODEL_KEYS = {"model_type", "n", "A", "B", "abar", "bbar", "Q", "R", "qbar", "rbar", "alpha",
                 "beta", "noise", "initial", "weakly_coupled"}
OUTPUT_KEYS = {"directory", "formats"}

FINITE_HYPER = {
    "tol": 1e-10, "max_iter": 100000, "mixed_step": None, "q": 10, "enumeration_bound": 10**6,
    "kernel_method": "auto",
    "episodes": 20000, "horizon": 4, "schedule": "harmonic", "power": 1.0, "rate": 0.1, "behavior": "uniform",
    "epsilon": 0.1, "trace_every": 1000, "greedy_eval_trials": 0,
    "strategy": "dss", "fixed_law": None, "initial_counts": None, "sim_horizon": 20, "trials": 200,
}
LQ_HYPER = {
    "L": 100, "T": 10, "r": 0.15, "eta": 0.3, "iters": 5000, "seeds": None, "cost_ceiling": 1e6,
    "riccati_tol": 1e-10, "riccati_max_iter": 100000, "controller": "dss", "sim_horizon": 50,
    "trials": 200, "tail_window": 1000, "band": 0.05,
}

_SQRT = re.compile(r"^\s*sqrt\(\s*([-+0-9.eE]+)\s*\)\s*$")


def to_number(v, what="value") -> float:
    if isinstance(v, bool):
        raise ScenarioError(f"{what}: expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        m = _SQRT.match(v)
        try:
            return math.sqrt(float(m.group(1))) if m else float(v)
        except ValueError:
            pass
    raise ScenarioError(f"{what}: expected a number or sqrt(x), got {v!r}")


def to_array(v, what) -> np.ndarray:
    def conv(x):
        if isinstance(x, list):
            return [conv(e) for e in x]
        return to_number(x, what)
    try:
        return np.asarray(conv(v), dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{what}: ragged or malformed array ({exc})") from None


@dataclass
class ScenarioConfig:
    model: Dict[str, Any]
    task: Optional[str] = None
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    output: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    @property
    def model_type(self) -> str:
        return self.model["model_type"]

    def to_dict(self) -> Dict[str, Any]:
        d = {"seed": self.seed}
        if self.task is not None:
            d["task"] = self.task
        d["model"] = copy.deepcopy(self.model)
        if self.hyperparameters:
            d["hyperparameters"] = copy.deepcopy(self.hyperparameters)
        if self.output:
            d["output"] = copy.deepcopy(self.output)
        return d

    def hyper(self) -> Dict[str, Any]:
        """Hyperparameters merged over the defaults of the model type."""
        base = dict(FINITE_HYPER if self.model_type == "finite" else LQ_HYPER)
        base.update(self.hyperparameters)
        return base

    def build_model(self):
        return build_model(self.model)


def serialize_scenario(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def _reject_unknown(section: Dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")


def _distribution(spec, what) -> DistributionSpec:
    if not isinstance(spec, dict) or "family" not in spec:
        raise ScenarioError(f"model.{what}: expected a mapping with a 'family' key")
    fam = spec["family"]
    try:
        if fam == "normal":
            _reject_unknown(spec, {"family", "mean", "cov"}, f"model.{what}")
            return DistributionSpec.normal(to_array(spec["mean"], what), to_array(spec["cov"], what))
        if fam == "uniform":
            _reject_unknown(spec, {"family", "low", "high"}, f"model.{what}")
            return DistributionSpec.uniform(to_array(spec["low"], what), to_array(spec["high"], what))
        if fam == "point":
            _reject_unknown(spec, {"family", "value"}, f"model.{what}")
            return DistributionSpec.point(to_array(spec["value"], what))
    except KeyError as exc:
        raise ScenarioError(f"model.{what}: missing key {exc}") from None
    except InvalidInputError as exc:
        raise ScenarioError(f"model.{what}: {exc}") from None
    raise ScenarioError(f"model.{what}: unknown family {fam!r}")


def build_model(model: Dict[str, Any]):
    """Construct and validate the model object described by a scenario section."""
    if not isinstance(model, dict):
        raise ScenarioError("model section must be a mapping")
    if "model_type" not in model:
        raise ScenarioError("model section is missing 'model_type' (finite or lq)")
    kind = model["model_type"]
    try:
        if kind == "finite":
            _reject_unknown(model, FINITE_MODEL_KEYS, "model")
            missing = FINITE_MODEL_KEYS - {"model_type"} - set(model)
            if missing:
                raise ScenarioError(f"model is missing key(s): {', '.join(sorted(missing))}")
            return FiniteTeamModel.from_tables(
                [str(s) for s in model["states"]], [str(a) for a in model["actions"]],
                int(model["n"]), to_array(model["kernel"], "kernel"), to_array(model["cost"], "cost"),
                to_number(model["beta"], "beta"), to_array(model["initial_law"], "initial_law"),
            )
        if kind == "lq":
            _reject_unknown(model, LQ_MODEL_KEYS, "model")
            missing = LQ_MODEL_KEYS - {"model_type", "weakly_coupled"} - set(model)
            if missing:
                raise ScenarioError(f"model is missing key(s): {', '.join(sorted(missing))}")
            m = LqTeamModel(
                n=int(model["n"]),
                A=to_array(model["A"], "A"), B=to_array(model["B"], "B"),
                abar=tuple(to_array(a, "abar") for a in model["abar"]),
                bbar=tuple(to_array(b, "bbar") for b in model["bbar"]),
                Q=to_array(model["Q"], "Q"), R=to_array(model["R"], "R"),
                qbar=to_array(model["qbar"], "qbar"), rbar=to_array(model["rbar"], "rbar"),
                alpha=to_array(model["alpha"], "alpha"), beta=to_number(model["beta"], "beta"),
                noise=_distribution(model["noise"], "noise"),
                initial=_distribution(model["initial"], "initial"),
                weakly_coupled=bool(model.get("weakly_coupled", False)),
            )
            mats = build_aggregate_matrices(m)
            for name, mat, check in (("Q", m.Q, _psd), ("Qbold", mats.Qbold, _psd),
                                     ("R", m.R, _pd), ("Rbold", mats.Rbold, _pd)):
                if not check(mat):
                    kind_ = "positive semi-definite" if check is _psd else "positive definite"
                    raise ScenarioError(f"cost-matrix invariant violated: {name} must be symmetric {kind_}")
            return m
    except ScenarioError:
        raise
    except (DeepTeamsError, ValueError, TypeError) as exc:
        raise ScenarioError(f"model validation failed: {exc}") from None
    raise ScenarioError(f"unknown model_type {kind!r} (expected finite or lq)")


def config_from_dict(raw) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping at top level")
    _reject_unknown(raw, TOP_KEYS, "scenario")
    if "model" not in raw:
        raise ScenarioError("scenario has no model section")
    model = raw["model"]
    if not isinstance(model, dict) or "model_type" not in model:
        raise ScenarioError("model section is missing 'model_type' (finite or lq)")
    cfg = ScenarioConfig(
        model=model,
        task=raw.get("task"),
        hyperparameters=raw.get("hyperparameters") or {},
        output=raw.get("output") or {},
        seed=raw.get("seed", 0),
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ScenarioError(f"seed must be a non-negative integer, got {cfg.seed!r}")
    kind = cfg.model.get("model_type")
    if kind not in ("finite", "lq"):
        raise ScenarioError(f"unknown model_type {kind!r} (expected finite or lq)")
    if cfg.task is not None:
        allowed = FINITE_TASKS if kind == "finite" else LQ_TASKS
        if cfg.task not in allowed:
            raise ScenarioError(f"task {cfg.task!r} is not available for {kind} models")
    _reject_unknown(cfg.hyperparameters, FINITE_HYPER if kind == "finite" else LQ_HYPER, "hyperparameters")
    _reject_unknown(cfg.output, OUTPUT_KEYS, "output")
    build_model(cfg.model)


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark is not None else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{where}: parse error: {problem}") from None
    return config_from_dict(raw)


def parse_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario_text(text, str(path))


def bundled_scenario_path(name: str) -> Path:
    """Path to a scenario shipped with the package (e.g. ``smart_grid``)."""
    ref = resources.files("deepteams") / "scenarios" / f"{name}.scenario"
    if not ref.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Path(str(ref))


def apply_overrides(raw: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply ``KEY=VALUE`` overrides to a raw scenario mapping.

    Dotted keys address nested sections.  A bare key is looked up in
    hyperparameters, model, output and then the top level; unknown bare keys
    land in hyperparameters (and are then rejected by validation).
    """
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form KEY=VALUE")
        key, value = item.split("=", 1)
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError:
            raise ScenarioError(f"override {item!r}: value is not valid YAML") from None
        parts = key.strip().split(".")
        if len(parts) == 1:
            k = parts[0]
            if k in TOP_KEYS:
                raw[k] = parsed
                continue
            for section in ("hyperparameters", "model", "output"):
                if k in (raw.get(section) or {}):
                    raw[section][k] = parsed
                    break
            else:
                raw.setdefault("hyperparameters", {})
                if raw["hyperparameters"] is None:
                    raw["hyperparameters"] = {}
                raw["hyperparameters"][k] = parsed
            continue
        node = raw
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ScenarioError(f"override {item!r}: {p} is not a section")
        node[parts[-1]] = parsed
    return raw


def load_scenario(path, overrides: Optional[List[str]] = None) -> ScenarioConfig:
    """Parse a scenario file and apply overrides before validation."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    if not overrides:
        return parse_scenario_text(text, str(path))
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError:
        return parse_scenario_text(text, str(path))
    return config_from_dict(apply_overrides(raw, overrides))
