"""Task dispatch: run one scenario task and record what was written."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from . import __version__
from .errors import AssumptionViolation, ScenarioError
from .finite_core import DeepState, LocalLaw
from .finite_planning import (
    LawSequence, evaluate_strategy_cost, extract_dss_strategy, law_grid,
    ns_strategy, simulate_finite_team, value_iteration_dss, value_iteration_ns,
)
from .lq_core import lq_objective_samples, simulate_lq_team, zero_controller
from .lq_planning import (
    check_assumptions, dss_controller, ns_controller, riccati_predicted_cost, solve_deep_riccati,
)
from .outputs import matrix_json, sha256_file, write_csv, write_json
from .policy_gradient import GainTrace, PgHyperparams, run_policy_gradient
from .qlearning import DeterministicLawSpace, LearningSchedule, greedy_indices, q_star_oracle, run_q_learning
from .scenario import ScenarioConfig, apply_overrides, bundled_scenario_path, config_from_dict

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    config: Dict[str, Any]
    version: str
    seed: int
    wall_clock: float = 0.0
    outputs: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    def add(self, path: Path, root: Path):
        self.outputs.append({"path": str(path.relative_to(root)), "sha256": sha256_file(path),
                             "bytes": path.stat().st_size})

    def to_dict(self) -> Dict[str, Any]:
        return {"version": self.version, "seed": self.seed, "wall_clock_seconds": self.wall_clock,
                "config": self.config, "outputs": self.outputs, "summary": self.summary}

    def verify(self, root) -> bool:
        """True when every recorded digest matches the file on disk."""
        root = Path(root)
        return all(sha256_file(root / o["path"]) == o["sha256"] for o in self.outputs)


class _Writer:
    def __init__(self, out_dir: Path, manifest: RunManifest, formats):
        self.out = out_dir
        self.manifest = manifest
        self.formats = set(formats)
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            write_csv(self.out / name, header, rows)
            self.manifest.add(self.out / name, self.out)

    def json(self, name, obj):
        if "json" in self.formats:
            write_json(self.out / name, obj)
            self.manifest.add(self.out / name, self.out)


# ---------------------------------------------------------------------------
# finite tasks
# ---------------------------------------------------------------------------

def _law_columns(model) -> List[str]:
    return [f"p_{x}_{u}" for x in model.states for u in model.actions]


def _laws(model, h):
    return law_grid(model, h["mixed_step"])


def _fixed_law(model, h) -> LocalLaw:
    spec = h["fixed_law"]
    if spec is None:
        raise ScenarioError("strategy 'fixed' needs hyperparameters.fixed_law")
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 1:
        return LocalLaw.deterministic([int(a) for a in arr], model.num_actions)
    return LocalLaw(arr)


def _initial(model, h) -> Optional[DeepState]:
    return None if h["initial_counts"] is None else DeepState(tuple(int(c) for c in h["initial_counts"]))


def _finite_strategy(model, h, name, horizon):
    if name == "dss":
        return extract_dss_strategy(_solve_dss(model, h))
    if name == "ns":
        table = value_iteration_ns(model, h["q"], _laws(model, h), h["tol"], h["max_iter"])
        return ns_strategy(model, table, horizon)
    if name == "fixed":
        return LawSequence([_fixed_law(model, h)])
    raise ScenarioError(f"unknown finite strategy {name!r} (dss, ns or fixed)")


def _solve_dss(model, h):
    return value_iteration_dss(model, _laws(model, h), h["tol"], h["max_iter"], h["enumeration_bound"],
                               h["kernel_method"])


def _plan_dss(cfg, model, h, w: _Writer):
    table = _solve_dss(model, h)
    header = ["rank"] + [f"n_{x}" for x in model.states] + ["value", "law_index"] + _law_columns(model)
    rows = []
    for s in range(len(table.values)):
        law = table.laws[table.law_indices[s]]
        rows.append([s, *table.deep_state(s).counts, table.values[s], table.law_indices[s], *law.probs.ravel()])
    w.csv("dss_values.csv", header, rows)
    return {"sweeps": len(table.gaps), "final_gap": table.gaps[-1]}


def _plan_ns(cfg, model, h, w: _Writer):
    table = value_iteration_ns(model, h["q"], _laws(model, h), h["tol"], h["max_iter"])
    header = ["index"] + [f"m_{x}" for x in model.states] + ["value", "law_index"] + _law_columns(model)
    rows = []
    for g, point in enumerate(table.points):
        law = table.laws[table.law_indices[g]]
        rows.append([g, *point, table.values[g], table.law_indices[g], *law.probs.ravel()])
    w.csv("ns_values.csv", header, rows)
    return {"sweeps": len(table.gaps), "final_gap": table.gaps[-1]}


def _qlearn(cfg, model, h, w: _Writer):
    reference = q_star_oracle(model, kernel_method=h["kernel_method"])
    schedule = LearningSchedule(h["schedule"], power=h["power"], value=h["rate"])
    table, trace = run_q_learning(
        model, h["episodes"], h["horizon"], schedule, seed=cfg.seed, behavior=h["behavior"],
        epsilon=h["epsilon"], reference=reference, trace_every=h["trace_every"] or h["episodes"] * h["horizon"],
        greedy_eval_trials=h["greedy_eval_trials"], greedy_eval_horizon=h["sim_horizon"],
    )
    w.csv("qlearn_trace.csv", ["iteration", "sup_error", "greedy_cost"],
          zip(trace.iterations, trace.sup_error, trace.greedy_cost))
    space = DeterministicLawSpace(model)
    header = ["rank"] + [f"n_{x}" for x in model.states] + ["law_index"] + \
        [f"action_{x}" for x in model.states] + ["q", "q_star", "visits"]
    rows = []
    for s in range(table.q.shape[0]):
        d = DeepState.from_rank(s, model.n, model.num_states)
        for a in range(table.q.shape[1]):
            acts = [model.actions[i] for i in space[a].mapping]
            rows.append([s, *d.counts, a, *acts, table.q[s, a], reference.q[s, a], table.visits[s, a]])
    w.csv("qtable.csv", header, rows)
    greedy, star = greedy_indices(table.q), greedy_indices(reference.q)
    return {"sup_error": float(np.max(np.abs(table.q - reference.q))),
            "greedy_matches_planner": bool(np.array_equal(greedy, star))}


def _simulate_finite(cfg, model, h, w: _Writer):
    T = h["sim_horizon"]
    strategy = _finite_strategy(model, h, h["strategy"], T)
    traj = simulate_finite_team(model, strategy, T, seed=cfg.seed, initial=_initial(model, h))
    header = ["t"] + [f"n_{x}" for x in model.states] + ["cost"]
    w.csv("trajectory.csv", header, [[t + 1, *traj.counts[t], traj.costs[t]] for t in range(T)])
    return {"strategy": traj.strategy, "mean_cost": float(traj.costs.mean())}


def _evaluate_finite(cfg, model, h, w: _Writer):
    T, trials = h["sim_horizon"], h["trials"]
    names = ["dss", "ns"] + (["fixed"] if h["fixed_law"] is not None else [])
    rows = []
    for name in names:
        strategy = _finite_strategy(model, h, name, T)
        mean, se = evaluate_strategy_cost(model, strategy, horizon=T, trials=trials, seed=cfg.seed,
                                          initial=_initial(model, h))
        rows.append([name, mean, se, trials, T])
    w.csv("evaluation.csv", ["strategy", "mean", "stderr", "trials", "horizon"], rows)
    return {r[0]: r[1] for r in rows}


# ---------------------------------------------------------------------------
# LQ tasks
# ---------------------------------------------------------------------------

def _riccati(cfg, model, h, w: _Writer):
    sol = solve_deep_riccati(model, tol=h["riccati_tol"], max_iter=h["riccati_max_iter"])
    report = check_assumptions(model, sol)
    try:
        predicted = riccati_predicted_cost(sol, model)
    except AssumptionViolation:
        predicted = None
    w.json("riccati.json", {
        "P": matrix_json(sol.P), "Pbold": matrix_json(sol.Pbold),
        "theta": matrix_json(sol.theta), "thetabold": matrix_json(sol.thetabold),
        "residual": sol.residual, "residual_bold": sol.residual_bold,
        "assumptions": report.as_dict(), "predicted_cost": predicted,
    })
    return sol


def _gain_header(trace: GainTrace) -> List[str]:
    t0, b0 = trace.theta0, trace.thetabold0
    return (["k"] + [f"theta_{i}_{j}" for i in range(t0.shape[0]) for j in range(t0.shape[1])]
            + [f"thetabold_{i}_{j}" for i in range(b0.shape[0]) for j in range(b0.shape[1])]
            + ["mean_cost", "dist_theta", "dist_thetabold", "diverged"])


def _gain_rows(trace: GainTrace):
    nan = np.full(len(trace), np.nan)
    dt = trace.dist_theta if trace.dist_theta is not None else nan
    db = trace.dist_thetabold if trace.dist_thetabold is not None else nan
    for k in range(len(trace)):
        yield [k + 1, *trace.thetas[k].ravel(), *trace.thetabolds[k].ravel(),
               trace.mean_cost[k], dt[k], db[k], trace.diverged[k]]


def _pg_seeds(cfg, h) -> List[int]:
    return [int(s) for s in h["seeds"]] if h["seeds"] is not None else [cfg.seed]


def first_band_entry(trace: GainTrace, sol, band: float) -> Optional[int]:
    """First 1-based iteration at which both gains are within ``band`` of the reference."""
    if len(trace) == 0:
        return None
    dt = np.abs(trace.thetas - sol.theta).reshape(len(trace), -1).max(axis=1)
    db = np.abs(trace.thetabolds - sol.thetabold).reshape(len(trace), -1).max(axis=1)
    hits = np.flatnonzero((dt <= band) & (db <= band))
    return int(hits[0]) + 1 if hits.size else None


def _pg(cfg, model, h, w: _Writer, sol=None):
    if sol is None:
        sol = solve_deep_riccati(model, tol=h["riccati_tol"], max_iter=h["riccati_max_iter"], check=False)
    summary = {}
    for s in _pg_seeds(cfg, h):
        hyper = PgHyperparams(L=h["L"], T=h["T"], r=h["r"], eta=h["eta"], iters=h["iters"], seed=s,
                              cost_ceiling=h["cost_ceiling"])
        trace = run_policy_gradient(model, hyper, reference=sol)
        w.csv(f"pg_trace_seed{s}.csv", _gain_header(trace), _gain_rows(trace))
        theta_f, bold_f = trace.final
        theta_m, bold_m = trace.tail_mean(h["tail_window"])
        summary[str(s)] = {
            "final_theta": theta_f.ravel().tolist(), "final_thetabold": bold_f.ravel().tolist(),
            "tail_mean_theta": theta_m.ravel().tolist(), "tail_mean_thetabold": bold_m.ravel().tolist(),
            "tail_within_band": bool(np.abs(theta_m - sol.theta).max() <= h["band"]
                                     and np.abs(bold_m - sol.thetabold).max() <= h["band"]),
            "first_band_entry": first_band_entry(trace, sol, h["band"]),
        }
    return summary


def _lq_controller_factory(model, h, name, horizon, sol):
    if name == "dss":
        return lambda: dss_controller(sol, model.alpha)
    if name == "ns":
        ctrl = ns_controller(model, sol, horizon)
        return lambda: ctrl
    if name == "zero":
        return lambda: zero_controller(model)
    raise ScenarioError(f"unknown LQ controller {name!r} (dss, ns or zero)")


def _simulate_lq(cfg, model, h, w: _Writer):
    T = h["sim_horizon"]
    sol = solve_deep_riccati(model, tol=h["riccati_tol"], max_iter=h["riccati_max_iter"])
    ctrl = _lq_controller_factory(model, h, h["controller"], T, sol)()
    traj = simulate_lq_team(model, ctrl, T, seed=cfg.seed)
    header = ["t"] + [f"xbar_{i}" for i in range(traj.xbar.shape[1])] + ["cost"]
    w.csv("trajectory.csv", header, [[t + 1, *traj.xbar[t], traj.costs[t]] for t in range(T)])
    return {"controller": h["controller"], "mean_cost": float(traj.costs.mean())}


def _evaluate_lq(cfg, model, h, w: _Writer):
    T, trials = h["sim_horizon"], h["trials"]
    sol = solve_deep_riccati(model, tol=h["riccati_tol"], max_iter=h["riccati_max_iter"])
    rows = []
    for name in ("dss", "ns", "zero"):
        try:
            factory = _lq_controller_factory(model, h, name, T, sol)
        except AssumptionViolation as exc:
            log.warning("skipping %s controller: %s", name, exc)
            continue
        vals = lq_objective_samples(model, factory, T, trials, seed=cfg.seed)
        se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        rows.append([name, float(vals.mean()), se, trials, T])
    w.csv("evaluation.csv", ["strategy", "mean", "stderr", "trials", "horizon"], rows)
    try:
        predicted = riccati_predicted_cost(sol, model)
    except AssumptionViolation:
        predicted = None
    return {**{r[0]: r[1] for r in rows}, "predicted_infinite_horizon": predicted}


_FINITE = {"plan-dss": _plan_dss, "plan-ns": _plan_ns, "qlearn": _qlearn,
           "simulate": _simulate_finite, "evaluate": _evaluate_finite}


def _example(cfg, model, h, w: _Writer):
    sol = _riccati(cfg, model, h, w)
    per_seed = _pg(cfg, model, h, w, sol=sol)
    summary = {"reference_theta": sol.theta.ravel().tolist(), "reference_thetabold": sol.thetabold.ravel().tolist(),
               "band": h["band"], "tail_window": h["tail_window"], "seeds": per_seed,
               "seeds_within_band": sum(v["tail_within_band"] for v in per_seed.values())}
    w.json("summary.json", summary)
    return summary


_LQ = {"riccati": lambda c, m, h, w: {"residual": _riccati(c, m, h, w).residual},
       "pg": _pg, "simulate": _simulate_lq, "evaluate": _evaluate_lq, "example": _example}


def run_task(config: ScenarioConfig, out_dir=None, task: Optional[str] = None) -> RunManifest:
    """Run the configured task, write its artifacts and ``manifest.json`` into ``out_dir``."""
    task = task or config.task
    if task is None:
        raise ScenarioError("no task given (set 'task' in the scenario or pass a subcommand)")
    table = _FINITE if config.model_type == "finite" else _LQ
    if task not in table:
        raise ScenarioError(f"task {task!r} is not available for {config.model_type} models")
    out = Path(out_dir if out_dir is not None else config.output.get("directory", "out"))
    manifest = RunManifest(config=config.to_dict(), version=__version__, seed=config.seed)
    w = _Writer(out, manifest, config.output.get("formats", ["csv", "json"]))
    model = config.build_model()
    start = time.perf_counter()
    log.info("running %s (seed %d) into %s", task, config.seed, out)
    result = table[task](config, model, config.hyper(), w)
    manifest.wall_clock = time.perf_counter() - start
    manifest.summary = _jsonable(result) if isinstance(result, dict) else {}
    manifest.config["task"] = task
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def load_smart_grid(overrides: Optional[List[str]] = None) -> ScenarioConfig:
    raw = yaml.safe_load(bundled_scenario_path("smart_grid").read_text(encoding="utf-8"))
    return config_from_dict(apply_overrides(raw, overrides or []))


def run_smart_grid_example(overrides: Optional[List[str]] = None, out_dir=None) -> RunManifest:
    """Riccati reference gains plus policy-gradient traces for the bundled smart-grid team."""
    return run_task(load_smart_grid(overrides), out_dir=out_dir, task="example")
