import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from deepteams.cli import main
from deepteams.errors import ScenarioError
from deepteams.scenario import (
    apply_overrides, bundled_scenario_path, load_scenario, parse_scenario, parse_scenario_text,
    serialize_scenario, to_number,
)
from deepteams.tasks import RunManifest, run_smart_grid_example, run_task

SMART = bundled_scenario_path("smart_grid")
FLOW = bundled_scenario_path("flow2")


def _raw(path):
    return yaml.safe_load(Path(path).read_text())


def _dump(tmp_path, raw, name="s.scenario"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- scenario parsing ------------------------------------------------------

def test_bundled_smart_grid_scenario_values():
    cfg = parse_scenario(SMART)
    m = cfg.build_model()
    assert m.n == 10 and m.beta == 1.0
    for name, val in (("A", 1), ("B", 1), ("Q", 1), ("R", 1), ("qbar", 4), ("rbar", 1)):
        assert getattr(m, name)[0, 0] == val
    h = cfg.hyper()
    assert (h["r"], h["eta"], h["T"], h["L"]) == (0.15, 0.3, 10, 100)
    assert np.allclose(m.alpha[:, 0] ** 2, [0.5] * 6 + [1.5, 1.0, 2.0, 2.5])
    assert m.noise.cov[0, 0] == 0.02


def test_bundled_flow2_scenario():
    m = parse_scenario(FLOW).build_model()
    assert m.states == ("a", "b") and m.n == 3 and m.beta == 0.9


def test_numbers_and_square_roots():
    assert to_number("sqrt(2.5)") == pytest.approx(2.5 ** 0.5)
    assert to_number("1e-10") == 1e-10
    for bad in ("sqrt(x)", True, [1]):
        with pytest.raises(ScenarioError):
            to_number(bad)


def test_missing_model_type_is_rejected(tmp_path):
    raw = _raw(SMART)
    del raw["model"]["model_type"]
    with pytest.raises(ScenarioError, match="model_type"):
        parse_scenario(_dump(tmp_path, raw))


def test_non_orthonormal_alpha_names_the_invariant(tmp_path):
    raw = _raw(SMART)
    raw["model"]["alpha"] = [[1.0]] * 9 + [[2.0]]
    with pytest.raises(ScenarioError, match="orthonormality"):
        parse_scenario(_dump(tmp_path, raw))


def test_cost_matrix_invariant_checked_at_load(tmp_path):
    raw = _raw(SMART)
    raw["model"]["R"] = [[-1.0]]
    with pytest.raises(ScenarioError, match="R must be symmetric positive definite"):
        parse_scenario(_dump(tmp_path, raw))


@pytest.mark.parametrize("where", [None, "model", "hyperparameters", "output"])
def test_unknown_keys_are_rejected(tmp_path, where):
    raw = _raw(SMART)
    (raw if where is None else raw[where])["surprise"] = 1
    with pytest.raises(ScenarioError, match="surprise"):
        parse_scenario(_dump(tmp_path, raw))


def test_task_must_match_model_type(tmp_path):
    raw = _raw(FLOW)
    raw["task"] = "riccati"
    with pytest.raises(ScenarioError, match="not available"):
        parse_scenario(_dump(tmp_path, raw))


def test_finite_model_invariants_checked_at_load(tmp_path):
    raw = _raw(FLOW)
    raw["model"]["kernel"][0][0] = [0.5, 0.4]
    with pytest.raises(ScenarioError, match="kernel row"):
        parse_scenario(_dump(tmp_path, raw))


def test_parse_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.scenario"
    p.write_text("seed: 0\nmodel:\n  model_type: lq\n  A: [[1.0]\n")
    with pytest.raises(ScenarioError, match=r"bad.scenario:\d+:\d+"):
        parse_scenario(p)


def test_missing_file_is_a_scenario_error(tmp_path):
    with pytest.raises(ScenarioError):
        parse_scenario(tmp_path / "nope.scenario")


@pytest.mark.parametrize("path", [SMART, FLOW])
def test_round_trip(path):
    cfg = parse_scenario(path)
    again = parse_scenario_text(serialize_scenario(cfg))
    assert again == cfg
    assert serialize_scenario(again) == serialize_scenario(cfg)


def test_overrides_resolve_bare_and_dotted_keys():
    raw = _raw(SMART)
    out = apply_overrides(raw, ["iters=7", "n=1", "model.alpha=[[1]]", "output.directory=x", "seed=4", "newkey=1"])
    assert out["hyperparameters"]["iters"] == 7 and out["model"]["n"] == 1
    assert out["model"]["alpha"] == [[1]] and out["output"]["directory"] == "x" and out["seed"] == 4
    assert out["hyperparameters"]["newkey"] == 1
    assert raw["hyperparameters"]["iters"] == 5000  # input untouched
    with pytest.raises(ScenarioError):
        apply_overrides(raw, ["no-equals-sign"])
    with pytest.raises(ScenarioError):
        load_scenario(SMART, ["newkey=1"])


# --- tasks -----------------------------------------------------------------

def test_riccati_task_json(tmp_path):
    manifest = run_task(parse_scenario(SMART), tmp_path, task="riccati")
    out = json.loads((tmp_path / "riccati.json").read_text())
    assert out["P"]["data"][0] == pytest.approx(1.6180340, abs=1e-7)
    assert out["Pbold"]["data"][0] == pytest.approx(6.5311289, abs=1e-7)
    assert out["theta"]["data"][0] == pytest.approx(-0.6180340, abs=1e-7)
    assert out["thetabold"]["data"][0] == pytest.approx(-0.7655644, abs=1e-7)
    assert out["P"]["rows"] == out["P"]["cols"] == 1
    assert all(c["ok"] for c in out["assumptions"])
    assert manifest.verify(tmp_path)
    recorded = json.loads((tmp_path / "manifest.json").read_text())
    assert recorded["outputs"] == manifest.outputs and recorded["config"]["task"] == "riccati"


def test_plan_dss_task_values(tmp_path):
    run_task(parse_scenario(FLOW), tmp_path, task="plan-dss")
    rows = _read_csv(tmp_path / "dss_values.csv")
    header = rows[0]
    assert header[:5] == ["rank", "n_a", "n_b", "value", "law_index"]
    for row in rows[1:]:
        n_a, n_b, v = int(row[1]), int(row[2]), float(row[3])
        assert v == pytest.approx(n_a / (n_a + n_b), abs=1e-9)


@pytest.mark.parametrize("task,files", [
    ("plan-ns", ["ns_values.csv"]),
    ("qlearn", ["qlearn_trace.csv", "qtable.csv"]),
    ("simulate", ["trajectory.csv"]),
    ("evaluate", ["evaluation.csv"]),
])
def test_finite_tasks_emit_rectangular_csv(tmp_path, task, files):
    overrides = ["episodes=500"] if task == "qlearn" else []
    manifest = run_task(load_scenario(FLOW, overrides), tmp_path, task=task)
    assert sorted(o["path"] for o in manifest.outputs) == sorted(files)
    for f in files:
        rows = _read_csv(tmp_path / f)
        assert len(rows) > 1 and len({len(r) for r in rows}) == 1


@pytest.mark.parametrize("task,files", [
    ("simulate", ["trajectory.csv"]),
    ("evaluate", ["evaluation.csv"]),
    ("pg", ["pg_trace_seed5.csv"]),
])
def test_lq_tasks_emit_rectangular_csv(tmp_path, task, files):
    cfg = load_scenario(SMART, ["iters=20", "seeds=[5]", "trials=20", "sim_horizon=30"])
    manifest = run_task(cfg, tmp_path, task=task)
    assert sorted(o["path"] for o in manifest.outputs) == files
    rows = _read_csv(tmp_path / files[0])
    assert len({len(r) for r in rows}) == 1


def test_pg_trace_columns(tmp_path):
    run_task(load_scenario(SMART, ["iters=3", "seeds=[0]"]), tmp_path, task="pg")
    rows = _read_csv(tmp_path / "pg_trace_seed0.csv")
    assert rows[0] == ["k", "theta_0_0", "thetabold_0_0", "mean_cost", "dist_theta", "dist_thetabold", "diverged"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert float(rows[1][4]) == pytest.approx(abs(float(rows[1][1]) + 0.6180339887), abs=1e-9)


def test_example_with_zero_iterations(tmp_path):
    manifest = run_smart_grid_example(["iters=0"], out_dir=tmp_path)
    names = sorted(o["path"] for o in manifest.outputs)
    assert names == ["pg_trace_seed0.csv", "pg_trace_seed1.csv", "pg_trace_seed2.csv", "riccati.json", "summary.json"]
    assert len(_read_csv(tmp_path / "pg_trace_seed0.csv")) == 1
    assert manifest.verify(tmp_path)


def test_example_with_single_agent(tmp_path):
    manifest = run_smart_grid_example(["iters=0", "n=1", "alpha=[[1]]"], out_dir=tmp_path)
    assert manifest.config["model"]["n"] == 1 and manifest.verify(tmp_path)


def test_output_formats_filter_files(tmp_path):
    manifest = run_task(load_scenario(SMART, ["output.formats=[csv]"]), tmp_path, task="riccati")
    assert manifest.outputs == [] and (tmp_path / "manifest.json").exists()


def test_manifest_detects_tampering(tmp_path):
    manifest = run_task(parse_scenario(FLOW), tmp_path, task="plan-dss")
    (tmp_path / "dss_values.csv").write_text("x\n")
    assert not manifest.verify(tmp_path)
    assert isinstance(manifest, RunManifest)


# --- command line ----------------------------------------------------------

def test_cli_success_and_seed_flag(tmp_path, capsys):
    assert main(["pg", "--scenario", str(SMART), "--seed", "9", "--override", "iters=2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "pg_trace_seed9.csv").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 9
    assert "pg_trace_seed9.csv" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["riccati", "--scenario", str(tmp_path / "missing")]) == 2
    raw = _raw(SMART)
    raw["model"]["A"] = [[2.0]]
    raw["model"]["B"] = [[0.0]]
    assert main(["riccati", "--scenario", str(_dump(tmp_path, raw)), "--out", str(tmp_path / "o")]) == 5
    raw = _raw(FLOW)
    raw["model"]["beta"] = 1.0
    assert main(["plan-dss", "--scenario", str(_dump(tmp_path, raw, "f.scenario")), "--out", str(tmp_path)]) == 3
    assert main(["plan-dss", "--scenario", str(FLOW), "--override", "enumeration_bound=2",
                 "--override", "kernel_method=enumerate", "--out", str(tmp_path)]) == 7
    assert main(["plan-dss", "--scenario", str(FLOW), "--override", "max_iter=1", "--out", str(tmp_path)]) == 4
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_cli_example_subcommand(tmp_path):
    assert main(["example", "smart-grid", "--override", "iters=1", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["seeds"]) == {"0", "1", "2"}


def test_module_entry_point_and_log_level(tmp_path):
    env = dict(os.environ, DEEPTEAMS_LOG_LEVEL="INFO")
    proc = subprocess.run([sys.executable, "-m", "deepteams", "riccati", "--scenario", str(SMART),
                           "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO deepteams.tasks: running riccati" in proc.stderr
