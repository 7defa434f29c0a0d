import json

import numpy as np
import pytest

from gnep_inverse.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from gnep_inverse.equilibrium import SolverSettings, solve_equilibrium
from gnep_inverse.game import CostParameterization, GameInstance
from gnep_inverse.inverse import ParameterBounds, load_observations, recover_parameters
from gnep_inverse.network import build_grid, load_network_file

from conftest import shared


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv, "--json")
    return code, json.loads(out)


@pytest.fixture
def costs_2x2(tmp_path):
    rng = np.random.default_rng(4)
    p = shared(rng.uniform(1, 5, 8), rng.uniform(5, 20, 8), 2)
    path = tmp_path / "costs.json"
    p.save(path)
    return p, path


def test_generate_grid(tmp_path, capsys):
    out = tmp_path / "g.json"
    code, doc = run_json(capsys, "generate-grid", "--side", 4, "--out", out)
    assert code == EXIT_OK and doc["arcs"] == 48 and doc["nodes"] == 16
    net = load_network_file(out)
    assert net.arc_count == 48
    assert [(a.tail, a.head) for a in net.arcs] == [(a.tail, a.head) for a in build_grid(4).arcs]


def test_count_variables(capsys):
    code, out = run(capsys, "count-variables", "--grid", 16, "--players", 10)
    assert code == EXIT_OK and out.strip() == "430080"
    code, out = run(capsys, "count-variables", "--grid", 4, "--players", 2)
    assert out.strip() == "1056"
    code, _ = run(capsys, "count-variables", "--grid", 15, "--players", 2)
    assert code == EXIT_INVALID


def test_solve_forward_matches_library(costs_2x2, capsys):
    p, path = costs_2x2
    code, doc = run_json(capsys, "solve-forward", "--side", 2, "--players", 2, "--costs", path, "--od", "1,4")
    assert code == EXIT_OK and doc["converged"] == 1
    lib = solve_equilibrium(GameInstance(build_grid(2), 2, 2.0, (1, 4)), p, SolverSettings())
    assert np.allclose(doc["flows"], lib.x, atol=1e-12)


def test_solve_then_recover_matches_library(costs_2x2, tmp_path, capsys):
    _, path = costs_2x2
    obs_path = tmp_path / "obs.csv"
    code, doc = run_json(capsys, "solve-forward", "--side", 2, "--players", 2, "--costs", path,
                         "--alpha-rule", "half", "--out", obs_path)
    assert code == EXIT_OK and doc["pairs"] == doc["converged"] == 12
    assert obs_path.with_suffix(".json").exists()
    rec_path = tmp_path / "rec.json"
    code, doc = run_json(capsys, "recover", "--observations", obs_path, "--out", rec_path)
    assert code == EXIT_OK and doc["io_objective"] <= 1e-5 and doc["contract_ok"]
    obs = load_observations(obs_path)
    lib = recover_parameters(obs, ParameterBounds.uniform(8, (1, 5), (5, 20)), "shared")
    assert doc["io_objective"] == pytest.approx(lib.io_objective, abs=1e-12)
    assert np.allclose(CostParameterization.load(rec_path).c_int, lib.params.c_int)


def test_spectral_check(costs_2x2, capsys):
    p, path = costs_2x2
    code, doc = run_json(capsys, "spectral-check", "--costs", path)
    assert code == EXIT_OK and doc["is_positive_definite"]
    assert doc["min_eig_symmetric_part"] >= p.c_int[0].min() - 1e-10


def test_experiment_and_summarize(tmp_path, capsys):
    out = tmp_path / "exp"
    code, doc = run_json(capsys, "run-experiment", "--seed", 3, "--grid", 2, "--players", 2,
                         "--alpha-rule", "full", "--trials", 2, "--max-od-pairs", 3, "--out", out)
    assert code == EXIT_OK and doc["completed"] == 2
    csv_out = tmp_path / "s.csv"
    code, summ = run_json(capsys, "summarize", out / "report.json", "--out", csv_out)
    assert code == EXIT_OK and summ["records"] == 2
    by_metric = {r["metric"]: r for r in summ["rows"]}
    lib = {r["metric"]: r for r in doc["summaries"]}
    assert by_metric["flow_error"] == lib["flow_error"]
    assert csv_out.read_text().startswith("metric,group,")


def test_exit_codes(tmp_path, capsys):
    assert main(["run-experiment", "--grid", "2"]) == EXIT_INVALID  # --seed is required
    assert main(["solve-forward", "--side", "2", "--players", "2", "--seed", "1",
                 "--alpha-rule", "explicit", "--alpha", "0.5"]) == EXIT_INVALID
    assert main(["solve-forward", "--side", "3", "--players", "2", "--seed", "1", "--od", "1,9",
                 "--tol", "1e-30"]) == EXIT_NOT_CONVERGED
    assert main(["recover", "--observations", str(tmp_path / "missing.csv")]) == EXIT_INVALID
    assert main(["generate-grid", "--side", "3", "--out", str(tmp_path / "no" / "g.json")]) == EXIT_INVALID
    assert main(["solve-forward", "--side", "2", "--players", "2"]) == EXIT_INVALID
    bad = tmp_path / "bad.csv"
    bad.write_text("od_index,player,arc,flow\n0,0,x,1\n")
    assert main(["recover", "--observations", str(bad)]) == EXIT_INVALID
    capsys.readouterr()
