"""Experiment runner: config validation, runs, determinism, exit codes."""

import json
import os

import numpy as np
import pytest

from moffo.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    adagrad_oracle_baseline,
    main,
    sgd_baseline,
    write_trace_csv,
)
from moffo.problems import quadratic_diag
from moffo.solver import SolverConfig, solve


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


BASE_CFG = {
    "problem": {"name": "laplacian1d", "n_fine": 31, "levels": 3},
    "solver": {"weights": "adagrad_like", "mu": 0.5, "eps_top": 1e-4,
               "i_max_top": 300},
    "baselines": [{"kind": "sgd", "lr": 1e-5}, {"kind": "adagrad_oracle"},
                  {"kind": "single_level"}],
    "runs": {"repetitions": 2, "seeds": [3, 4], "out_dir": "."},
}


def test_run_end_to_end(tmp_path):
    cfg = json.loads(json.dumps(BASE_CFG))
    code = main(["run", _write(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {r["seed"] for r in summary["runs"]} == {3, 4}
    assert set(summary["baselines"]) == {"sgd", "adagrad_oracle", "single_level"}
    assert "cost_ratio" in summary
    for run in summary["runs"]:
        assert (tmp_path / run["trace_csv"]).exists()


def test_trace_csv_header_and_cost_consistency(tmp_path):
    cfg = {"problem": {"name": "quadratic2d"},
           "solver": {"eps_top": 1e-5, "i_max_top": 200},
           "runs": {"out_dir": "."}}
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    csv_path = tmp_path / "trace_quadratic2d_seed0.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ("level,iter,kind,grad_norm,step_norm,delta_hat_norm,"
                        "delta_norm,w_min,w_max,cost_cum,f_diag")
    summary = json.loads((tmp_path / "summary.json").read_text())
    last_cost = float(lines[-1].split(",")[9])
    assert summary["runs"][0]["cost"] == pytest.approx(last_cost)


def test_run_determinism_byte_identical(tmp_path):
    cfg = {"problem": {"name": "laplacian1d", "n_fine": 31, "levels": 2,
                       "minibatch": {"fraction": 0.5, "seed": 1}},
           "solver": {"eps_top": 1e-3, "i_max_top": 100},
           "runs": {"seeds": [7], "out_dir": "."}}
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out_a)]) == EXIT_OK
    assert main(["run", _write(tmp_path, cfg), "--out", str(out_b)]) == EXIT_OK
    name = "trace_laplacian1d_seed7.csv"
    assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_unknown_problem_name_exit_2(tmp_path, capsys):
    cfg = {"problem": {"name": "mystery"}}
    assert main(["run", _write(tmp_path, cfg)]) == EXIT_CONFIG
    assert "problem.name" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path, capsys):
    cfg = {"problem": {"name": "quadratic2d"}, "extra_key": 1}
    assert main(["run", _write(tmp_path, cfg)]) == EXIT_CONFIG
    assert "extra_key" in capsys.readouterr().err
    cfg2 = {"problem": {"name": "quadratic2d"}, "solver": {"weird": 2}}
    assert main(["run", _write(tmp_path, cfg2)]) == EXIT_CONFIG
    assert "solver.weird" in capsys.readouterr().err
    cfg3 = {"problem": {"name": "quadratic2d"},
            "baselines": [{"kind": "sgd"}]}
    assert main(["run", _write(tmp_path, cfg3)]) == EXIT_CONFIG
    assert "lr" in capsys.readouterr().err


def test_single_level_baseline_with_multilevel_budgets(tmp_path):
    cfg = {"problem": {"name": "laplacian1d", "n_fine": 31, "levels": 3},
           "solver": {"eps_top": 1e-3, "i_max": [10, 2, 150]},
           "baselines": [{"kind": "single_level"}],
           "runs": {"out_dir": "."}}
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["baselines"]["single_level"][0]["iterations"] <= 150


def test_check_bounds_quadratic_passes(tmp_path):
    cfg = {"problem": {"name": "quadratic2d"},
           "solver": {"mu": 0.5, "eps_top": 1e-6, "i_max_top": 2000},
           "runs": {"out_dir": "."}}
    assert main(["check-bounds", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "bound_report.json").read_text())
    assert report["checks"]["rate_adag"]["status"] == "pass"
    assert report["checks"]["rate_adag"]["max_ratio"] <= 1.0
    assert report["constants"]["L"] == 2.0
    assert report["constants"]["kappa_star"] is not None


def test_check_bounds_divergent_diagnostic(tmp_path):
    cfg = {"problem": {"name": "quadratic2d"},
           "solver": {"weights": "maxgi", "mu": 0.1, "nu": 0.1,
                      "eps_top": 1e-8, "i_max_top": 500},
           "runs": {"out_dir": "."}}
    assert main(["check-bounds", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "bound_report.json").read_text())
    assert report["checks"]["rate_divs"]["status"] in ("pass", "inconclusive")


def test_check_bounds_requires_constants(tmp_path, capsys):
    cfg = {"problem": {"name": "chain1d", "n_fine": 15, "levels": 2},
           "runs": {"out_dir": "."}}
    assert main(["check-bounds", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_gradcheck_all_problems():
    assert main(["gradcheck"]) == EXIT_OK


def test_gradcheck_unknown_problem():
    assert main(["gradcheck", "--problem", "nope"]) == EXIT_CONFIG


def test_list_problems(capsys):
    assert main(["list-problems"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("quadratic2d", "laplacian1d", "chain1d", "resnet"):
        assert name in out


def test_threads_env_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("MOFFO_THREADS", "2")
    cfg = {"problem": {"name": "quadratic2d"},
           "solver": {"eps_top": 1e-4, "i_max_top": 100},
           "runs": {"repetitions": 3, "seeds": [0, 1, 2], "out_dir": "."}}
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert [r["seed"] for r in summary["runs"]] == [0, 1, 2]
    for s in (0, 1, 2):
        assert (tmp_path / ("trace_quadratic2d_seed%d.csv" % s)).exists()


def test_baseline_loops_behave():
    problem = quadratic_diag()
    grad = problem.hierarchy.level(1).grad
    x, gn, cost, iters = adagrad_oracle_baseline(grad, problem.x0, 2000, 1e-6, 0.01)
    assert gn <= 1e-6 and cost == iters + 1
    x2, gn2, cost2, it2 = sgd_baseline(grad, problem.x0, 0.4, 2000, 1e-6)
    assert gn2 <= 1e-6


def test_diagnostic_trace_mode_fills_f(tmp_path):
    cfg = {"problem": {"name": "quadratic2d"},
           "solver": {"eps_top": 1e-4, "i_max_top": 50},
           "runs": {"out_dir": ".", "trace": "diagnostic"}}
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "trace_quadratic2d_seed0.csv").read_text().splitlines()
    assert lines[1].split(",")[10] != ""
