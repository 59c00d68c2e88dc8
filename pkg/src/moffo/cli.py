"""Experiment runner: config ingestion, runs, baselines, bound checks.

Config files are JSON with top-level keys "problem", "solver", "baselines"
and "runs"; unknown keys anywhere are rejected with the offending field
named.  Trace CSVs are byte-deterministic for a fixed config and seed; the
summary JSON additionally records wall times.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bounds, problems
from .solver import SolverConfig, solve

__all__ = [
    "ConfigError",
    "load_config",
    "write_trace_csv",
    "sgd_baseline",
    "adagrad_oracle_baseline",
    "cmd_run",
    "cmd_check_bounds",
    "cmd_gradcheck",
    "cmd_list_problems",
    "main",
]

TRACE_COLUMNS = ("level", "iter", "kind", "grad_norm", "step_norm", "delta_hat_norm",
                 "delta_norm", "w_min", "w_max", "cost_cum", "f_diag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_THEOREM = 4
EXIT_GRADCHECK = 5


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


_SOLVER_KEYS = {
    "weights": "weight_kind",
    "mu": "mu",
    "nu": "nu",
    "varsigma": "varsigma",
    "kappa_R": "kappa_R",
    "alpha": "alpha",
    "tau": "tau",
    "kappa_B": "kappa_B",
    "eps_top": "eps_top",
    "i_max": "i_max",
    "i_max_top": "i_max_top",
    "pre_smooth": "pre_smooth",
    "post_smooth": "post_smooth",
    "lower_eps_factor": "lower_eps_factor",
    "step_scale": "step_scale",
    "strict_descent_monitoring": "strict_descent_monitoring",
    "weak_coherence": "weak_coherence_kappa_E",
    "diag_values": "diag_values",
}

_BASELINE_KINDS = ("sgd", "adagrad_oracle", "single_level")


def load_config(path):
    """Parse and validate an experiment config; raises ConfigError."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config: %s" % exc)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: %s" % exc)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - {"problem", "solver", "baselines", "runs"}
    if unknown:
        raise ConfigError("unknown top-level key(s): %s" % ", ".join(sorted(unknown)))
    if "problem" not in raw:
        raise ConfigError("missing required key: problem")

    prob = dict(raw["problem"])
    name = prob.pop("name", None)
    if name is None:
        raise ConfigError("problem.name is required")
    if name not in problems.PROBLEM_NAMES:
        raise ConfigError("problem.name: unknown problem %r (known: %s)"
                          % (name, ", ".join(problems.PROBLEM_NAMES)))
    noise = {}
    for noise_key in ("minibatch", "gaussian"):
        if noise_key in prob:
            noise[noise_key] = prob.pop(noise_key)
            if not isinstance(noise[noise_key], dict):
                raise ConfigError("problem.%s must be an object" % noise_key)
    try:
        problems.build_problem(name, **prob)
    except (ValueError, TypeError) as exc:
        raise ConfigError("problem: %s" % exc)

    solver_raw = raw.get("solver", {})
    if not isinstance(solver_raw, dict):
        raise ConfigError("solver must be an object")
    solver_kwargs = {}
    for key, val in solver_raw.items():
        if key not in _SOLVER_KEYS:
            raise ConfigError("solver.%s: unknown field" % key)
        solver_kwargs[_SOLVER_KEYS[key]] = val

    baselines = raw.get("baselines", [])
    if not isinstance(baselines, list):
        raise ConfigError("baselines must be a list")
    for k, entry in enumerate(baselines):
        if not isinstance(entry, dict) or entry.get("kind") not in _BASELINE_KINDS:
            raise ConfigError("baselines[%d].kind must be one of %s"
                              % (k, ", ".join(_BASELINE_KINDS)))
        extra = set(entry) - {"kind", "lr"}
        if extra:
            raise ConfigError("baselines[%d]: unknown field(s) %s" % (k, sorted(extra)))
        if entry["kind"] == "sgd" and "lr" not in entry:
            raise ConfigError("baselines[%d].lr is required for sgd" % k)

    runs = raw.get("runs", {})
    if not isinstance(runs, dict):
        raise ConfigError("runs must be an object")
    extra = set(runs) - {"repetitions", "seeds", "out_dir", "trace"}
    if extra:
        raise ConfigError("runs: unknown field(s) %s" % sorted(extra))
    reps = int(runs.get("repetitions", 1))
    if reps < 1:
        raise ConfigError("runs.repetitions must be >= 1")
    seeds = runs.get("seeds")
    if seeds is None:
        seeds = list(range(reps))
    if len(seeds) < reps:
        raise ConfigError("runs.seeds must list at least runs.repetitions seeds")
    trace_mode = runs.get("trace", "standard")
    if trace_mode not in ("standard", "diagnostic"):
        raise ConfigError("runs.trace must be 'standard' or 'diagnostic'")
    if trace_mode == "diagnostic":
        solver_kwargs["diag_values"] = True
    return {
        "problem_name": name,
        "problem_params": prob,
        "noise": noise,
        "solver_kwargs": solver_kwargs,
        "baselines": baselines,
        "repetitions": reps,
        "seeds": [int(s) for s in seeds[:reps]],
        "out_dir": runs.get("out_dir", "."),
    }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_trace_csv(trace, path):
    """Write the flat per-iteration trace in the fixed column order."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for rec in trace.records:
            fh.write(",".join([
                str(rec.level), str(rec.index), rec.kind,
                _fmt(rec.grad_norm), _fmt(rec.step_norm),
                _fmt(rec.delta_hat_norm), _fmt(rec.delta_norm),
                _fmt(rec.w_min), _fmt(rec.w_max),
                _fmt(rec.cost_cum), _fmt(rec.f_diag),
            ]) + "\n")


def _build_problem_instance(spec, run_seed):
    problem = problems.build_problem(spec["problem_name"], **spec["problem_params"])
    noise = spec["noise"]
    if "minibatch" in noise:
        mb = noise["minibatch"]
        seed = int(mb.get("seed", 0)) + 1000 * run_seed
        problem = problems.with_minibatch(problem, float(mb["fraction"]), seed)
    if "gaussian" in noise:
        ga = noise["gaussian"]
        seed = int(ga.get("seed", 0)) + 1000 * run_seed
        problem = problems.with_gaussian_noise(problem, float(ga["sigma"]), seed)
    return problem


def sgd_baseline(grad, x0, lr, steps, eps, eval_fraction=1.0):
    """Plain gradient descent with a fixed learning rate on one level."""
    x = np.asarray(x0, dtype=float).copy()
    cost = 0.0
    for i in range(steps + 1):
        g = grad(x)
        cost += eval_fraction
        gnorm = float(np.linalg.norm(g))
        if gnorm <= eps or i == steps:
            return x, gnorm, cost, i
        x = x - lr * g


def adagrad_oracle_baseline(grad, x0, steps, eps, varsigma=0.01, eval_fraction=1.0):
    """Reference momentum-less AdaGrad loop with per-coordinate accumulators."""
    x = np.asarray(x0, dtype=float).copy()
    acc = np.zeros_like(x)
    cost = 0.0
    for i in range(steps + 1):
        g = grad(x)
        cost += eval_fraction
        gnorm = float(np.linalg.norm(g))
        if gnorm <= eps or i == steps:
            return x, gnorm, cost, i
        acc += g * g
        x = x - g / np.sqrt(varsigma + acc)


def _single_level_problem(problem):
    top = problem.hierarchy.level(problem.hierarchy.r)
    from .hierarchy import LevelHierarchy
    hier = LevelHierarchy([top], [])
    return problems.ProblemHierarchy(problem.name + "-single", hier, problem.x0,
                                     problem.exact_L, problem.f_low,
                                     problem.dataset_size, problem.noise)


def _one_run(spec, seed, out_dir):
    problem = _build_problem_instance(spec, seed)
    cfg = SolverConfig(seed=seed, **spec["solver_kwargs"])
    t0 = time.perf_counter()
    res = solve(problem, cfg)
    wall = time.perf_counter() - t0
    trace_file = os.path.join(out_dir, "trace_%s_seed%d.csv" % (spec["problem_name"], seed))
    write_trace_csv(res.trace, trace_file)
    entry = {
        "seed": seed,
        "status": res.status,
        "final_grad_norm": res.final_grad_norm,
        "cost": res.ledger.total(),
        "iterations": res.iterations,
        "wall_time_s": wall,
        "trace_csv": os.path.basename(trace_file),
    }
    baseline_entries = {}
    for base in spec["baselines"]:
        kind = base["kind"]
        bp = _build_problem_instance(spec, seed)
        top = bp.hierarchy.level(bp.hierarchy.r)
        steps = cfg.resolved_i_max(bp.hierarchy.r)[-1]
        t0 = time.perf_counter()
        if kind == "sgd":
            _, gn, cost, iters = sgd_baseline(top.grad, bp.x0, float(base["lr"]),
                                              steps, cfg.eps_top, top.eval_fraction)
        elif kind == "adagrad_oracle":
            vs = float(np.min(np.asarray(cfg.varsigma)))
            _, gn, cost, iters = adagrad_oracle_baseline(top.grad, bp.x0, steps,
                                                         cfg.eps_top, vs, top.eval_fraction)
        else:
            kwargs = dict(spec["solver_kwargs"])
            kwargs.pop("i_max", None)
            single_cfg = SolverConfig(seed=seed, **kwargs)
            single_cfg.i_max_top = steps
            sres = solve(_single_level_problem(bp), single_cfg)
            gn, cost, iters = sres.final_grad_norm, sres.ledger.total(), sres.iterations
        baseline_entries[kind] = {
            "seed": seed,
            "final_grad_norm": gn,
            "cost": cost,
            "iterations": iters,
            "wall_time_s": time.perf_counter() - t0,
        }
    return entry, baseline_entries


def cmd_run(config_path, out_dir=None, seed=None):
    try:
        spec = load_config(config_path)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    out = out_dir or spec["out_dir"]
    os.makedirs(out, exist_ok=True)
    seeds = [int(seed)] if seed is not None else spec["seeds"]
    workers = max(1, int(os.environ.get("MOFFO_THREADS", "1")))
    try:
        if workers > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda s: _one_run(spec, s, out), seeds))
        else:
            results = [_one_run(spec, s, out) for s in seeds]
    except Exception as exc:  # noqa: BLE001 - harness boundary
        print("runtime failure: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME
    runs = [r for r, _ in results]
    baselines = {}
    for _, bl in results:
        for kind, entry in bl.items():
            baselines.setdefault(kind, []).append(entry)
    summary = {
        "problem": {"name": spec["problem_name"], **spec["problem_params"], **spec["noise"]},
        "solver": spec["solver_kwargs"],
        "runs": runs,
        "baselines": baselines,
    }
    if "single_level" in baselines:
        ratios = [b["cost"] / r["cost"] for r, b in zip(runs, baselines["single_level"])
                  if r["cost"] > 0]
        if ratios:
            summary["cost_ratio"] = {"single_level_over_mofftr": float(np.median(ratios))}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_OK


def cmd_check_bounds(config_path, out_dir=None):
    try:
        spec = load_config(config_path)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    out = out_dir or spec["out_dir"]
    os.makedirs(out, exist_ok=True)
    try:
        problem = problems.build_problem(spec["problem_name"], **spec["problem_params"])
        cfg = SolverConfig(**spec["solver_kwargs"])
        if problem.exact_L is None or problem.f_low is None:
            print("config error: problem.name: bound checks need exact_L and f_low",
                  file=sys.stderr)
            return EXIT_CONFIG
        tc = bounds.theory_constants(problem, cfg)
        res = solve(problem, cfg)
        checks = {}
        failed = False
        if cfg.weight_kind == "adagrad_like":
            rep = bounds.check_adagrad_rate(res.trace, tc.kappa_star)
            checks[rep.name] = rep.as_dict()
            failed = failed or rep.status == "fail"
        else:
            rep = bounds.check_divergent_rate(
                res.trace, (tc.i_theta, tc.i_sigma, tc.kappa_diamond), cfg.mu)
            checks[rep.name] = rep.as_dict()
        report = {"constants": tc.as_dict(), "checks": checks}
        with open(os.path.join(out, "bound_report.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        for name, chk in checks.items():
            print("%s: %s (max_ratio=%s)" % (name, chk["status"], chk["max_ratio"]))
    except Exception as exc:  # noqa: BLE001 - harness boundary
        print("runtime failure: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_THEOREM if failed else EXIT_OK


_GRADCHECK_SUITE = {
    "quadratic2d": (dict(), 1e-3, 1e-9),
    "laplacian1d": (dict(n_fine=31, levels=3), 1e-3, 1e-9),
    "chain1d": (dict(n_fine=31, levels=3), 1e-5, 1e-6),
    "resnet": (dict(width=4, k_coarse=3, levels=2, n_in=3, n_out=2, n_samples=32),
               1e-5, 1e-5),
}


def cmd_gradcheck(problem_name=None):
    names = [problem_name] if problem_name else list(_GRADCHECK_SUITE)
    status = EXIT_OK
    for name in names:
        if name not in _GRADCHECK_SUITE:
            print("config error: problem %r unknown" % name, file=sys.stderr)
            return EXIT_CONFIG
        params, h, threshold = _GRADCHECK_SUITE[name]
        problem = problems.build_problem(name, **params)
        for level in range(1, problem.hierarchy.r + 1):
            err = problems.finite_difference_check(problem, level=level, h=h, seed=level)
            ok = err <= threshold
            print("%-12s level %d: max rel err %.3e (threshold %.0e) %s"
                  % (name, level, err, threshold, "ok" if ok else "FAIL"))
            if not ok:
                status = EXIT_GRADCHECK
    return status


def cmd_list_problems():
    for name, desc in problems.list_problems():
        print("%-12s %s" % (name, desc))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="moffo",
                                     description="multilevel objective-function-free runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the solver and baselines from a config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)

    p_chk = sub.add_parser("check-bounds", help="evaluate rate constants and check a run")
    p_chk.add_argument("config")
    p_chk.add_argument("--out", default=None)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p_gc.add_argument("--problem", default=None)

    sub.add_parser("list-problems", help="list built-in problems")

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "check-bounds":
        return cmd_check_bounds(args.config, args.out)
    if args.command == "gradcheck":
        return cmd_gradcheck(args.problem)
    return cmd_list_problems()


if __name__ == "__main__":
    sys.exit(main())
