"""Recursive multilevel objective-function-free trust-region driver.

Control flow is a function of gradients, weights and geometry only; value
oracles are consulted solely to fill the diagnostic column of the trace.
Each level visit runs: a budget guard on the prolonged total movement, a
gradient evaluation with termination tests, a weight update defining the
componentwise trust region, an optional recursion into the coarser level
(gated by the significant-progress test), and otherwise a Taylor step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hierarchy import LevelHierarchy, coherence_defect, coherence_defect_ok, build_coherent_model
from .step import HessianModel, compute_radius, taylor_step, taylor_decrease_bound
from .weights import (
    ADAGRAD_LIKE,
    MAXGI,
    WeightState,
    as_floor_vector,
    init_lower_adagrad,
    init_lower_divergent,
    seed_lower_state,
)

__all__ = [
    "SolverConfig",
    "CostLedger",
    "IterationRecord",
    "Trace",
    "SolveResult",
    "cycle_shape",
    "should_recurse",
    "monitor_new_cond",
    "solve",
]

_ASSERT_RTOL = 1e-9


@dataclass
class SolverConfig:
    """Tunable constants of the solver; ranges are validated up front."""

    weight_kind: str = ADAGRAD_LIKE
    mu: float = 0.5
    nu: float | None = None          # maxgi exponent, defaults to mu
    varsigma: float | np.ndarray = 0.01
    kappa_R: float = 0.01
    alpha: float = 5.0
    tau: float = 1.0
    kappa_B: float = 1.0
    eps_top: float = 1e-3
    i_max: list[int] | None = None   # per-level budgets, coarse to fine
    i_max_top: int = 1000
    pre_smooth: int = 1
    post_smooth: int = 0
    lower_eps_factor: float = 0.1
    step_scale: float = 1.0
    strict_descent_monitoring: bool = False
    weak_coherence_kappa_E: float | None = None
    diag_values: bool = False
    record_iterates: bool = False
    debug_checks: bool = True
    seed: int = 0
    hessian_factory: object = None   # callable(level, x, g) -> HessianModel

    def validate(self, r):
        if self.weight_kind not in (ADAGRAD_LIKE, MAXGI):
            raise ValueError("unknown weight kind %r" % self.weight_kind)
        if not 0.0 < self.mu < 1.0:
            raise ValueError("mu must lie in (0, 1)")
        nu = self.nu_resolved()
        if self.weight_kind == MAXGI and not 0.0 < nu <= self.mu:
            raise ValueError("nu must lie in (0, mu]")
        if not 0.0 < self.kappa_R < 1.0:
            raise ValueError("kappa_R must lie in (0, 1)")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.kappa_B < 1.0:
            raise ValueError("kappa_B must be >= 1")
        if not self.eps_top > 0.0:
            raise ValueError("eps_top must be positive")
        if self.pre_smooth < 1 or self.post_smooth < 0:
            raise ValueError("need pre_smooth >= 1 and post_smooth >= 0")
        if not 0.0 < self.lower_eps_factor <= 1.0:
            raise ValueError("lower_eps_factor must lie in (0, 1]")
        if not self.step_scale > 0.0:
            raise ValueError("step_scale must be positive")
        if self.weak_coherence_kappa_E is not None and self.weak_coherence_kappa_E < 0.0:
            raise ValueError("weak-coherence kappa_E must be >= 0")
        budgets = self.resolved_i_max(r)
        if len(budgets) != r or any(int(b) != b or b < 1 for b in budgets):
            raise ValueError("i_max must be %d positive integers" % r)
        np.asarray(self.varsigma, dtype=float)  # shape checked per level later

    def nu_resolved(self):
        return self.mu if self.nu is None else self.nu

    def resolved_i_max(self, r):
        """Per-level budgets: explicit, or a V-cycle default.

        The default gives the lowest level 10 iterations, intermediate levels
        exactly one smoothing pass plus one recursion, and the top level the
        configured budget.
        """
        if self.i_max is not None:
            return [int(b) for b in self.i_max]
        if r == 1:
            return [int(self.i_max_top)]
        middle = self.pre_smooth + 1 + self.post_smooth
        return [10] + [middle] * (r - 2) + [int(self.i_max_top)]


class CostLedger:
    """Gradient-evaluation counts per level, in full-dataset units.

    The total cost scales level-l counts by 2**(l - r), the relative cost of
    one full gradient at level l against one at the top level.
    """

    def __init__(self, r):
        self.r = int(r)
        self.counts = np.zeros(self.r)

    def add(self, level, fraction):
        if fraction < 0:
            raise ValueError("cost increments must be nonnegative")
        self.counts[level - 1] += fraction

    def count(self, level):
        return float(self.counts[level - 1])

    def total(self):
        weights = 2.0 ** (np.arange(1, self.r + 1) - self.r)
        return float(weights @ self.counts)


@dataclass(slots=True)
class IterationRecord:
    """One gradient evaluation at some level, with the step it produced.

    Terminal evaluations (tolerance reached, budget exhausted, or the
    lower-level descent monitor tripping) carry zero step and radius norms.
    The diagnostic objective value is never consumed by control flow.
    """

    level: int
    index: int
    kind: str
    grad_norm: float
    step_norm: float
    delta_hat_norm: float
    delta_norm: float
    w_min: float | None
    w_max: float | None
    cost_cum: float
    f_diag: float | None = None
    decrease_sum: float | None = None


class Trace:
    """Chronological record list over all levels plus optional top iterates."""

    def __init__(self, r):
        self.r = int(r)
        self.records = []
        self.top_iterates = []

    def add(self, record):
        self.records.append(record)

    def top_records(self):
        return [rec for rec in self.records if rec.level == self.r]

    def top_grad_norms(self):
        return np.array([rec.grad_norm for rec in self.records if rec.level == self.r])

    def __len__(self):
        return len(self.records)


@dataclass
class SolveResult:
    x: np.ndarray
    status: str
    final_grad_norm: float
    iterations: int
    trace: Trace
    ledger: CostLedger


def cycle_shape(level, i, pre_smooth=1, post_smooth=0):
    """Schedule within a level visit: smoothing steps around one recursion slot.

    Returns "try_recursive" at the slot following pre_smooth Taylor
    iterations, repeating with period pre_smooth + 1 + post_smooth.  The
    lowest level never recurses.
    """
    if level == 1:
        return "taylor"
    period = pre_smooth + 1 + post_smooth
    return "try_recursive" if i % period == pre_smooth else "taylor"


def should_recurse(Rg, w_low, g, w, kappa_R):
    """Significant-progress test: the restricted linear decrease is at least
    a kappa_R fraction of the current level's."""
    Rg = np.asarray(Rg, dtype=float)
    g = np.asarray(g, dtype=float)
    lhs = float(np.sum(Rg * Rg / np.asarray(w_low, dtype=float)))
    rhs = kappa_R * float(np.sum(g * g / np.asarray(w, dtype=float)))
    return lhs >= rhs


def monitor_new_cond(lower_trace, upper_g, upper_w, kappa_R, enabled=True):
    """Count leading lower iterations whose decrease stays significant.

    lower_trace is an iterable of IterationRecords (their decrease_sum is
    used) or of plain decrease values.  With the monitor disabled the full
    count is returned unchanged.
    """
    decreases = [
        rec.decrease_sum if isinstance(rec, IterationRecord) else float(rec)
        for rec in lower_trace
    ]
    if not enabled:
        return len(decreases)
    upper_g = np.asarray(upper_g, dtype=float)
    upper_w = np.asarray(upper_w, dtype=float)
    threshold = kappa_R * float(np.sum(upper_g * upper_g / upper_w))
    count = 0
    for d in decreases:
        if d is None or d < threshold:
            break
        count += 1
    return count


class _TopObjective:
    """Adapter exposing the top level's raw oracles as a model."""

    anchor = None
    anchor_model_grad = None

    def __init__(self, level):
        self._level = level

    def grad(self, x):
        return self._level.grad(x)

    def value(self, x):
        return None if self._level.value is None else float(self._level.value(x))


class _Runtime:
    """Shared state threaded through the recursion."""

    def __init__(self, hier, cfg, ledger, trace):
        self.hier = hier
        self.cfg = cfg
        self.ledger = ledger
        self.trace = trace
        self.r = hier.r
        self.i_max = cfg.resolved_i_max(hier.r)
        self._floors = {}
        scalar = np.asarray(cfg.varsigma, dtype=float)
        if scalar.ndim != 0 and hier.r > 1:
            raise ValueError("per-coordinate floors require a single-level hierarchy")
        for l in range(1, hier.r + 1):
            self._floors[l] = as_floor_vector(cfg.varsigma, hier.dim(l))
        self.varsigma_min = min(float(f.min()) for f in self._floors.values())
        self.best_gnorm = math.inf
        self.best_x = None

    def floors(self, level):
        return self._floors[level]


def _fresh_state(rt, level):
    cfg = rt.cfg
    return WeightState(cfg.weight_kind, cfg.mu, cfg.nu_resolved(), rt.floors(level),
                       rt.hier.dim(level))


def _eval_gradient(rt, level, objective, x, i):
    """Evaluate the model gradient, charging the ledger.

    Iteration 0 of a coherent lower-level model reuses the anchor evaluation
    performed while building the model, which was charged at build time.
    """
    if i == 0 and objective.anchor_model_grad is not None:
        return objective.anchor_model_grad
    g = objective.grad(x)
    rt.ledger.add(level, rt.hier.level(level).eval_fraction)
    return np.asarray(g, dtype=float)


def _run_level(rt, level, objective, x0, eps, delta_cap, wstate, monitor_threshold=None):
    """One solver call at the given level; returns (x_plus, completed_steps)."""
    cfg = rt.cfg
    r = rt.r
    op_up = rt.hier.op(level + 1) if level < r else None
    op_down = rt.hier.op(level) if level > 1 else None
    i_budget = rt.i_max[level - 1]
    x0 = np.asarray(x0, dtype=float)
    x = x0.copy()
    x_prev = None
    i = 0
    while True:
        # Step 1: budget guard, then gradient evaluation and termination tests.
        if level < r and float(np.linalg.norm(op_up.prolong(x - x0))) > delta_cap:
            assert x_prev is not None, "movement budget violated at entry"
            return x_prev, i - 1
        g = _eval_gradient(rt, level, objective, x, i)
        gnorm = float(np.linalg.norm(g))
        f_diag = objective.value(x) if cfg.diag_values else None
        if level == r:
            if cfg.record_iterates:
                rt.trace.top_iterates.append(x.copy())
            if gnorm < rt.best_gnorm:
                rt.best_gnorm = gnorm
                rt.best_x = x.copy()
        if gnorm <= eps or i == i_budget:
            rt.trace.add(IterationRecord(level, i, "taylor", gnorm, 0.0, 0.0, 0.0,
                                         None, None, rt.ledger.total(), f_diag))
            return x, i

        # Step 2: weights from the just-evaluated gradient, then the radius.
        w = wstate.update(g)
        decrease = float(np.sum(g * g / w))
        if monitor_threshold is not None and decrease < monitor_threshold:
            rt.trace.add(IterationRecord(level, i, "taylor", gnorm, 0.0, 0.0, 0.0,
                                         float(w.min()), float(w.max()),
                                         rt.ledger.total(), f_diag, decrease))
            return x, i
        tr = compute_radius(w, g, level == r, delta_cap,
                            op_up.norm if op_up is not None else 0.0,
                            scale=cfg.step_scale)

        # Step 3: recursion attempt when the cycle schedules one.
        kind = "taylor"
        s = None
        if level > 1 and cycle_shape(level, i, cfg.pre_smooth, cfg.post_smooth) == "try_recursive":
            s = _try_recursive(rt, level, op_down, x, g, w, tr, decrease)
            if s is not None:
                kind = "recursive"

        # Step 4: Taylor step.
        if s is None:
            if cfg.hessian_factory is not None:
                B = cfg.hessian_factory(level, x, g)
            else:
                B = HessianModel.zero(cfg.kappa_B)
            s = taylor_step(g, tr.delta, B, cfg.tau)
            if cfg.debug_checks and decrease > 0.0:
                # Cap-aware form of the linear-decrease guarantee: the plain
                # bound is provable only for an uncapped unit-scale radius,
                # which is the regime the convergence proofs rely on.
                eff = min(1.0, float(np.abs(g) @ tr.delta) / decrease)
                bound = (-(cfg.tau * rt.varsigma_min / (2.0 * cfg.kappa_B)) * eff * decrease
                         + 0.5 * cfg.kappa_B * tr.delta_norm ** 2)
                lhs = float(g @ s)
                assert lhs <= bound + _ASSERT_RTOL * (1.0 + abs(bound)), \
                    "linear decrease bound violated at a Taylor iteration"

        step_norm = float(np.linalg.norm(s))
        if cfg.debug_checks:
            assert step_norm <= cfg.alpha * tr.delta_hat_norm * (1.0 + _ASSERT_RTOL) + 1e-300, \
                "step norm exceeds alpha * ||D(w)|g||"
            if level < r:
                cap_mult = 2.0 if kind == "taylor" else 2.0 * cfg.alpha
                assert float(np.linalg.norm(op_up.prolong(s))) <= \
                    cap_mult * delta_cap * (1.0 + _ASSERT_RTOL), "prolonged step exceeds budget"

        # Step 5: update.
        x_prev = x
        x = x + s
        rt.trace.add(IterationRecord(level, i, kind, gnorm, step_norm,
                                     tr.delta_hat_norm, tr.delta_norm,
                                     float(w.min()), float(w.max()),
                                     rt.ledger.total(), f_diag, decrease))
        i += 1


def _try_recursive(rt, level, op_down, x, g, w, tr, decrease):
    """Attempt the recursive step; returns the prolonged step or None."""
    cfg = rt.cfg
    Rg = op_down.restrict(g)
    delta_norm = tr.delta_norm
    floors_low = rt.floors(level - 1)
    if cfg.weight_kind == ADAGRAD_LIKE:
        w_low = init_lower_adagrad(floors_low, op_down.norm, Rg, cfg.alpha,
                                   delta_norm, float(np.linalg.norm(w)))
    else:
        w_low = init_lower_divergent(floors_low, op_down.norm, Rg, cfg.alpha,
                                     delta_norm, float(w.min()))
    if not should_recurse(Rg, w_low, g, w, cfg.kappa_R):
        return None
    delta_low = cfg.alpha * delta_norm
    if cfg.weak_coherence_kappa_E is not None:
        defect = coherence_defect(op_down, g)
        if not coherence_defect_ok(defect, delta_low, cfg.weak_coherence_kappa_E):
            return None

    lower = rt.hier.level(level - 1)
    x_low0 = op_down.restrict(x)
    model = build_coherent_model(lower.grad, x_low0, g, op_down, lower_value=lower.value)
    rt.ledger.add(level - 1, lower.eval_fraction)  # anchor evaluation inside the build
    eps_low = cfg.lower_eps_factor * float(np.linalg.norm(Rg))
    state = seed_lower_state(cfg.weight_kind, cfg.mu, cfg.nu_resolved(), floors_low,
                             w_low, model.anchor_model_grad)
    threshold = cfg.kappa_R * decrease if cfg.strict_descent_monitoring else None
    x_low, completed = _run_level(rt, level - 1, model, x_low0, eps_low, delta_low,
                                  state, monitor_threshold=threshold)
    if cfg.debug_checks:
        if cfg.lower_eps_factor < 1.0:
            assert completed >= 1, "no iteration completed at the lower level"
        lhs = float(np.linalg.norm(np.abs(Rg) / w_low))
        assert lhs <= cfg.alpha * delta_norm / op_down.norm * (1.0 + _ASSERT_RTOL), \
            "lower radius budget condition violated"
    return op_down.prolong(x_low - x_low0)


def solve(problem, config=None, x0=None):
    """Run the top-level call on a hierarchy and collect trace and costs.

    problem is a LevelHierarchy or any object exposing .hierarchy (and
    optionally .x0 for the default starting point).  Returns a SolveResult;
    status is "converged" when the final top-level gradient met the
    tolerance and "budget_exhausted" otherwise.
    """
    cfg = config if config is not None else SolverConfig()
    hier = problem if isinstance(problem, LevelHierarchy) else problem.hierarchy
    if x0 is None:
        x0 = getattr(problem, "x0", None)
        if x0 is None:
            raise ValueError("no starting point: pass x0 or use a problem that carries one")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (hier.dim(hier.r),):
        raise ValueError("starting point has shape %s, expected (%d,)"
                         % (x0.shape, hier.dim(hier.r)))
    cfg.validate(hier.r)
    ledger = CostLedger(hier.r)
    trace = Trace(hier.r)
    rt = _Runtime(hier, cfg, ledger, trace)
    top = _TopObjective(hier.level(hier.r))
    state = _fresh_state(rt, hier.r)
    x_final, completed = _run_level(rt, hier.r, top, x0, cfg.eps_top, math.inf, state)
    final_gnorm = trace.top_records()[-1].grad_norm
    if final_gnorm <= cfg.eps_top:
        return SolveResult(x_final, "converged", final_gnorm, completed, trace, ledger)
    # budget exhausted: hand back the best iterate seen, judged by gradient
    # norm (values are never consulted)
    if rt.best_x is not None and rt.best_gnorm < final_gnorm:
        x_final = rt.best_x
    return SolveResult(x_final, "budget_exhausted", final_gnorm, completed, trace, ledger)
