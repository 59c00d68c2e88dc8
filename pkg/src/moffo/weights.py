"""Per-coordinate weight schedules controlling the trust-region radius.

Two families are provided.  The AdaGrad-like family raises a shifted sum of
squared gradient components to a power mu in (0,1); AdaGrad itself is the
mu = 1/2 member.  The divergent (MAXGI) family multiplies the running
maximum of |g_j| by (i+1)^nu.  Both are componentwise nondecreasing and
bounded below by floors in (0,1].

Lower-level starting weights must additionally be large against the
restricted gradient (so the first lower step fits in its budget) and large
against the upper weights; the init_lower_* helpers construct the smallest
such vectors, and seed_lower_state extends them into a full schedule.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ADAGRAD_LIKE",
    "MAXGI",
    "WeightState",
    "init_lower_divergent",
    "init_lower_adagrad",
    "seed_lower_state",
]

ADAGRAD_LIKE = "adagrad_like"
MAXGI = "maxgi"


def as_floor_vector(varsigma, dim):
    """Broadcast a scalar or vector of floors to shape (dim,) and validate."""
    v = np.asarray(varsigma, dtype=float)
    if v.ndim == 0:
        v = np.full(dim, float(v))
    if v.shape != (dim,):
        raise ValueError("floor vector has shape %s, expected (%d,)" % (v.shape, dim))
    if np.any(v <= 0.0) or np.any(v > 1.0):
        raise ValueError("floors must lie in (0, 1]")
    return v


class WeightState:
    """Mutable per-level weight schedule state.

    kind: ADAGRAD_LIKE emits max(floor, (varsigma + c + sum g^2)^mu);
    MAXGI emits max(floor, max(varsigma, running max |g|) * (i+1)^nu).
    A state is owned by exactly one level visit at a time.
    """

    def __init__(self, kind, mu, nu, varsigma, dim, prescribed_floor=None,
                 base_offset=None, first_emit=None):
        if kind not in (ADAGRAD_LIKE, MAXGI):
            raise ValueError("unknown weight kind %r" % kind)
        if not 0.0 < mu < 1.0:
            raise ValueError("mu must lie in (0, 1), got %g" % mu)
        if kind == MAXGI:
            if nu is None:
                nu = mu
            if not 0.0 < nu <= mu:
                raise ValueError("nu must lie in (0, mu], got %g" % nu)
        self.kind = kind
        self.mu = float(mu)
        self.nu = None if kind == ADAGRAD_LIKE else float(nu)
        self.dim = int(dim)
        self.varsigma = as_floor_vector(varsigma, dim)
        self.i = 0
        # accumulator: sum of squares (adagrad_like) or running max (maxgi)
        self.acc = np.zeros(dim)
        self.c = np.zeros(dim) if base_offset is None else np.asarray(base_offset, dtype=float)
        if np.any(self.c < 0.0):
            raise ValueError("base offsets must be nonnegative")
        self.prescribed_floor = (
            None if prescribed_floor is None else np.asarray(prescribed_floor, dtype=float)
        )
        self._first_emit = None if first_emit is None else np.array(first_emit, dtype=float)

    def update(self, g):
        """Fold the current gradient in and emit the weights for this iteration."""
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ValueError("gradient has shape %s, expected (%d,)" % (g.shape, self.dim))
        if self.kind == ADAGRAD_LIKE:
            self.acc = self.acc + g * g
            w = (self.varsigma + self.c + self.acc) ** self.mu
        else:
            self.acc = np.maximum(self.acc, np.abs(g))
            w = np.maximum(self.varsigma, self.acc) * (self.i + 1.0) ** self.nu
        if self.prescribed_floor is not None:
            w = np.maximum(self.prescribed_floor, w)
        if self._first_emit is not None:
            # Seeded lower-level state: the entry weights are prescribed
            # verbatim; the accumulators above already absorbed g0.
            w = self._first_emit
            self._first_emit = None
        self.i += 1
        return w


def init_lower_divergent(varsigma, P_norm, Rg, alpha, Delta_norm, min_upper_weight):
    """Starting weights for a lower level under the divergent family.

    Componentwise max of the floors, the budget term making the first lower
    radius fit (in the Euclidean norm, hence the sqrt(n) factor), and the
    smallest upper weight, which keeps the lower minimum weight no smaller
    than the upper one.
    """
    if Delta_norm <= 0.0:
        raise ValueError("Delta_norm must be positive")
    Rg = np.asarray(Rg, dtype=float)
    n = Rg.shape[0]
    floors = as_floor_vector(varsigma, n)
    budget = np.sqrt(n) * P_norm * np.abs(Rg) / (alpha * Delta_norm)
    return np.maximum(np.maximum(floors, budget), float(min_upper_weight))


def init_lower_adagrad(varsigma, P_norm, Rg, alpha, Delta_norm, upper_weight_norm):
    """Starting weights for a lower level under the AdaGrad-like family.

    First builds the componentwise budget-feasible vector, then scales it up
    so its Euclidean norm is at least the norm of the upper weights.
    """
    if Delta_norm <= 0.0:
        raise ValueError("Delta_norm must be positive")
    Rg = np.asarray(Rg, dtype=float)
    n = Rg.shape[0]
    floors = as_floor_vector(varsigma, n)
    w_hat = np.maximum(floors, np.sqrt(n) * P_norm * np.abs(Rg) / (alpha * Delta_norm))
    scale = max(1.0, float(upper_weight_norm) / float(np.linalg.norm(w_hat)))
    return scale * w_hat


def seed_lower_state(kind, mu, nu, varsigma, w0, g0):
    """Wrap prescribed entry weights into a schedule for the rest of the visit.

    The first update emits w0 exactly; later weights follow the family's
    rule, floored componentwise by w0 so they never decrease below the entry
    values.  For the AdaGrad-like family, base offsets are chosen as the
    largest nonnegative values for which the accumulator formula at entry
    does not exceed w0.
    """
    w0 = np.asarray(w0, dtype=float)
    g0 = np.asarray(g0, dtype=float)
    if w0.shape != g0.shape:
        raise ValueError("w0 and g0 must have the same shape")
    dim = w0.shape[0]
    floors = as_floor_vector(varsigma, dim)
    offset = None
    if kind == ADAGRAD_LIKE:
        offset = np.maximum(0.0, w0 ** (1.0 / mu) - floors - g0 * g0)
    return WeightState(
        kind, mu, nu, floors, dim,
        prescribed_floor=w0.copy(), base_offset=offset, first_emit=w0,
    )
