"""Level stacks, transfer operators and coherent lower-level models.

A hierarchy is an ordered list of gradient oracles of increasing cost,
coupled by full-rank prolongation/restriction pairs that satisfy
R = omega * P^T for a fixed scalar omega > 0.  Lower levels are optimized
through a first-order coherent model: the plain lower objective plus a
linear correction that makes its gradient at the entry point equal the
restricted upper gradient.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NumericalError",
    "TransferOperator",
    "Level",
    "LevelHierarchy",
    "CoherentModel",
    "restriction_of",
    "operator_norm",
    "sigma_min",
    "linear_interpolation_1d",
    "interior_interpolation_1d",
    "build_coherent_model",
    "coherence_defect",
    "coherence_defect_ok",
]

_POWER_MAX_ITER = 10_000
_POWER_TOL = 1e-10
_DENSE_SVD_MAX = 64


class NumericalError(RuntimeError):
    """An iterative linear-algebra routine failed to converge."""


def _spectral_norm(P):
    """Largest singular value of a dense matrix.

    Dense SVD is used for small matrices; otherwise power iteration on the
    Gram matrix, seeded with the all-ones vector for determinism.
    """
    if min(P.shape) <= _DENSE_SVD_MAX:
        return float(np.linalg.svd(P, compute_uv=False)[0])
    G = P.T @ P if P.shape[0] >= P.shape[1] else P @ P.T
    v = np.ones(G.shape[0])
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(_POWER_MAX_ITER):
        w = G @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
        if abs(lam - lam_old) <= _POWER_TOL * lam:
            return float(np.sqrt(lam))
        lam_old = lam
    raise NumericalError("power iteration did not converge in %d iterations" % _POWER_MAX_ITER)


class TransferOperator:
    """A prolongation P with its derived restriction R = omega * P^T.

    P maps the coarse space into the fine space and must have full column
    rank.  Instances are immutable after construction; the spectral norm and
    the smallest singular value are computed lazily and cached (the fill is
    idempotent, so racing threads at worst duplicate work).
    """

    def __init__(self, P, omega):
        P = np.asarray(P, dtype=float)
        if P.ndim != 2:
            raise ValueError("prolongation must be a 2-d matrix")
        if not np.isfinite(P).all():
            raise ValueError("prolongation contains non-finite entries")
        omega = float(omega)
        if omega <= 0.0:
            raise ValueError("omega must be positive, got %g" % omega)
        self.P = P
        self.omega = omega
        self.P.setflags(write=False)
        self._norm = None
        self._sigma_min = None

    @property
    def n_fine(self):
        return self.P.shape[0]

    @property
    def n_coarse(self):
        return self.P.shape[1]

    def restriction(self):
        """Dense restriction matrix R = omega * P^T."""
        return self.omega * self.P.T

    def prolong(self, v):
        """Apply P to a coarse vector."""
        return self.P @ v

    def restrict(self, v):
        """Apply R = omega * P^T to a fine vector."""
        return self.omega * (self.P.T @ v)

    @property
    def norm(self):
        """Spectral norm of P, cached."""
        if self._norm is None:
            self._norm = _spectral_norm(self.P)
        return self._norm

    @property
    def sigma_min(self):
        """Smallest singular value of P, cached; positive iff full column rank."""
        if self._sigma_min is None:
            self._sigma_min = float(np.linalg.svd(self.P, compute_uv=False)[-1])
        return self._sigma_min

    def __repr__(self):
        return "TransferOperator(%dx%d, omega=%g)" % (self.n_fine, self.n_coarse, self.omega)


def restriction_of(op):
    """Dense restriction matrix of a transfer operator."""
    return op.restriction()


def operator_norm(op):
    """Spectral norm of the prolongation."""
    return op.norm


def sigma_min(op):
    """Smallest singular value of the prolongation."""
    return op.sigma_min


def linear_interpolation_1d(n_coarse):
    """Piecewise-linear 1D interpolation on a vertex grid, refinement factor two.

    Returns a (2*n_coarse - 1) x n_coarse prolongation: coarse points are
    copied, midpoints are averaged.  Constants are preserved.  omega = 1/2,
    which makes the derived restriction the usual full-weighting stencil.
    """
    if n_coarse < 2:
        raise ValueError("n_coarse must be >= 2, got %d" % n_coarse)
    n_fine = 2 * n_coarse - 1
    P = np.zeros((n_fine, n_coarse))
    for j in range(n_coarse):
        P[2 * j, j] = 1.0
    for j in range(n_coarse - 1):
        P[2 * j + 1, j] = 0.5
        P[2 * j + 1, j + 1] = 0.5
    return TransferOperator(P, 0.5)


def interior_interpolation_1d(n_coarse):
    """Linear interpolation between nested interior (Dirichlet) grids.

    Coarse grid has n_coarse interior nodes, fine grid 2*n_coarse + 1; both
    exclude the boundary where values are pinned to zero.  Fine nodes aligned
    with coarse nodes are copied, the others are averages of their coarse
    neighbours, with the missing boundary neighbour contributing zero.
    """
    if n_coarse < 1:
        raise ValueError("n_coarse must be >= 1, got %d" % n_coarse)
    n_fine = 2 * n_coarse + 1
    P = np.zeros((n_fine, n_coarse))
    for j in range(n_coarse):
        P[2 * j + 1, j] = 1.0
        P[2 * j, j] = 0.5
        P[2 * j + 2, j] = 0.5
    return TransferOperator(P, 0.5)


class Level:
    """One member of the hierarchy: a dimension plus oracles.

    grad(x) -> gradient vector; may be stochastic (fresh draw per call).
    value(x) -> float, optional, used for diagnostics only: solver control
    flow never reads it.  eval_fraction is the cost, in full-dataset gradient
    units at this level, charged per grad call.
    """

    def __init__(self, n, grad, value=None, eval_fraction=1.0):
        self.n = int(n)
        self.grad = grad
        self.value = value
        self.eval_fraction = float(eval_fraction)


class LevelHierarchy:
    """Ordered stack of levels 1..r (coarse to fine) with transfer operators.

    operators[k] couples levels[k] (coarse) with levels[k+1] (fine); level
    numbering in the public accessors is 1-based to match the solver's
    terminology, and level r is the true objective.
    """

    def __init__(self, levels, operators):
        if not levels:
            raise ValueError("hierarchy needs at least one level")
        if len(operators) != len(levels) - 1:
            raise ValueError(
                "expected %d operators for %d levels, got %d"
                % (len(levels) - 1, len(levels), len(operators))
            )
        for k, op in enumerate(operators):
            if op.n_coarse != levels[k].n or op.n_fine != levels[k + 1].n:
                raise ValueError(
                    "operator %d is %dx%d but links levels of size %d and %d"
                    % (k, op.n_fine, op.n_coarse, levels[k + 1].n, levels[k].n)
                )
        self.levels = list(levels)
        self.operators = list(operators)

    @property
    def r(self):
        return len(self.levels)

    def level(self, l):
        """Level l (1-based)."""
        return self.levels[l - 1]

    def dim(self, l):
        return self.levels[l - 1].n

    def op(self, l):
        """Transfer operator between levels l-1 and l, valid for l >= 2."""
        if l < 2:
            raise ValueError("no operator below level 2")
        return self.operators[l - 2]


class CoherentModel:
    """Lower-level objective modified by a linear term.

    The model h(x) = f_low(x) + v^T (x - x0) has gradient grad_f_low(x) + v,
    and by construction of v its gradient at the anchor x0 equals the
    restricted upper gradient.  The anchor gradient of the base objective is
    cached so the first lower-level iteration reuses the draw that built v;
    with stochastic oracles this keeps the coherence identity exact.
    """

    def __init__(self, base_grad, v, anchor, anchor_model_grad, base_value=None):
        self.base_grad = base_grad
        self.v = np.asarray(v, dtype=float)
        self.anchor = np.asarray(anchor, dtype=float)
        self.anchor_model_grad = np.asarray(anchor_model_grad, dtype=float)
        self.base_value = base_value

    def grad(self, x):
        """Model gradient; costs one base-oracle evaluation."""
        return self.base_grad(x) + self.v

    def value(self, x):
        """Model value, for diagnostics only."""
        if self.base_value is None:
            return None
        return self.base_value(x) + float(self.v @ (x - self.anchor))


def build_coherent_model(lower_oracle, x_low0, g_upper, op, lower_value=None):
    """Assemble the coherent lower-level model at an anchor point.

    lower_oracle is the plain gradient of the lower objective; x_low0 the
    entry point (the restricted upper iterate); g_upper the current upper
    gradient.  Evaluates the lower oracle once at the anchor.
    """
    x_low0 = np.asarray(x_low0, dtype=float)
    rg = op.restrict(np.asarray(g_upper, dtype=float))
    if rg.shape != x_low0.shape:
        raise ValueError(
            "restricted gradient has shape %s, anchor has shape %s" % (rg.shape, x_low0.shape)
        )
    g_low0 = lower_oracle(x_low0)
    if g_low0.shape != x_low0.shape:
        raise ValueError("lower oracle returned shape %s" % (g_low0.shape,))
    v = rg - g_low0
    return CoherentModel(lower_oracle, v, x_low0, rg, base_value=lower_value)


def coherence_defect(op, g):
    """Norm of (omega * P^T - R) g; identically zero for derived restrictions."""
    g = np.asarray(g, dtype=float)
    return float(np.linalg.norm(op.omega * (op.P.T @ g) - op.restrict(g)))


def coherence_defect_ok(E_norm_estimate, delta_lower, kappa_E):
    """Weak-coherence test: the coupling error is small against the lower budget."""
    if E_norm_estimate < 0 or delta_lower < 0 or kappa_E < 0:
        raise ValueError("weak-coherence inputs must be nonnegative")
    return E_norm_estimate <= kappa_E * delta_lower
