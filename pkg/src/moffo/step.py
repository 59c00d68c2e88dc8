"""Componentwise trust-region construction and Taylor-step computation.

The raw radius is |g_j| / w_j per coordinate; below the top level it is
shrunk so a full step can never overshoot the level's total movement budget
by more than a factor two.  Steps are computed from the box-constrained
steepest-descent point (linear step) and a Cauchy-type scaling against a
bounded Hessian model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TrustRegion",
    "HessianModel",
    "compute_radius",
    "linear_step",
    "cauchy_step",
    "taylor_step",
    "taylor_decrease_bound",
]

_SLACK = 1e-12


@dataclass
class TrustRegion:
    """Componentwise radius delta, its uncapped version delta_hat, level cap."""

    delta_hat: np.ndarray
    delta: np.ndarray
    cap: float

    @property
    def delta_norm(self):
        return float(np.linalg.norm(self.delta))

    @property
    def delta_hat_norm(self):
        return float(np.linalg.norm(self.delta_hat))


class HessianModel:
    """Symmetric Hessian approximation with a spectral bound kappa_B >= 1."""

    def __init__(self, kind, data=None, kappa_B=1.0):
        if kind not in ("zero", "diagonal", "explicit"):
            raise ValueError("unknown Hessian kind %r" % kind)
        if kappa_B < 1.0:
            raise ValueError("kappa_B must be >= 1")
        self.kind = kind
        self.kappa_B = float(kappa_B)
        if kind == "zero":
            self.data = None
        elif kind == "diagonal":
            d = np.asarray(data, dtype=float)
            if np.max(np.abs(d), initial=0.0) > self.kappa_B * (1.0 + _SLACK):
                raise ValueError("diagonal exceeds kappa_B bound")
            self.data = d
        else:
            M = np.asarray(data, dtype=float)
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                raise ValueError("explicit Hessian must be square symmetric")
            if M.shape[0] > 512:
                raise ValueError("explicit Hessians larger than 512x512 not supported")
            if np.linalg.norm(M, 2) > self.kappa_B * (1.0 + 1e-9):
                raise ValueError("matrix norm exceeds kappa_B bound")
            self.data = M

    @classmethod
    def zero(cls, kappa_B=1.0):
        return cls("zero", kappa_B=kappa_B)

    @classmethod
    def diagonal(cls, d, kappa_B=None):
        d = np.asarray(d, dtype=float)
        if kappa_B is None:
            kappa_B = max(1.0, float(np.max(np.abs(d), initial=0.0)))
        return cls("diagonal", d, kappa_B=kappa_B)

    @classmethod
    def explicit(cls, M, kappa_B=None):
        M = np.asarray(M, dtype=float)
        if kappa_B is None:
            kappa_B = max(1.0, float(np.linalg.norm(M, 2)))
        return cls("explicit", M, kappa_B=kappa_B)

    def matvec(self, s):
        if self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "diagonal":
            return self.data * s
        return self.data @ s

    def quad(self, s):
        """s^T B s."""
        return float(s @ self.matvec(s))

    def model(self, g, s):
        """g^T s + (1/2) s^T B s."""
        return float(g @ s) + 0.5 * self.quad(s)


def compute_radius(w, g, is_top, delta, P_up_norm, scale=1.0):
    """Build the trust region from weights and the current gradient.

    At the top level the radius is the raw scale * |g| / w.  Below it, the
    raw radius is shrunk by min(2*delta / (P_up_norm * ||raw||), 1) so that
    prolonged steps stay commensurate with the remaining budget delta.
    """
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("weights must be strictly positive")
    delta_hat = scale * np.abs(g) / w
    if is_top:
        return TrustRegion(delta_hat, delta_hat.copy(), np.inf)
    if not delta > 0.0:
        raise ValueError("lower-level budget delta must be positive")
    nd = float(np.linalg.norm(delta_hat))
    factor = min(2.0 * delta / (P_up_norm * nd), 1.0) if nd > 0.0 else 1.0
    return TrustRegion(delta_hat, factor * delta_hat, float(delta))


def linear_step(g, delta):
    """Minimizer of g^T s over the box |s_j| <= delta_j; sign(0) = 0."""
    return -np.sign(g) * delta


def cauchy_step(g, delta, B):
    """Linear step rescaled by the Cauchy factor against the quadratic model."""
    sL = linear_step(np.asarray(g, dtype=float), np.asarray(delta, dtype=float))
    curv = B.quad(sL)
    if curv > 0.0:
        gamma = min(1.0, abs(float(g @ sL)) / curv)
    else:
        gamma = 1.0
    return gamma * sL


def taylor_step(g, delta, B, tau, refine=False):
    """Step inside the box achieving at least a tau fraction of the Cauchy decrease.

    The default step is the Cauchy point itself, which meets the decrease
    condition with equality for any tau <= 1.  With refine=True a single
    projected diagonal-Newton sweep is tried and kept only if it still meets
    the condition.  Violations of the box or decrease conditions indicate an
    internal bug and trip an assertion.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    g = np.asarray(g, dtype=float)
    delta = np.asarray(delta, dtype=float)
    sQ = cauchy_step(g, delta, B)
    mQ = B.model(g, sQ)
    s = sQ
    if refine and B.kind != "zero":
        d = B.data if B.kind == "diagonal" else np.diag(B.data)
        cand = np.where(d > 0.0, -g / np.where(d > 0.0, d, 1.0), sQ)
        cand = np.clip(cand, -delta, delta)
        if B.model(g, cand) <= tau * mQ:
            s = cand
    assert np.all(np.abs(s) <= delta * (1.0 + _SLACK) + _SLACK), "step left the trust region"
    assert B.model(g, s) <= tau * mQ + _SLACK * (1.0 + abs(mQ)), "decrease condition violated"
    return s


def taylor_decrease_bound(g, w, delta_norm, tau, varsigma_min, kappa_B):
    """Upper bound on g^T s guaranteed for any admissible Taylor step."""
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    return (
        -(tau * varsigma_min / (2.0 * kappa_B)) * float(np.sum(g * g / w))
        + 0.5 * kappa_B * delta_norm ** 2
    )
