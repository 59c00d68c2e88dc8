"""Built-in problem hierarchies with gradient oracles and noise wrappers.

Problems bundle a LevelHierarchy with metadata (exact Lipschitz constant and
lower bound when known, dataset size for sum-structured objectives) plus a
default starting point.  Oracles are deterministic; stochastic variants are
obtained through the minibatch and Gaussian-noise wrappers, which draw from
per-level seeded streams, one draw per call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .hierarchy import (
    Level,
    LevelHierarchy,
    TransferOperator,
    interior_interpolation_1d,
    linear_interpolation_1d,
)

__all__ = [
    "ProblemHierarchy",
    "ResNetSpec",
    "quadratic_diag",
    "laplacian_quadratic_1d",
    "nonconvex_chain_1d",
    "resnet_regression",
    "build_depth_prolongation",
    "with_minibatch",
    "with_gaussian_noise",
    "finite_difference_check",
    "dump_dataset",
    "load_dataset",
    "build_problem",
    "list_problems",
    "PROBLEM_NAMES",
]


class ProblemHierarchy:
    """A level stack plus the metadata the harness and bound checks need.

    sampled_grads, when present, lists per-level callables (x, idx) -> mean
    gradient over the given sample indices; they make the problem eligible
    for the minibatch wrapper.  base points at the unwrapped problem so
    exact gradients stay reachable from noisy variants.
    """

    def __init__(self, name, hierarchy, x0, exact_L=None, f_low=None,
                 dataset_size=None, noise="none", sampled_grads=None,
                 dataset=None, base=None):
        self.name = name
        self.hierarchy = hierarchy
        self.x0 = np.asarray(x0, dtype=float)
        self.exact_L = exact_L
        self.f_low = f_low
        self.dataset_size = dataset_size
        self.noise = noise
        self.sampled_grads = sampled_grads
        self.dataset = dataset
        self.base = base

    @property
    def r(self):
        return self.hierarchy.r

    def exact_grad(self, level, x):
        """Deterministic full gradient at a level, bypassing any noise wrapper."""
        root = self.base if self.base is not None else self
        return root.hierarchy.level(level).grad(np.asarray(x, dtype=float))

    def exact_value(self, level, x):
        root = self.base if self.base is not None else self
        fn = root.hierarchy.level(level).value
        return None if fn is None else float(fn(np.asarray(x, dtype=float)))

    def strip_values(self):
        """Clone with all value oracles removed (control flow must not notice)."""
        levels = [Level(l.n, l.grad, None, l.eval_fraction) for l in self.hierarchy.levels]
        hier = LevelHierarchy(levels, self.hierarchy.operators)
        return ProblemHierarchy(self.name, hier, self.x0, self.exact_L, self.f_low,
                                self.dataset_size, self.noise, self.sampled_grads,
                                self.dataset, base=self.base)


def quadratic_diag(diag=(1.0, 2.0), x0=(3.0, -4.0)):
    """Single-level diagonal quadratic f(x) = x^T diag(d) x / 2."""
    d = np.asarray(diag, dtype=float)
    if np.any(d <= 0):
        raise ValueError("diagonal must be positive")
    level = Level(
        d.size,
        grad=lambda x: d * x,
        value=lambda x: 0.5 * float(x @ (d * x)),
    )
    hier = LevelHierarchy([level], [])
    return ProblemHierarchy("quadratic2d", hier, np.asarray(x0, dtype=float),
                            exact_L=float(d.max()), f_low=0.0)


def _is_power_of_two_minus_one(n):
    return n >= 1 and ((n + 1) & n) == 0


def _laplacian_apply(x, h):
    y = 2.0 * x
    y[:-1] -= x[1:]
    y[1:] -= x[:-1]
    return y / (h * h)


def _tridiag_laplacian_solve(b, h):
    """Thomas algorithm for the [-1, 2, -1]/h^2 Dirichlet system."""
    n = b.size
    rhs = h * h * b
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = -0.5
    dp[0] = rhs[0] / 2.0
    for k in range(1, n):
        den = 2.0 + cp[k - 1]
        cp[k] = -1.0 / den
        dp[k] = (rhs[k] + dp[k - 1]) / den
    x = np.empty(n)
    x[-1] = dp[-1]
    for k in range(n - 2, -1, -1):
        x[k] = dp[k] - cp[k] * x[k + 1]
    return x


def _interior_dims(n_fine, levels):
    dims = [n_fine]
    for _ in range(levels - 1):
        dims.append((dims[-1] - 1) // 2)
    dims.reverse()
    return dims


def laplacian_quadratic_1d(n_fine=255, levels=3, dataset_size=40, noise_scale=0.1,
                           forcing=None, sample_seed=2025):
    """Dirichlet 1D Laplacian quadratics on nested interior grids.

    f_l(x) = x^T A_l x / 2 - b_l^T x with the [-1, 2, -1]/h^2 stencil; the
    forcing is sampled on the finest grid and restricted downwards.  The
    problem is sum-structured through zero-mean per-sample gradient offsets,
    so the minibatch wrapper applies.
    """
    if not _is_power_of_two_minus_one(n_fine):
        raise ValueError("n_fine must be 2^m - 1, got %d" % n_fine)
    m = int(math.log2(n_fine + 1))
    if levels < 1 or m < levels + 1:
        raise ValueError("need n_fine = 2^m - 1 with m >= levels + 1")
    dims = _interior_dims(n_fine, levels)
    ops = [interior_interpolation_1d(dims[k]) for k in range(levels - 1)]
    if forcing is None:
        forcing = lambda t: np.sin(2.0 * np.pi * t) + 0.4 * np.sin(9.0 * np.pi * t)

    h_top = 1.0 / (n_fine + 1)
    t = np.arange(1, n_fine + 1) * h_top
    b = [None] * levels
    b[-1] = np.asarray(forcing(t), dtype=float)
    for k in range(levels - 1, 0, -1):
        b[k - 1] = ops[k - 1].restrict(b[k])

    rng = np.random.default_rng(sample_seed)
    zeta = rng.standard_normal((dataset_size, n_fine))
    zeta -= zeta.mean(axis=0)
    z = [None] * levels
    z[-1] = noise_scale * float(np.max(np.abs(b[-1]))) * zeta
    for k in range(levels - 1, 0, -1):
        z[k - 1] = z[k] @ ops[k - 1].restriction().T

    levels_list = []
    sampled = []
    for k in range(levels):
        n = dims[k]
        h = 1.0 / (n + 1)
        bk, zk = b[k], z[k]

        def grad(x, h=h, bk=bk):
            return _laplacian_apply(x, h) - bk

        def value(x, h=h, bk=bk):
            return 0.5 * float(x @ _laplacian_apply(x, h)) - float(bk @ x)

        def sgrad(x, idx, h=h, bk=bk, zk=zk):
            return _laplacian_apply(x, h) - bk + zk[idx].mean(axis=0)

        levels_list.append(Level(n, grad, value))
        sampled.append(sgrad)

    hier = LevelHierarchy(levels_list, ops)
    n = dims[-1]
    L = 4.0 * math.sin(n * math.pi / (2.0 * (n + 1))) ** 2 / h_top ** 2
    x_star = _tridiag_laplacian_solve(b[-1], h_top)
    f_low = -0.5 * float(b[-1] @ x_star)
    return ProblemHierarchy("laplacian1d", hier, np.zeros(n_fine), exact_L=L,
                            f_low=f_low, dataset_size=dataset_size,
                            sampled_grads=sampled)


def nonconvex_chain_1d(n_fine=63, levels=3, forcing=None):
    """Smooth nonconvex chain: discrete arc length plus a cosine potential.

    f_l(u) = sum_k h sqrt(1 + ((u_{k+1}-u_k)/h)^2) + sum_k h cos(u_k) - f^T u
    with zero Dirichlet ends.  The forcing is small enough that the arc
    length dominates, certifying the lower bound -h*n on the whole space.
    """
    if not _is_power_of_two_minus_one(n_fine):
        raise ValueError("n_fine must be 2^m - 1, got %d" % n_fine)
    m = int(math.log2(n_fine + 1))
    if levels < 1 or m < levels + 1:
        raise ValueError("need n_fine = 2^m - 1 with m >= levels + 1")
    dims = _interior_dims(n_fine, levels)
    ops = [interior_interpolation_1d(dims[k]) for k in range(levels - 1)]
    if forcing is None:
        forcing = lambda t: np.sin(2.0 * np.pi * t)

    h_top = 1.0 / (n_fine + 1)
    t = np.arange(1, n_fine + 1) * h_top
    f = [None] * levels
    f[-1] = h_top * np.asarray(forcing(t), dtype=float)
    for k in range(levels - 1, 0, -1):
        f[k - 1] = ops[k - 1].restrict(f[k])

    levels_list = []
    for k in range(levels):
        n = dims[k]
        h = 1.0 / (n + 1)
        fk = f[k]

        def value(u, h=h, fk=fk):
            du = np.diff(np.concatenate(([0.0], u, [0.0])))
            length = float(np.sum(h * np.sqrt(1.0 + (du / h) ** 2)))
            return length + h * float(np.sum(np.cos(u))) - float(fk @ u)

        def grad(u, h=h, fk=fk):
            du = np.diff(np.concatenate(([0.0], u, [0.0])))
            slope = du / h
            phi = slope / np.sqrt(1.0 + slope * slope)
            return phi[:-1] - phi[1:] - h * np.sin(u) - fk

        levels_list.append(Level(n, grad, value))

    hier = LevelHierarchy(levels_list, ops)
    n = dims[-1]
    return ProblemHierarchy("chain1d", hier, np.zeros(n_fine), exact_L=None,
                            f_low=-h_top * n)


@dataclass
class ResNetSpec:
    """Desk-scale dense-block residual network regression setup."""

    k_coarse: int = 3
    levels: int = 3
    horizon: float = 3.0
    width: int = 6
    n_in: int = 4
    n_out: int = 2
    beta1: float = 1e-4
    beta2: float = 1e-4

    def layer_counts(self):
        ks = [self.k_coarse]
        for _ in range(self.levels - 1):
            ks.append(2 * ks[-1] - 1)
        return ks

    @property
    def block(self):
        return self.width * self.width + self.width

    @property
    def n_shared(self):
        return self.width * self.n_in + self.n_out * self.width + self.n_out

    def dim(self, K):
        return K * self.block + self.n_shared


def build_depth_prolongation(k_coarse, block_size=1, n_shared=0, omega=0.5):
    """Transfer for layer-time parameter stacks, refinement factor two.

    Each parameter coordinate is interpolated linearly across the layer
    axis; shared (time-independent) trailing coordinates are prolonged by
    1/omega so the derived restriction leaves them untouched.
    """
    Pt = linear_interpolation_1d(k_coarse).P
    P = np.kron(Pt, np.eye(block_size)) if block_size > 1 else Pt.copy()
    if n_shared:
        full = np.zeros((P.shape[0] + n_shared, P.shape[1] + n_shared))
        full[: P.shape[0], : P.shape[1]] = P
        full[P.shape[0]:, P.shape[1]:] = (1.0 / omega) * np.eye(n_shared)
        P = full
    return TransferOperator(P, omega)


def _unpack_resnet(x, spec, K):
    w, n_in, n_out = spec.width, spec.n_in, spec.n_out
    blk = spec.block
    theta = x[: K * blk].reshape(K, blk)
    W = theta[:, : w * w].reshape(K, w, w)
    b = theta[:, w * w:]
    rest = x[K * blk:]
    Q = rest[: w * n_in].reshape(w, n_in)
    WT = rest[w * n_in: w * n_in + n_out * w].reshape(n_out, w)
    bT = rest[w * n_in + n_out * w:]
    return W, b, Q, WT, bT


def _resnet_eval(x, spec, K, Y, C, idx, want_grad):
    """Forward pass plus hand-coded reverse accumulation through the chain."""
    w = spec.width
    dt = spec.horizon / (K - 1)
    W, b, Q, WT, bT = _unpack_resnet(x, spec, K)
    Ys = Y if idx is None else Y[idx]
    Cs = C if idx is None else C[idx]
    nb = Ys.shape[0]

    q = Ys @ Q.T
    states = [q]
    acts = []
    for k in range(K - 1):
        a = np.tanh(q @ W[k].T + b[k])
        acts.append(a)
        q = q + dt * a
        states.append(q)
    resid = q @ WT.T + bT - Cs

    theta = np.concatenate([W.reshape(K, w * w), b], axis=1)
    dtheta = np.diff(theta, axis=0)
    value = (
        float(np.sum(resid * resid)) / nb
        + 0.5 * spec.beta1 * (float(np.sum(WT * WT)) + float(np.sum(bT * bT)))
        + dt * 0.5 * spec.beta1 * float(np.sum(theta[:-1] * theta[:-1]))
        + 0.5 * spec.beta2 / dt * float(np.sum(dtheta * dtheta))
    )
    if not want_grad:
        return value, None

    gW = np.zeros_like(W)
    gb = np.zeros_like(b)
    dout = 2.0 * resid / nb
    gWT = dout.T @ states[-1] + spec.beta1 * WT
    gbT = dout.sum(axis=0) + spec.beta1 * bT
    dq = dout @ WT
    for k in range(K - 2, -1, -1):
        dz = (dt * dq) * (1.0 - acts[k] * acts[k])
        gW[k] = dz.T @ states[k]
        gb[k] = dz.sum(axis=0)
        dq = dq + dz @ W[k]
    gQ = dq.T @ Ys

    gtheta = np.concatenate([gW.reshape(K, w * w), gb], axis=1)
    gtheta[:-1] += dt * spec.beta1 * theta[:-1]
    gtheta[:-1] -= spec.beta2 / dt * dtheta
    gtheta[1:] += spec.beta2 / dt * dtheta
    grad = np.concatenate([gtheta.ravel(), gQ.ravel(), gWT.ravel(), gbT.ravel()])
    return value, grad


def resnet_regression(spec=None, n_samples=64, seed=0):
    """Synthetic regression with a depth-coarsened hierarchy of ResNets.

    Inputs are uniform on [-1, 1]^n_in; targets are componentwise sines of a
    fixed random linear map.  All levels share the same data; coarser levels
    have fewer layers, coupled along the layer-time axis by linear
    interpolation with shared read-in/read-out blocks.
    """
    spec = spec or ResNetSpec()
    if spec.width > 16:
        raise ValueError("width capped at 16 at desk scale")
    if n_samples > 512:
        raise ValueError("n_samples capped at 512 at desk scale")
    ks = spec.layer_counts()
    if ks[-1] > 17:
        raise ValueError("finest layer count capped at 17 at desk scale")
    rng = np.random.default_rng(seed)
    Y = rng.uniform(-1.0, 1.0, size=(n_samples, spec.n_in))
    M = rng.standard_normal((spec.n_out, spec.n_in))
    C = np.sin(Y @ M.T)

    ops = [build_depth_prolongation(ks[k], spec.block, spec.n_shared)
           for k in range(spec.levels - 1)]
    levels_list = []
    sampled = []
    for K in ks:
        def grad(x, K=K):
            return _resnet_eval(x, spec, K, Y, C, None, True)[1]

        def value(x, K=K):
            return _resnet_eval(x, spec, K, Y, C, None, False)[0]

        def sgrad(x, idx, K=K):
            return _resnet_eval(x, spec, K, Y, C, idx, True)[1]

        levels_list.append(Level(spec.dim(K), grad, value))
        sampled.append(sgrad)

    hier = LevelHierarchy(levels_list, ops)
    x0 = 0.1 * rng.standard_normal(spec.dim(ks[-1]))
    return ProblemHierarchy("resnet", hier, x0, dataset_size=n_samples,
                            sampled_grads=sampled, dataset=(Y, C))


def with_minibatch(problem, batch_fraction, seed):
    """Subsampled-gradient wrapper: one fresh draw per oracle call.

    Each call samples ceil(fraction * |D|) indices without replacement from
    a per-level seeded stream and charges the ledger that fraction of a full
    gradient.  fraction = 1 short-circuits to the exact oracle.
    """
    if problem.sampled_grads is None or problem.dataset_size is None:
        raise ValueError("problem %r is not sum-structured" % problem.name)
    if not 0.0 < batch_fraction <= 1.0:
        raise ValueError("batch fraction must lie in (0, 1]")
    nd = problem.dataset_size
    nb = int(math.ceil(batch_fraction * nd))
    root = problem.base if problem.base is not None else problem
    levels = []
    for l, (lvl, sgrad) in enumerate(zip(root.hierarchy.levels, problem.sampled_grads), start=1):
        if nb == nd:
            noisy = lvl.grad
        else:
            stream = np.random.default_rng([int(seed), l])

            def noisy(x, sgrad=sgrad, stream=stream):
                idx = stream.choice(nd, size=nb, replace=False)
                return sgrad(x, idx)

        levels.append(Level(lvl.n, noisy, lvl.value, eval_fraction=nb / nd))
    hier = LevelHierarchy(levels, root.hierarchy.operators)
    return ProblemHierarchy(problem.name, hier, problem.x0, problem.exact_L,
                            problem.f_low, nd, noise="minibatch(%g,%d)" % (batch_fraction, seed),
                            sampled_grads=problem.sampled_grads,
                            dataset=problem.dataset, base=root)


def with_gaussian_noise(problem, sigma, seed):
    """Additive Gaussian gradient noise, one fresh draw per call, per-level streams."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    root = problem.base if problem.base is not None else problem
    levels = []
    for l, lvl in enumerate(root.hierarchy.levels, start=1):
        stream = np.random.default_rng([int(seed), 7919, l])

        def noisy(x, lvl=lvl, stream=stream):
            return lvl.grad(x) + sigma * stream.standard_normal(lvl.n)

        levels.append(Level(lvl.n, noisy, lvl.value, eval_fraction=lvl.eval_fraction))
    hier = LevelHierarchy(levels, root.hierarchy.operators)
    return ProblemHierarchy(problem.name, hier, problem.x0, problem.exact_L,
                            problem.f_low, problem.dataset_size,
                            noise="gaussian(%g,%d)" % (sigma, seed),
                            sampled_grads=problem.sampled_grads,
                            dataset=problem.dataset, base=root)


def finite_difference_check(problem, level=None, x=None, h=1e-6, seed=0):
    """Max relative error of the oracle gradient against central differences.

    Coordinates are probed individually up to dimension 100, random unit
    directions beyond that.  Uses exact (noise-free) oracles.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    root = problem.base if problem.base is not None else problem
    hier = root.hierarchy
    level = hier.r if level is None else level
    lvl = hier.level(level)
    if lvl.value is None:
        raise ValueError("level %d has no value oracle" % level)
    rng = np.random.default_rng(seed)
    if x is None:
        x = (np.asarray(root.x0, dtype=float).copy() if level == hier.r
             else 0.5 * rng.standard_normal(lvl.n))
    g = lvl.grad(x)
    scale = max(1.0, float(np.max(np.abs(g))))
    worst = 0.0
    if lvl.n <= 100:
        for j in range(lvl.n):
            e = np.zeros(lvl.n)
            e[j] = h
            fd = (lvl.value(x + e) - lvl.value(x - e)) / (2.0 * h)
            worst = max(worst, abs(fd - g[j]) / scale)
    else:
        for _ in range(30):
            d = rng.standard_normal(lvl.n)
            d /= np.linalg.norm(d)
            fd = (lvl.value(x + h * d) - lvl.value(x - h * d)) / (2.0 * h)
            worst = max(worst, abs(fd - float(g @ d)) / scale)
    return worst


def dump_dataset(problem, path):
    """Write a sum-structured problem's dataset as CSV: id, features, targets."""
    if problem.dataset is None:
        raise ValueError("problem %r carries no dataset" % problem.name)
    Y, C = problem.dataset
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + ["f%d" % j for j in range(Y.shape[1])]
                        + ["t%d" % j for j in range(C.shape[1])])
        for s in range(Y.shape[0]):
            writer.writerow([s] + ["%.17g" % v for v in Y[s]] + ["%.17g" % v for v in C[s]])


def load_dataset(path):
    """Read a dataset CSV back into (features, targets) arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        nf = sum(1 for c in header if c.startswith("f"))
        nt = sum(1 for c in header if c.startswith("t"))
        rows = [list(map(float, row[1:])) for row in reader]
    data = np.asarray(rows)
    return data[:, :nf], data[:, nf: nf + nt]


_BUILDERS = {
    "quadratic2d": (quadratic_diag, {"diag", "x0"},
                    "2-d diagonal quadratic, single level"),
    "laplacian1d": (laplacian_quadratic_1d,
                    {"n_fine", "levels", "dataset_size", "noise_scale", "sample_seed"},
                    "1D Dirichlet Laplacian quadratic hierarchy"),
    "chain1d": (nonconvex_chain_1d, {"n_fine", "levels"},
                "nonconvex arc-length chain hierarchy"),
    "resnet": (None, {"k_coarse", "levels", "horizon", "width", "n_in", "n_out",
                      "beta1", "beta2", "n_samples", "seed"},
               "depth-coarsened dense-block ResNet regression"),
}

PROBLEM_NAMES = tuple(sorted(_BUILDERS))


def build_problem(name, **params):
    """Instantiate a registered problem; unknown names or parameters raise."""
    if name not in _BUILDERS:
        raise ValueError("unknown problem %r (known: %s)" % (name, ", ".join(PROBLEM_NAMES)))
    builder, allowed, _ = _BUILDERS[name]
    bad = set(params) - allowed
    if bad:
        raise ValueError("unknown parameter(s) %s for problem %r" % (sorted(bad), name))
    if name == "resnet":
        spec_keys = {k: v for k, v in params.items() if k not in ("n_samples", "seed")}
        spec = ResNetSpec(**spec_keys)
        return resnet_regression(spec, n_samples=params.get("n_samples", 64),
                                 seed=params.get("seed", 0))
    return builder(**params)


def list_problems():
    return [(name, _BUILDERS[name][2]) for name in PROBLEM_NAMES]
