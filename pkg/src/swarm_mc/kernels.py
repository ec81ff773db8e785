"""Interaction kernels and the deterministic pairwise-sum engine.

The engine computes exact O(M*N) reductions of radial kernels over point
clouds: weighted kernel sums ``a_i = sum_j K(q_i - s_j) b_j``, log kernel
mixture densities, and pairwise distance sums.  All routines are compiled
and internally parallel, with two hard guarantees:

* results are bitwise independent of the worker count (each output element
  is owned by one worker; scalar reductions combine fixed per-chunk
  partials with a pairwise tree);
* squared distances are computed by subtracting coordinates first, so the
  reductions are exactly translation invariant whenever the shifted inputs
  are exactly representable.

Worker count is capped by the ``SWARM_MC_THREADS`` environment variable or
by :func:`set_num_threads`.
"""

from __future__ import annotations

import math
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _compiled

__all__ = [
    "InteractionKernel",
    "KernelSumPlan",
    "gaussian_kernel",
    "uniform_ball_kernel",
    "kernel_sum",
    "log_kernel_density",
    "pairwise_distance_sum",
    "set_num_threads",
    "get_num_threads",
]

_DEFAULT_TILE = 256


def _env_threads() -> int:
    raw = os.environ.get("SWARM_MC_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


_num_threads = _env_threads()


def set_num_threads(n: int) -> None:
    """Cap the engine's worker count (results do not depend on it)."""
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


_pool_lock = threading.RLock()


@contextmanager
def _numba_threads(n: int):
    # serialize engine calls: the numba thread count is process-global
    import numba

    with _pool_lock:
        limit = min(max(1, n), numba.config.NUMBA_NUM_THREADS)
        prev = numba.get_num_threads()
        numba.set_num_threads(limit)
        try:
            yield
        finally:
            numba.set_num_threads(prev)


def ball_volume(radius: float, dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0) * radius**dim


@dataclass(frozen=True)
class InteractionKernel:
    """Radial interaction kernel, a probability density on R^d.

    kind "gaussian": K(z) = N(z; 0, scale^2 I)
    kind "uniform_ball": K(z) = 1/|B_scale| inside the ball of radius
    ``scale``, zero outside.
    """

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform_ball"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("kernel scale must be positive")

    @property
    def _kind_id(self) -> int:
        return _compiled.GAUSSIAN if self.kind == "gaussian" else _compiled.UNIFORM_BALL

    def _shape_param(self) -> float:
        # gaussian: 1/(2 sigma^2); ball: r^2
        if self.kind == "gaussian":
            return 0.5 / (self.scale * self.scale)
        return self.scale * self.scale

    def log_coef(self, dim: int) -> float:
        if self.kind == "gaussian":
            return -0.5 * dim * math.log(2.0 * math.pi * self.scale * self.scale)
        return -math.log(ball_volume(self.scale, dim))

    def coef(self, dim: int) -> float:
        return math.exp(self.log_coef(dim))

    def log_density(self, z: np.ndarray) -> np.ndarray:
        """log K(z) for displacement vectors z of shape (..., d)."""
        z = np.asarray(z, dtype=np.float64)
        d2 = np.sum(z * z, axis=-1)
        dim = z.shape[-1]
        if self.kind == "gaussian":
            return self.log_coef(dim) - d2 * self._shape_param()
        out = np.where(d2 < self._shape_param(), self.log_coef(dim), -np.inf)
        return out

    def density(self, z: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_density(z))

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        """Draw n displacement vectors e ~ K in R^dim.

        Consumes a fixed number of variates per draw: dim normals, plus one
        uniform for the ball kernel.
        """
        z = rng.standard_normal((n, dim))
        if self.kind == "gaussian":
            return self.scale * z
        u = rng.random(n)
        norms = np.linalg.norm(z, axis=1)
        norms[norms == 0.0] = 1.0
        radii = self.scale * u ** (1.0 / dim)
        return z * (radii / norms)[:, None]

    def support_radius(self) -> float:
        """Radius beyond which the kernel is (numerically) zero."""
        if self.kind == "gaussian":
            return 8.5 * self.scale
        return self.scale


def gaussian_kernel(sigma: float) -> InteractionKernel:
    return InteractionKernel("gaussian", float(sigma))


def uniform_ball_kernel(radius: float) -> InteractionKernel:
    return InteractionKernel("uniform_ball", float(radius))


@dataclass(frozen=True)
class KernelSumPlan:
    """Execution plan for the pairwise engine.

    ``tile_size`` is the query-chunk granularity handed to the scheduler;
    ``workers`` overrides the module worker cap for the call.  Neither
    affects the result.
    """

    tile_size: int = _DEFAULT_TILE
    workers: int | None = None

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array of points")
    return a


def kernel_sum(
    queries,
    sources,
    kernel: InteractionKernel,
    weights,
    plan: KernelSumPlan | None = None,
) -> np.ndarray:
    """a_i = sum_j K(q_i - s_j) * b_j for every query point, exactly.

    Matches the naive double loop to floating-point accumulation order;
    the result is independent of the worker count.
    """
    plan = plan or KernelSumPlan()
    Q = _as_matrix(queries, "queries")
    S = _as_matrix(sources, "sources")
    if Q.shape[1] != S.shape[1]:
        raise ValueError("queries and sources must share a dimension")
    b = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    if b.shape != (S.shape[0],):
        raise ValueError("weights must be a length-N vector")
    if not np.all(np.isfinite(b)):
        raise ValueError("weights must be finite")
    out = np.empty(Q.shape[0])
    with _numba_threads(plan.workers or _num_threads):
        _compiled.pair_kernel_sum(
            Q, S, b, kernel._kind_id, kernel._shape_param(),
            kernel.coef(Q.shape[1]), plan.tile_size, out,
        )
    return out


def log_kernel_density(
    points,
    sources,
    kernel: InteractionKernel,
    weights=None,
    log_weights=None,
    plan: KernelSumPlan | None = None,
) -> np.ndarray:
    """log sum_j w_j K(y - s_j) at each query point, in the log domain.

    ``weights`` defaults to uniform 1/N.  Zero weights and points outside
    every ball contribute -inf terms, which are absorbed without NaN; the
    result is -inf only when no term is finite.
    """
    plan = plan or KernelSumPlan()
    scalar = np.asarray(points).ndim == 1
    Q = _as_matrix(points, "points")
    S = _as_matrix(sources, "sources")
    if Q.shape[1] != S.shape[1]:
        raise ValueError("points and sources must share a dimension")
    n = S.shape[0]
    if log_weights is not None:
        lw = np.ascontiguousarray(np.asarray(log_weights, dtype=np.float64))
    elif weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError("weights must be a length-N vector")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
    else:
        lw = np.full(n, -math.log(n))
    if lw.shape != (n,):
        raise ValueError("log_weights must be a length-N vector")
    out = np.empty(Q.shape[0])
    with _numba_threads(plan.workers or _num_threads):
        _compiled.pair_log_kde(
            Q, S, lw, kernel._kind_id, kernel._shape_param(),
            kernel.log_coef(Q.shape[1]), plan.tile_size, out,
        )
    return float(out[0]) if scalar else out


def ball_counts(points, sources, radii, plan: KernelSumPlan | None = None) -> np.ndarray:
    """counts[p, i] = number of sources within radii[p] of point i.

    ``radii`` must be ascending; all radii share one distance pass.
    """
    plan = plan or KernelSumPlan()
    Q = _as_matrix(points, "points")
    S = _as_matrix(sources, "sources")
    r = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(r) < 0):
        raise ValueError("radii must be ascending")
    out = np.empty((r.size, Q.shape[0]))
    with _numba_threads(plan.workers or _num_threads):
        _compiled.pair_ball_counts(Q, S, np.ascontiguousarray(r * r), plan.tile_size, out)
    return out


def _pairwise_tree_sum(values: np.ndarray) -> float:
    """Fixed-shape pairwise reduction (worker-count independent)."""
    v = values
    while v.size > 1:
        half = v.size // 2
        head = v[: 2 * half]
        v = np.concatenate([head[0::2] + head[1::2], v[2 * half :]])
    return float(v[0]) if v.size else 0.0


def pairwise_distance_sum(X, Y, plan: KernelSumPlan | None = None) -> float:
    """sum_{i,j} |x_i - y_j| over all pairs, via tiled partials."""
    plan = plan or KernelSumPlan()
    A = _as_matrix(X, "X")
    B = _as_matrix(Y, "Y")
    if A.shape[1] != B.shape[1]:
        raise ValueError("X and Y must share a dimension")
    n_chunks = (A.shape[0] + plan.tile_size - 1) // plan.tile_size
    partials = np.empty(n_chunks)
    with _numba_threads(plan.workers or _num_threads):
        _compiled.pair_dist_partials(A, B, plan.tile_size, partials)
    return _pairwise_tree_sum(partials)


def gaussian_mixture_log_density(
    points,
    means,
    cholesky_factors,
    log_weights=None,
    plan: KernelSumPlan | None = None,
) -> np.ndarray:
    """Log density of sum_j w_j N(mean_j, L_j L_j^T) at the query points."""
    plan = plan or KernelSumPlan()
    scalar = np.asarray(points).ndim == 1
    Q = _as_matrix(points, "points")
    mu = _as_matrix(means, "means")
    L = np.ascontiguousarray(np.asarray(cholesky_factors, dtype=np.float64))
    n, d = mu.shape
    if L.shape != (n, d, d):
        raise ValueError("cholesky_factors must have shape (N, d, d)")
    linvs = np.ascontiguousarray(np.tril(np.linalg.inv(L)))
    logdets = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    if log_weights is None:
        lw = np.full(n, -math.log(n))
    else:
        lw = np.ascontiguousarray(np.asarray(log_weights, dtype=np.float64))
    out = np.empty(Q.shape[0])
    with _numba_threads(plan.workers or _num_threads):
        _compiled.gauss_mixture_logpdf(Q, mu, linvs, logdets, lw, plan.tile_size, out)
    return float(out[0]) if scalar else out
