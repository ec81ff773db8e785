"""Numba-compiled pairwise kernels.

Every routine here is deterministic for any thread count: parallelism is
over disjoint query chunks, each output element is written by exactly one
thread, and the inner source loop always runs in index order.  Scalar
reductions are returned as per-chunk partials and combined by the caller
with a fixed-shape pairwise tree.
"""

import os

# Allow worker counts above the physical core count (the engine exposes a
# worker sweep); must be set before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange

# kernel kind tags shared with kernels.py
GAUSSIAN = 0
UNIFORM_BALL = 1

_NEG_INF = -np.inf


@njit(inline="always")
def _sqdist(Q, S, i, j, d):
    acc = 0.0
    for k in range(d):
        diff = Q[i, k] - S[j, k]
        acc += diff * diff
    return acc


@njit(parallel=True, cache=True)
def pair_kernel_sum(Q, S, b, kind, a, coef, chunk, out):
    """out[i] = sum_j K(|q_i - s_j|) * b[j], linear domain.

    kind GAUSSIAN: K = coef*exp(-a*d2) with a = 1/(2 sigma^2)
    kind UNIFORM_BALL: K = coef*1[d2 < a] with a = r^2
    """
    M, d = Q.shape
    N = S.shape[0]
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        for i in range(lo, hi):
            acc = 0.0
            if kind == GAUSSIAN:
                for j in range(N):
                    d2 = _sqdist(Q, S, i, j, d)
                    acc += np.exp(-a * d2) * b[j]
                acc *= coef
            else:
                for j in range(N):
                    d2 = _sqdist(Q, S, i, j, d)
                    if d2 < a:
                        acc += b[j]
                acc *= coef
            out[i] = acc


@njit(parallel=True, cache=True)
def pair_log_kde(Q, S, logw, kind, a, logcoef, chunk, out):
    """out[i] = logsumexp_j(logw[j] + log K(q_i - s_j)), streaming per row.

    Rows with no finite term yield -inf (possible for the ball kernel or
    for -inf log-weights); no NaN is ever produced.
    """
    M, d = Q.shape
    N = S.shape[0]
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        for i in range(lo, hi):
            m = _NEG_INF
            s = 0.0
            for j in range(N):
                lw = logw[j]
                if lw == _NEG_INF:
                    continue
                d2 = _sqdist(Q, S, i, j, d)
                if kind == GAUSSIAN:
                    lv = lw + logcoef - a * d2
                else:
                    if d2 >= a:
                        continue
                    lv = lw + logcoef
                if lv <= m:
                    s += np.exp(lv - m)
                else:
                    if m == _NEG_INF:
                        s = 1.0
                    else:
                        s = s * np.exp(m - lv) + 1.0
                    m = lv
            if m == _NEG_INF:
                out[i] = _NEG_INF
            else:
                out[i] = m + np.log(s)


@njit(parallel=True, cache=True)
def pair_ball_counts(Q, S, r2s, chunk, out):
    """out[p, i] = #{j : |q_i - s_j|^2 < r2s[p]}, r2s ascending.

    One shared distance pass serves every radius, so a mixture of balls
    costs the same as a single ball.
    """
    M, d = Q.shape
    N = S.shape[0]
    P = r2s.shape[0]
    r2max = r2s[P - 1]
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        for i in range(lo, hi):
            for p in range(P):
                out[p, i] = 0.0
            for j in range(N):
                d2 = _sqdist(Q, S, i, j, d)
                if d2 >= r2max:
                    continue
                for p in range(P):
                    if d2 < r2s[p]:
                        out[p, i] += 1.0


@njit(parallel=True, cache=True)
def gauss_mixture_logpdf(Y, means, linvs, logdets, logwts, chunk, out):
    """Log density of a Gaussian mixture with per-component full covariance.

    linvs[j] is the lower-triangular inverse Cholesky factor of component
    j's covariance; logdets[j] = log det(Sigma_j).
    """
    M, d = Y.shape
    N = means.shape[0]
    c_norm = -0.5 * d * np.log(2.0 * np.pi)
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        for i in range(lo, hi):
            m = _NEG_INF
            s = 0.0
            for j in range(N):
                q = 0.0
                for row in range(d):
                    acc = 0.0
                    for col in range(row + 1):
                        acc += linvs[j, row, col] * (Y[i, col] - means[j, col])
                    q += acc * acc
                lv = logwts[j] + c_norm - 0.5 * logdets[j] - 0.5 * q
                if lv <= m:
                    s += np.exp(lv - m)
                else:
                    if m == _NEG_INF:
                        s = 1.0
                    else:
                        s = s * np.exp(m - lv) + 1.0
                    m = lv
            if m == _NEG_INF:
                out[i] = _NEG_INF
            else:
                out[i] = m + np.log(s)


@njit(parallel=True, cache=True)
def product_mixture_logpdf(P, locs, scales, logwts, kinds, chunk, out):
    """Log density of a mixture of product-form components.

    kinds[k] = 0: isotropic Gaussian (scale = std);
    kinds[k] = 1: product Cauchy (scale = per-axis scale).
    logwts absorb the component weight and normalization constant, so each
    term is logwts[k] plus the unnormalized shape term.
    """
    M, d = P.shape
    K = locs.shape[0]
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        for i in range(lo, hi):
            m = _NEG_INF
            s = 0.0
            for k in range(K):
                if kinds[k] == 0:
                    q = 0.0
                    for a in range(d):
                        z = (P[i, a] - locs[k, a]) / scales[k]
                        q += z * z
                    lv = logwts[k] - 0.5 * q
                else:
                    acc = 0.0
                    for a in range(d):
                        z = (P[i, a] - locs[k, a]) / scales[k]
                        acc -= np.log1p(z * z)
                    lv = logwts[k] + acc
                if lv <= m:
                    s += np.exp(lv - m)
                else:
                    if m == _NEG_INF:
                        s = 1.0
                    else:
                        s = s * np.exp(m - lv) + 1.0
                    m = lv
            out[i] = m + np.log(s) if m > _NEG_INF else _NEG_INF


@njit(parallel=True, cache=True)
def pair_dist_partials(X, Y, chunk, partials):
    """partials[c] = sum over rows i in chunk c of sum_j |x_i - y_j|."""
    M, d = X.shape
    N = Y.shape[0]
    n_chunks = (M + chunk - 1) // chunk
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(M, lo + chunk)
        acc = 0.0
        for i in range(lo, hi):
            row = 0.0
            for j in range(N):
                row += np.sqrt(_sqdist(X, Y, i, j, d))
            acc += row
        partials[c] = acc
