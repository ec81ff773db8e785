"""Independent oracles shared by the tests.

Everything here is deliberately naive (double loops, direct formulas) and
stays independent of the library's tiled/compiled code paths.
"""

import math

import numpy as np


def naive_kernel_sum(queries, sources, kernel, weights):
    """Plain broadcasting evaluation of sum_j K(q_i - s_j) b_j."""
    Q = np.atleast_2d(queries)
    S = np.atleast_2d(sources)
    diff = Q[:, None, :] - S[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    d = Q.shape[1]
    if kernel.kind == "gaussian":
        k = np.exp(-d2 / (2 * kernel.scale**2)) * kernel.coef(d)
    else:
        k = np.where(d2 < kernel.scale**2, kernel.coef(d), 0.0)
    return k @ np.asarray(weights)


def python_loop_kernel_sum(queries, sources, kernel, weights):
    """Literal double loop (small inputs only)."""
    Q = np.atleast_2d(queries)
    S = np.atleast_2d(sources)
    d = Q.shape[1]
    out = []
    for i in range(Q.shape[0]):
        acc = 0.0
        for j in range(S.shape[0]):
            d2 = sum((Q[i, k] - S[j, k]) ** 2 for k in range(d))
            if kernel.kind == "gaussian":
                val = math.exp(-d2 / (2 * kernel.scale**2)) * kernel.coef(d)
            else:
                val = kernel.coef(d) if d2 < kernel.scale**2 else 0.0
            acc += val * weights[j]
        out.append(acc)
    return np.array(out)


def naive_energy_distance(X, Y):
    """Triple-loop energy distance."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    n, m = X.shape[0], Y.shape[0]
    xy = sum(np.linalg.norm(X[i] - Y[j]) for i in range(n) for j in range(m))
    xx = sum(np.linalg.norm(X[i] - X[j]) for i in range(n) for j in range(n))
    yy = sum(np.linalg.norm(Y[i] - Y[j]) for i in range(m) for j in range(m))
    return 2 * xy / (n * m) - xx / n**2 - yy / m**2


def mann_kendall_downward(series, alpha=0.05):
    """One-sided Mann-Kendall test: True when a decreasing monotone trend is
    detected at the given level."""
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    s = 0
    for i in range(n - 1):
        s += int(np.sum(np.sign(x[i + 1:] - x[i])))
    var = n * (n - 1) * (2 * n + 5) / 18.0
    if s > 0:
        z = (s - 1) / math.sqrt(var)
    elif s < 0:
        z = (s + 1) / math.sqrt(var)
    else:
        z = 0.0
    # one-sided 5% critical value
    from scipy.stats import norm

    return z < norm.ppf(alpha)


def log_linear_r2(x, logy):
    """R^2 of the least-squares line through (x, logy)."""
    slope, icpt = np.polyfit(x, logy, 1)
    pred = slope * np.asarray(x) + icpt
    resid = np.asarray(logy) - pred
    total = np.asarray(logy) - np.mean(logy)
    return 1.0 - np.sum(resid**2) / np.sum(total**2), slope


def decay_window(iters, ed, baseline_mean):
    """Decaying window of an energy-distance series: from the early maximum
    to the first crossing of 1.5x the iid baseline."""
    ed = np.asarray(ed)
    start = int(np.argmax(ed[: min(6, ed.size)]))
    below = np.where(ed <= 1.5 * baseline_mean)[0]
    end = int(below[0]) if below.size else ed.size - 1
    return np.asarray(iters)[start : end + 1], ed[start : end + 1]
