"""Figure rendering for the CLI report paths.

Each helper writes one figure file next to the CSV it illustrates; all
rendering is headless.
"""

from __future__ import annotations

import threading

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["run_figure", "scatter_frame", "entropy_figure", "suite_figure"]

# pyplot is not thread-safe; suite repetitions may render concurrently
_render_lock = threading.Lock()


def _locked(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with _render_lock:
            return fn(*args, **kwargs)

    return wrapper


def _finite(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ok = np.isfinite(ys)
    return xs[ok], ys[ok]


@_locked
def run_figure(records, path: str) -> None:
    """Energy distance, acceptance rate, and ESS along one run."""
    iters = [r.iteration for r in records]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    x, y = _finite(iters, [r.energy_distance for r in records])
    axes[0].plot(x, y, marker="o", ms=3)
    if np.all(y > 0):
        axes[0].set_yscale("log")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("energy distance")
    x, y = _finite(iters, [r.acceptance_rate for r in records])
    axes[1].plot(x, y, marker="o", ms=3, color="tab:orange")
    axes[1].set_ylim(0, 1)
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("acceptance rate")
    x, y = _finite(iters, [r.ess for r in records])
    axes[2].plot(x, y, marker="o", ms=3, color="tab:green")
    axes[2].set_xlabel("iteration")
    axes[2].set_ylabel("ESS")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


@_locked
def scatter_frame(positions: np.ndarray, target, path: str, title: str = "") -> None:
    """2-D particle scatter over the target's level sets."""
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    g = np.linspace(target.lower, target.upper, 160)
    xx, yy = np.meshgrid(g[:, 0], g[:, 1])
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    with np.errstate(over="ignore"):
        zz = np.exp(target.log_density(pts)).reshape(xx.shape)
    ax.contour(xx, yy, zz, levels=7, colors="tab:red", linewidths=0.6, alpha=0.7)
    ax.scatter(positions[:, 0], positions[:, 1], s=2.5, alpha=0.4, color="tab:blue")
    ax.set_xlim(target.lower[0], target.upper[0])
    ax.set_ylim(target.lower[1], target.upper[1])
    ax.set_title(title, fontsize=9)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@_locked
def entropy_figure(trace, path: str) -> None:
    """Entropy decay and ratio bounds along a grid evolution."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(trace.times, trace.chi2, label="chi2")
    axes[0].plot(trace.times, trace.kl, label="kl")
    axes[0].set_yscale("log")
    axes[0].set_xlabel("time")
    axes[0].set_ylabel("relative entropy")
    axes[0].legend()
    axes[1].plot(trace.times, trace.min_ratio, label="min f/pi")
    axes[1].plot(trace.times, trace.max_ratio, label="max f/pi")
    axes[1].set_xlabel("time")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


@_locked
def suite_figure(curves: dict, path: str, baseline=None) -> None:
    """Mean energy-distance curves per method, with the iid noise band."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (iters, mean_ed) in curves.items():
        x, y = _finite(iters, mean_ed)
        ax.plot(x, y, marker="o", ms=3, label=name)
    if baseline is not None:
        ax.axhline(baseline.mean, color="gray", ls=":", label="iid baseline")
        ax.axhspan(baseline.q05, baseline.q95, color="gray", alpha=0.2)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean energy distance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
