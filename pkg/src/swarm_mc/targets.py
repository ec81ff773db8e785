"""Benchmark target densities on the unit hypercube, plus exact sampling.

All targets are unnormalized log densities clipped to an axis-aligned box:
the evaluator returns -inf outside the box and a finite value everywhere
inside.  Reference samples are drawn by plain rejection from the uniform
envelope over the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "TargetDensity",
    "banana3",
    "gauss8",
    "cauchy_mix",
    "uniform_box",
    "mixture_target",
    "target_from_spec",
    "registry",
    "rejection_sample",
    "box_log_normalizer",
]


@dataclass
class TargetDensity:
    """Unnormalized target with compact box support."""

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    _log_density: Callable[[np.ndarray], np.ndarray]
    known_log_normalizer: Optional[float] = None
    exact_sampler: Optional[Callable[[int, int], np.ndarray]] = None
    mode_hints: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def inside(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """Vectorized log density; -inf exactly on points outside the box."""
        pts = np.asarray(points, dtype=np.float64)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points must have dimension {self.dim}")
        ok = self.inside(pts)
        out = np.full(pts.shape[0], -np.inf)
        if np.any(ok):
            out[ok] = self._log_density(pts[ok])
        return float(out[0]) if scalar else out

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))


def _unit_box(dim: int):
    return np.zeros(dim), np.ones(dim)


def _gaussian_comp_logpdf(pts, mean, std):
    d = pts.shape[1]
    z = (pts - mean) / std
    return -0.5 * np.sum(z * z, axis=1) - d * math.log(std) - 0.5 * d * math.log(2 * math.pi)


def _cauchy_comp_logpdf(pts, loc, scale):
    z = (pts - loc) / scale
    return np.sum(-np.log1p(z * z), axis=1) - pts.shape[1] * math.log(math.pi * scale)


def _banana_comp_logpdf(pts, center, sigmas, curvature, arc):
    u1 = pts[:, 0] - center[0]
    u2 = pts[:, 1] - center[1] + curvature * (u1 * u1 - arc * arc)
    return (
        -0.5 * (u1 / sigmas[0]) ** 2
        - 0.5 * (u2 / sigmas[1]) ** 2
        - math.log(2 * math.pi * sigmas[0] * sigmas[1])
    )


def _mixture_logpdf(components):
    """components: list of (log_weight, per-point evaluator)."""

    def f(pts):
        terms = np.stack([lw + comp(pts) for lw, comp in components], axis=0)
        return logsumexp(terms, axis=0)

    return f


def _compiled_product_mixture(dim, specs):
    """Fast fused evaluator for product-form mixtures.

    specs: list of (kind, loc, scale, log_weight) with kind "gaussian" or
    "cauchy"; the batch loop is compiled, which matters for rejection
    sampling of peaked targets.
    """
    from . import _compiled

    locs = np.ascontiguousarray(np.vstack([s[1] for s in specs]))
    scales = np.array([s[2] for s in specs])
    kinds = np.array([0 if s[0] == "gaussian" else 1 for s in specs], dtype=np.int64)
    logwts = np.empty(len(specs))
    for k, (kind, _loc, scale, lw) in enumerate(specs):
        if kind == "gaussian":
            logwts[k] = lw - dim * math.log(scale) - 0.5 * dim * math.log(2 * math.pi)
        else:
            logwts[k] = lw - dim * math.log(math.pi * scale)

    def f(pts):
        pts = np.ascontiguousarray(pts)
        out = np.empty(pts.shape[0])
        _compiled.product_mixture_logpdf(pts, locs, scales, logwts, kinds, 1024, out)
        return out

    return f


def uniform_box(dim: int = 2, scale: float = 1.0) -> TargetDensity:
    """Flat density equal to ``scale`` on the unit box (normalizer = scale)."""
    lower, upper = _unit_box(dim)
    logc = math.log(scale)
    t = TargetDensity(
        name="uniform",
        dim=dim,
        lower=lower,
        upper=upper,
        _log_density=lambda pts: np.full(pts.shape[0], logc),
        known_log_normalizer=logc,
        params={"scale": scale},
    )
    t.exact_sampler = lambda n, seed: rejection_sample(t, n, seed)
    return t


def banana3(bell_std: float = 0.045, curvature: float = 2.0, arc: float = 0.15,
            banana_sigmas=(0.15, 0.05), banana_center=(0.5, 0.3)) -> TargetDensity:
    """Three isotropic bells plus a curved ridge, clipped to the unit square.

    The exact ridge construction is a reconstruction (the benchmark is only
    described qualitatively in the literature it comes from): a Gaussian in
    warped coordinates (u1, u2 + curvature*(u1^2 - arc^2)).  Defaults keep
    all four modes visible inside the square; bell_std is configurable, with
    the literal wide-bell reading reachable via bell_std=sqrt(0.2).
    """
    lower, upper = _unit_box(2)
    bells = [np.array([0.2, 0.75]), np.array([0.5, 0.85]), np.array([0.8, 0.75])]
    lw = math.log(0.25)
    comps = [(lw, lambda p, m=m: _gaussian_comp_logpdf(p, m, bell_std)) for m in bells]
    comps.append(
        (lw, lambda p: _banana_comp_logpdf(
            p, np.asarray(banana_center), banana_sigmas, curvature, arc))
    )
    ridge_top = np.array([banana_center[0], banana_center[1] + curvature * arc * arc])
    t = TargetDensity(
        name="banana3",
        dim=2,
        lower=lower,
        upper=upper,
        _log_density=_mixture_logpdf(comps),
        mode_hints=np.vstack(bells + [ridge_top]),
        params={
            "bell_std": bell_std, "curvature": curvature, "arc": arc,
            "banana_sigmas": tuple(banana_sigmas), "banana_center": tuple(banana_center),
        },
    )
    t.exact_sampler = lambda n, seed: rejection_sample(t, n, seed)
    return t


def gauss8(scale_reading: str = "std") -> TargetDensity:
    """Two isotropic Gaussians in dimension 8, clipped to the unit cube.

    Means are (1/2 -+ 1/(4 sqrt 8), 1/2 +- 1/(4 sqrt 8), ...); the quoted
    spread sqrt(0.05)/2 is read as the standard deviation by default
    (scale_reading="var" reads it as the variance instead).
    """
    dim = 8
    lower, upper = _unit_box(dim)
    off = 1.0 / (4.0 * math.sqrt(8.0))
    m1 = np.full(dim, 0.5 + off)
    m1[0] = 0.5 - off
    m2 = np.full(dim, 0.5 - off)
    m2[0] = 0.5 + off
    quoted = math.sqrt(0.05) / 2.0
    if scale_reading == "std":
        std = quoted
    elif scale_reading == "var":
        std = math.sqrt(quoted)
    else:
        raise ValueError("scale_reading must be 'std' or 'var'")
    t = TargetDensity(
        name="gauss8",
        dim=dim,
        lower=lower,
        upper=upper,
        _log_density=_compiled_product_mixture(
            dim, [("gaussian", m1, std, math.log(0.5)),
                  ("gaussian", m2, std, math.log(0.5))]),
        mode_hints=np.vstack([m1, m2]),
        params={"means": (tuple(map(float, m1)), tuple(map(float, m2))),
                "std": std, "scale_reading": scale_reading},
    )
    t.exact_sampler = lambda n, seed: rejection_sample(t, n, seed)
    return t


def cauchy_mix(scale: float = 0.01) -> TargetDensity:
    """Equal mixture of two product-form Cauchy components on the square."""
    lower, upper = _unit_box(2)
    locs = [np.array([0.2, 0.8]), np.array([0.8, 0.2])]
    t = TargetDensity(
        name="cauchy_mix",
        dim=2,
        lower=lower,
        upper=upper,
        _log_density=_compiled_product_mixture(
            2, [("cauchy", c, scale, math.log(0.5)) for c in locs]),
        mode_hints=np.vstack(locs),
        params={"locations": [tuple(map(float, c)) for c in locs], "scale": scale},
    )
    t.exact_sampler = lambda n, seed: rejection_sample(t, n, seed)
    return t


def mixture_target(spec: dict) -> TargetDensity:
    """Custom Gaussian/Cauchy mixture from a JSON-style dict.

    {"dim": d, "components": [{"kind": "gaussian", "mean": [...],
    "std": s, "weight": w}, {"kind": "cauchy", "loc": [...], "scale": g,
    "weight": w}, ...], "log_scale": optional constant added to log pi}
    """
    try:
        dim = int(spec["dim"])
        raw = spec["components"]
    except KeyError as e:
        raise ValueError(f"custom target spec missing field {e.args[0]!r}") from None
    if not raw:
        raise ValueError("custom target needs at least one component")
    weights = np.array([float(c.get("weight", 1.0)) for c in raw])
    if np.any(weights <= 0):
        raise ValueError("component weights must be positive")
    weights = weights / weights.sum()
    log_scale = float(spec.get("log_scale", 0.0))
    comps = []
    hints = []
    for c, w in zip(raw, weights):
        lw = math.log(w) + log_scale
        kind = c.get("kind", "gaussian")
        if kind == "gaussian":
            loc = np.asarray(c["mean"], dtype=np.float64)
            scale = float(c["std"])
        elif kind == "cauchy":
            loc = np.asarray(c["loc"], dtype=np.float64)
            scale = float(c["scale"])
        else:
            raise ValueError(f"unknown component kind {kind!r}")
        if loc.shape != (dim,):
            raise ValueError("component location dimension mismatch")
        if scale <= 0:
            raise ValueError("component scale must be positive")
        comps.append((kind, loc, scale, lw))
        hints.append(loc)
    lower = np.asarray(spec.get("lower", np.zeros(dim)), dtype=np.float64)
    upper = np.asarray(spec.get("upper", np.ones(dim)), dtype=np.float64)
    t = TargetDensity(
        name=spec.get("name", "custom"),
        dim=dim,
        lower=lower,
        upper=upper,
        _log_density=_compiled_product_mixture(dim, comps),
        mode_hints=np.vstack(hints),
        params={"components": raw},
    )
    t.exact_sampler = lambda n, seed: rejection_sample(t, n, seed)
    return t


registry = {
    "banana3": banana3,
    "gauss8": gauss8,
    "cauchy_mix": cauchy_mix,
    "uniform": uniform_box,
}


def target_from_spec(spec) -> TargetDensity:
    """Build a target from an id string or a {"id": ..., params} dict."""
    if isinstance(spec, str):
        spec = {"id": spec}
    if not isinstance(spec, dict):
        raise ValueError("target spec must be an id string or a dict")
    tid = spec.get("id")
    if tid is None:
        raise ValueError("target spec missing field 'id'")
    if tid == "custom":
        return mixture_target(spec)
    if tid not in registry:
        known = ", ".join(sorted(registry) + ["custom"])
        raise ValueError(f"unknown target id {tid!r} (known: {known})")
    params = {k: v for k, v in spec.items() if k != "id"}
    return registry[tid](**params)


def _envelope_log_max(target: TargetDensity, rng: np.random.Generator) -> float:
    """Grid/random estimate of sup log pi over the box."""
    cands = []
    if target.mode_hints is not None:
        cands.append(np.atleast_2d(target.mode_hints))
    span = target.upper - target.lower
    if target.dim == 1:
        g = target.lower[0] + span[0] * (np.arange(4096) + 0.5) / 4096
        cands.append(g[:, None])
    elif target.dim == 2:
        g = (np.arange(384) + 0.5) / 384
        xx, yy = np.meshgrid(target.lower[0] + span[0] * g, target.lower[1] + span[1] * g)
        cands.append(np.column_stack([xx.ravel(), yy.ravel()]))
    cands.append(target.lower + span * rng.random((1 << 14, target.dim)))
    best = -np.inf
    for c in cands:
        vals = target.log_density(c)
        m = np.max(vals)
        if m > best:
            best = float(m)
    if not np.isfinite(best):
        raise ValueError("target has no finite density values on its box")
    return best


def rejection_sample(target: TargetDensity, n: int, seed: int) -> np.ndarray:
    """n exact iid samples by rejection from Uniform(box).

    The envelope constant is a grid/random estimate of sup pi times a 1.2
    safety factor.  Aborts if the realized acceptance rate stays below
    1e-6, which signals a target too peaked for plain rejection.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x7E7A])))
    log_m = _envelope_log_max(target, rng) + math.log(1.2)
    span = target.upper - target.lower
    out = np.empty((n, target.dim))
    got = 0
    drawn = 0
    batch = min(1 << 20, max(1 << 14, 4 * n))
    while got < n:
        pts = target.lower + span * rng.random((batch, target.dim))
        logu = np.log(rng.random(batch))
        keep = logu < (target.log_density(pts) - log_m)
        acc = pts[keep]
        take = min(n - got, acc.shape[0])
        out[got : got + take] = acc[:take]
        got += take
        drawn += batch
        if got < n and drawn >= max(10_000_000, 20 * n) and got < 1e-6 * drawn:
            raise RuntimeError(
                f"rejection sampling acceptance rate below 1e-6 for target "
                f"{target.name!r}; envelope too loose or target too peaked"
            )
    return out


def box_log_normalizer(target: TargetDensity, cells_per_axis: int = 512) -> float:
    """Midpoint-quadrature log of the box integral of pi (dim <= 2 only)."""
    if target.dim > 2:
        raise ValueError("quadrature normalizer supports dim <= 2")
    span = target.upper - target.lower
    g = (np.arange(cells_per_axis) + 0.5) / cells_per_axis
    if target.dim == 1:
        pts = (target.lower[0] + span[0] * g)[:, None]
        vol = span[0] / cells_per_axis
    else:
        xx, yy = np.meshgrid(target.lower[0] + span[0] * g, target.lower[1] + span[1] * g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        vol = span[0] * span[1] / cells_per_axis**2
    return float(logsumexp(target.log_density(pts)) + math.log(vol))
