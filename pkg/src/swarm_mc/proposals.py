"""Collective proposal families.

Each family exposes three operations against a frozen swarm: ``refresh``
computes the per-iteration state (mixture weights, deconvolution weights,
local moments) once, before any particle moves; ``sample`` draws one
proposal per particle with a fixed RNG consumption pattern; and
``log_density`` evaluates log Theta(point | given) elementwise, usable in
both directions of the acceptance ratio.

Except for the random-walk family and the exploration component, densities
do not depend on the conditioning point: they are densities of the
(weighted) kernel-smoothed empirical measure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp, softmax

from .errors import ConfigError
from .kernels import (
    InteractionKernel,
    ball_counts,
    gaussian_kernel,
    gaussian_mixture_log_density,
    kernel_sum,
    log_kernel_density,
    uniform_ball_kernel,
)

__all__ = [
    "Proposal",
    "RandomWalkProposal",
    "VanillaProposal",
    "MokaProposal",
    "KidsProposal",
    "BgkProposal",
    "ExplorationMixture",
    "DeconvolutionWeights",
    "BgkMoments",
    "moka_weights_markov",
    "moka_weights_adaptive",
    "kids_weights",
    "kids_surrogate",
    "bgk_moments",
    "proposal_from_spec",
]


class Proposal:
    """Base class; subclasses override refresh/sample/log_density."""

    name = "proposal"
    #: True when the family guarantees a strictly positive density on the
    #: support (gaussian-based kinds); ball-based kinds may return -inf.
    positive_density = False

    def refresh(self, positions: np.ndarray, target):
        """Freeze all swarm-dependent state for one iteration."""
        return None

    def sample(self, state, positions: np.ndarray, rng: np.random.Generator):
        raise NotImplementedError

    def log_density(self, state, points: np.ndarray, given: np.ndarray):
        """Elementwise log Theta(points_i | given_i) against the frozen swarm."""
        raise NotImplementedError

    def end_iteration(self, state, log_alpha: np.ndarray) -> None:
        """Hook for families that carry statistics across iterations."""

    def weights_snapshot(self) -> Optional[np.ndarray]:
        """Current mixture weights, if the family has any (diagnostics)."""
        return None


def _pairwise_gaussian_logpdf(points, given, std):
    z = (np.atleast_2d(points) - np.atleast_2d(given)) / std
    d = z.shape[1]
    return -0.5 * np.sum(z * z, axis=1) - d * math.log(std) - 0.5 * d * math.log(2 * math.pi)


class RandomWalkProposal(Proposal):
    """Fixed symmetric random-walk kernel: N independent chains."""

    name = "pmh"

    def __init__(self, kernel: InteractionKernel):
        self.kernel = kernel
        self.positive_density = kernel.kind == "gaussian"

    def refresh(self, positions, target):
        return None

    def sample(self, state, positions, rng):
        return positions + self.kernel.sample(rng, positions.shape[0], positions.shape[1])

    def log_density(self, state, points, given):
        return self.kernel.log_density(np.atleast_2d(points) - np.atleast_2d(given))


@dataclass
class _SwarmState:
    positions: np.ndarray
    log_weights: Optional[np.ndarray] = None
    kernel_choice: Optional[np.ndarray] = None


class VanillaProposal(Proposal):
    """Convolution of the empirical measure with one fixed kernel."""

    name = "vanilla"

    def __init__(self, kernel: InteractionKernel):
        self.kernel = kernel
        self.positive_density = kernel.kind == "gaussian"

    def refresh(self, positions, target):
        return _SwarmState(positions)

    def sample(self, state, positions, rng):
        n, d = positions.shape
        j = rng.integers(0, state.positions.shape[0], size=n)
        e = self.kernel.sample(rng, n, d)
        return state.positions[j] + e

    def log_density(self, state, points, given):
        pts = np.atleast_2d(points)
        if self.kernel.kind == "uniform_ball":
            # uniform weights + ball kernel: all mixture terms are equal, so
            # the log density is exact counting (no log-sum-exp needed)
            counts = ball_counts(pts, state.positions, [self.kernel.scale])[0]
            with np.errstate(divide="ignore"):
                return (self.kernel.log_coef(pts.shape[1]) + np.log(counts)
                        - math.log(state.positions.shape[0]))
        return log_kernel_density(pts, state.positions, self.kernel)


@dataclass
class _MixtureState:
    positions: np.ndarray
    alpha: np.ndarray
    kernel_choice: Optional[np.ndarray] = None


class MokaProposal(Proposal):
    """Mixture of kernels with adaptive mixture weights.

    weight_mode "markov" re-optimizes the weights against the target at the
    start of every iteration; "adaptive" carries weights proportional to the
    geometric mean acceptance ratio of each kernel's proposals from the
    previous iteration.
    """

    def __init__(self, kernels: Sequence[InteractionKernel], weight_mode: str = "markov",
                 weight_floor: float = 1e-3, ratio_clamp: float = 30.0):
        if not kernels:
            raise ValueError("moka needs at least one kernel")
        if weight_mode not in ("markov", "adaptive"):
            raise ValueError("weight_mode must be 'markov' or 'adaptive'")
        self.kernels = list(kernels)
        self.weight_mode = weight_mode
        self.weight_floor = weight_floor
        self.ratio_clamp = ratio_clamp
        self.positive_density = all(k.kind == "gaussian" for k in self.kernels)
        self.name = f"moka-{weight_mode}"
        self._carry = np.full(len(kernels), 1.0 / len(kernels))
        self._all_ball = all(k.kind == "uniform_ball" for k in self.kernels)
        self._ball_order = np.argsort([k.scale for k in self.kernels])

    def _per_kernel_log_density(self, state, pts):
        n = state.positions.shape[0]
        d = pts.shape[1]
        out = np.empty((len(self.kernels), pts.shape[0]))
        if self._all_ball:
            radii = [self.kernels[i].scale for i in self._ball_order]
            counts = ball_counts(pts, state.positions, radii)
            with np.errstate(divide="ignore"):
                for rank, idx in enumerate(self._ball_order):
                    out[idx] = (self.kernels[idx].log_coef(d) + np.log(counts[rank])
                                - math.log(n))
        else:
            for idx, k in enumerate(self.kernels):
                out[idx] = log_kernel_density(pts, state.positions, k)
        return out

    def refresh(self, positions, target):
        if self.weight_mode == "markov":
            densities = None
            if self._all_ball:
                n, d = positions.shape
                radii = [self.kernels[i].scale for i in self._ball_order]
                counts = ball_counts(positions, positions, radii)
                densities = np.empty_like(counts)
                for rank, idx in enumerate(self._ball_order):
                    densities[idx] = self.kernels[idx].coef(d) * counts[rank] / n
            alpha = moka_weights_markov(positions, self.kernels, target,
                                        densities=densities)
        else:
            alpha = self._carry
        self._last_used = alpha
        return _MixtureState(positions, alpha)

    def sample(self, state, positions, rng):
        n, d = positions.shape
        cum = np.cumsum(state.alpha)
        cum[-1] = 1.0
        p = np.searchsorted(cum, rng.random(n), side="right")
        j = rng.integers(0, state.positions.shape[0], size=n)
        z = rng.standard_normal((n, d))
        needs_u = any(k.kind == "uniform_ball" for k in self.kernels)
        u = rng.random(n) if needs_u else None
        e = np.empty((n, d))
        for idx, k in enumerate(self.kernels):
            mask = p == idx
            if not np.any(mask):
                continue
            zm = z[mask]
            if k.kind == "gaussian":
                e[mask] = k.scale * zm
            else:
                norms = np.linalg.norm(zm, axis=1)
                norms[norms == 0.0] = 1.0
                radii = k.scale * u[mask] ** (1.0 / d)
                e[mask] = zm * (radii / norms)[:, None]
        state.kernel_choice = p
        return state.positions[j] + e

    def log_density(self, state, points, given):
        pts = np.atleast_2d(points)
        terms = self._per_kernel_log_density(state, pts)
        with np.errstate(divide="ignore"):
            la = np.log(state.alpha)
        return logsumexp(terms + la[:, None], axis=0)

    def end_iteration(self, state, log_alpha):
        if self.weight_mode != "adaptive" or state.kernel_choice is None:
            return
        self._carry = moka_weights_adaptive(
            state.kernel_choice, log_alpha, len(self.kernels),
            w_min=self.weight_floor, clamp=self.ratio_clamp,
        )

    def weights_snapshot(self):
        """Weights used by the most recent iteration."""
        return self._last_used

    _last_used: Optional[np.ndarray] = None


def _moka_objective(alpha, densities, target_masses):
    """Mean absolute gap between the two probability vectors on the swarm."""
    m = alpha @ densities
    s = m.sum()
    if s <= 0:
        return np.inf
    return float(np.mean(np.abs(m / s - target_masses)))


def moka_weights_markov(positions, kernels, target, densities=None) -> np.ndarray:
    """L1-optimal mixture weights over the simplex.

    Both sides of the objective are normalized to unit mass on the swarm:
    the mixture values (K_p * mu)(X_i) and the target values pi(X_i) each
    become probability vectors, and the weights minimize their mean absolute
    gap.  The fractional objective is solved exactly as a linear program via
    the standard change of variables beta = alpha / (sum_p alpha_p S_p); the
    returned point is certified against uniform weights and every simplex
    vertex, with ties (within 1e-12) broken toward uniform.

    ``densities`` optionally supplies the precomputed (P, N) matrix of
    per-kernel densities (K_p * mu)(X_i).
    """
    P = len(kernels)
    uniform = np.full(P, 1.0 / P)
    if P == 1:
        return np.array([1.0])
    X = np.ascontiguousarray(np.asarray(positions, dtype=np.float64))
    n = X.shape[0]
    if densities is None:
        ones = np.full(n, 1.0 / n)
        densities = np.stack([kernel_sum(X, X, k, ones) for k in kernels])
    D = densities
    S = D.sum(axis=1)
    if not np.all(S > 0) or not np.all(np.isfinite(S)):
        warnings.warn("degenerate swarm: kernel densities vanished; using uniform mixture weights")
        return uniform
    pi_t = softmax(target.log_density(X))

    # LP in beta = alpha / (sum_p alpha_p S_p) with split residuals u, v:
    #   minimize (1/n) sum(u + v)
    #   s.t. D^T beta - u + v = pi_t,  S . beta = 1,  beta, u, v >= 0
    a_eq = sparse.vstack(
        [sparse.hstack([sparse.csc_matrix(D.T), -sparse.identity(n), sparse.identity(n)]),
         sparse.csc_matrix(np.concatenate([S, np.zeros(2 * n)])[None, :])],
        format="csc",
    )
    b_eq = np.concatenate([pi_t, [1.0]])
    c = np.concatenate([np.zeros(P), np.full(2 * n, 1.0 / n)])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ipm")
    if res.status != 0:
        res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    candidates = [uniform] + [np.eye(P)[p] for p in range(P)]
    if res.status == 0:
        beta = np.maximum(res.x[:P], 0.0)
        if beta.sum() > 0:
            candidates.insert(1, beta / beta.sum())
    else:
        warnings.warn(f"mixture-weight LP did not converge ({res.message}); "
                      "falling back to candidate comparison")
    vals = np.array([_moka_objective(a, D, pi_t) for a in candidates])
    best = vals.min()
    for a, v in zip(candidates, vals):  # uniform first: ties go to uniform
        if v <= best + 1e-12:
            return a
    return uniform


def moka_weights_adaptive(kernel_choice, log_alpha, n_kernels,
                          w_min: float = 1e-3, clamp: float = 30.0) -> np.ndarray:
    """Weights proportional to each kernel's geometric-mean acceptance ratio.

    Log ratios are clamped to [-clamp, clamp] before averaging; a kernel
    that drew no proposals this iteration gets exactly ``w_min`` before the
    final renormalization.
    """
    la = np.clip(np.asarray(log_alpha, dtype=np.float64), -clamp, clamp)
    choice = np.asarray(kernel_choice)
    v = np.empty(n_kernels)
    for p in range(n_kernels):
        mask = choice == p
        if np.any(mask):
            v[p] = max(math.exp(float(np.mean(la[mask]))), w_min)
        else:
            v[p] = w_min
    total = v.sum()
    if total <= 0:
        return np.full(n_kernels, 1.0 / n_kernels)
    return v / total


@dataclass
class DeconvolutionWeights:
    """Swarm reweighting from the deconvolution problem."""

    w: np.ndarray
    rl_iterations_used: int


def _swarm_target_masses(positions, target) -> np.ndarray:
    return softmax(target.log_density(positions))


def kids_weights(positions, kernel: InteractionKernel, target, n_iters: int = 50,
                 ) -> DeconvolutionWeights:
    """Multiplicative deconvolution updates from a uniform start.

    Each sweep is two kernel sums: the smoothed weighted measure at every
    particle, then the back-projected correction factors.  With the target
    masses normalized over the swarm the weights stay on the simplex and the
    surrogate objective (see :func:`kids_surrogate`) never increases.
    """
    X = np.ascontiguousarray(np.asarray(positions, dtype=np.float64))
    n = X.shape[0]
    if n == 1:
        return DeconvolutionWeights(np.array([1.0]), n_iters)
    pi_t = _swarm_target_masses(X, target)
    w = np.full(n, 1.0 / n)
    warned = False
    for _ in range(n_iters):
        denom = kernel_sum(X, X, kernel, w)
        good = denom > 0
        if not np.all(good) and not warned:
            warnings.warn("deconvolution: isolated particles under the ball kernel "
                          "skipped in the update")
            warned = True
        factor = np.where(good, pi_t / np.where(good, denom, 1.0), 0.0)
        w = w * kernel_sum(X, X, kernel, factor)
        total = w.sum()
        if total <= 0:
            warnings.warn("deconvolution collapsed; falling back to uniform weights")
            w = np.full(n, 1.0 / n)
            break
        w = w / total
    return DeconvolutionWeights(w, n_iters)


def kids_surrogate(w, positions, kernel: InteractionKernel, target) -> float:
    """Swarm-discretized deconvolution objective:
    -sum_j pi_t(X_j) log (K * nu_w)(X_j), smaller is better."""
    X = np.ascontiguousarray(np.asarray(positions, dtype=np.float64))
    pi_t = _swarm_target_masses(X, target)
    logvals = log_kernel_density(X, X, kernel, weights=np.asarray(w, dtype=np.float64))
    active = pi_t > 0
    if np.any(np.isneginf(logvals[active])):
        return np.inf
    return float(-np.sum(pi_t[active] * logvals[active]))


class KidsProposal(Proposal):
    """Convolution of the deconvolution-reweighted empirical measure."""

    name = "kids"

    def __init__(self, kernel: InteractionKernel, rl_iters: int = 50):
        self.kernel = kernel
        self.rl_iters = rl_iters
        self.positive_density = False  # weights may vanish on particles

    def refresh(self, positions, target):
        dw = kids_weights(positions, self.kernel, target, self.rl_iters)
        with np.errstate(divide="ignore"):
            lw = np.log(dw.w)
        return _SwarmState(positions, log_weights=lw)

    def sample(self, state, positions, rng):
        n, d = positions.shape
        w = np.exp(state.log_weights)
        cum = np.cumsum(w)
        cum[-1] = 1.0
        j = np.searchsorted(cum, rng.random(n), side="right")
        e = self.kernel.sample(rng, n, d)
        return state.positions[j] + e

    def log_density(self, state, points, given):
        return log_kernel_density(np.atleast_2d(points), state.positions, self.kernel,
                                  log_weights=state.log_weights)


@dataclass
class BgkMoments:
    """Per-particle local Gaussian moments (after PSD regularization)."""

    means: np.ndarray        # (N, d)
    covariances: np.ndarray  # (N, d, d)
    cholesky: np.ndarray     # (N, d, d), lower triangular


def bgk_moments(positions, kernel: InteractionKernel, jitter: float = 1e-8) -> BgkMoments:
    """Kernel-weighted local mean and covariance around every particle.

    Built from d + d(d+1)/2 + 1 pairwise kernel sums; ``jitter`` * identity
    is added to every covariance so the Cholesky factorization always
    exists.
    """
    X = np.ascontiguousarray(np.asarray(positions, dtype=np.float64))
    n, d = X.shape
    # anchor at the swarm mean so the m2 - m m^T cancellation happens at the
    # spread scale, not the coordinate scale
    anchor = X.mean(axis=0)
    Xc = np.ascontiguousarray(X - anchor)
    kappa = kernel_sum(Xc, Xc, kernel, np.ones(n))  # >= K(0) via the self term
    means = np.empty((n, d))
    for a in range(d):
        means[:, a] = kernel_sum(Xc, Xc, kernel, Xc[:, a].copy()) / kappa
    covs = np.empty((n, d, d))
    for a in range(d):
        for b in range(a + 1):
            m2 = kernel_sum(Xc, Xc, kernel, (Xc[:, a] * Xc[:, b]).copy()) / kappa
            covs[:, a, b] = covs[:, b, a] = m2 - means[:, a] * means[:, b]
    covs += jitter * np.eye(d)
    chol = np.linalg.cholesky(covs)
    return BgkMoments(means + anchor, covs, chol)


@dataclass
class _BgkState:
    positions: np.ndarray
    moments: BgkMoments


class BgkProposal(Proposal):
    """Local-Gaussian proposal: pick a particle, sample from its local
    kernel-weighted mean and covariance."""

    name = "bgk"
    positive_density = True  # full-support Gaussian mixture

    def __init__(self, locality_kernel: InteractionKernel, jitter_factor: float = 1e-8):
        self.kernel = locality_kernel
        self.jitter_factor = jitter_factor

    def refresh(self, positions, target):
        jitter = self.jitter_factor * target.diameter() ** 2
        return _BgkState(positions, bgk_moments(positions, self.kernel, jitter))

    def sample(self, state, positions, rng):
        n, d = positions.shape
        j = rng.integers(0, state.positions.shape[0], size=n)
        z = rng.standard_normal((n, d))
        mom = state.moments
        return mom.means[j] + np.einsum("nab,nb->na", mom.cholesky[j], z)

    def log_density(self, state, points, given):
        return gaussian_mixture_log_density(np.atleast_2d(points), state.moments.means,
                                            state.moments.cholesky)


@dataclass
class _ExplorationState:
    base_state: object
    explored: Optional[np.ndarray] = None


class ExplorationMixture(Proposal):
    """Mixes a base family with a wide Gaussian perturbation of the current
    particle, with the mixture density entering both sides of the
    acceptance ratio."""

    def __init__(self, base: Proposal, prob: float, std: float):
        if not 0.0 <= prob <= 1.0:
            raise ValueError("exploration probability must be in [0, 1]")
        self.base = base
        self.prob = float(prob)
        self.std = float(std)
        self.positive_density = self.base.positive_density or self.prob > 0
        self.name = f"{base.name}+explore"

    def refresh(self, positions, target):
        return _ExplorationState(self.base.refresh(positions, target))

    def sample(self, state, positions, rng):
        n, d = positions.shape
        explored = rng.random(n) < self.prob
        y_base = self.base.sample(state.base_state, positions, rng)
        z = rng.standard_normal((n, d))
        y = np.where(explored[:, None], positions + self.std * z, y_base)
        state.explored = explored
        choice = getattr(state.base_state, "kernel_choice", None)
        if choice is not None:
            choice = choice.copy()
            choice[explored] = -1
            state.base_state.kernel_choice = choice
        return y

    def log_density(self, state, points, given):
        base = self.base.log_density(state.base_state, points, given)
        if self.prob == 0.0:
            return base
        wide = _pairwise_gaussian_logpdf(points, given, self.std)
        if self.prob == 1.0:
            return wide
        return np.logaddexp(math.log(self.prob) + wide,
                            math.log1p(-self.prob) + base)

    def end_iteration(self, state, log_alpha):
        self.base.end_iteration(state.base_state, log_alpha)

    def weights_snapshot(self):
        return self.base.weights_snapshot()


def _kernel_from_spec(spec) -> InteractionKernel:
    if isinstance(spec, (int, float)):
        return uniform_ball_kernel(float(spec))
    if not isinstance(spec, dict):
        raise ConfigError("proposal.kernels", f"bad kernel spec {spec!r}")
    kind = spec.get("kind", "uniform_ball")
    if kind == "uniform_ball":
        r = spec.get("r", spec.get("radius", spec.get("scale")))
        if r is None:
            raise ConfigError("proposal.kernels", "uniform_ball kernel needs 'r'")
        return uniform_ball_kernel(float(r))
    if kind == "gaussian":
        s = spec.get("sigma", spec.get("scale"))
        if s is None:
            raise ConfigError("proposal.kernels", "gaussian kernel needs 'sigma'")
        return gaussian_kernel(float(s))
    raise ConfigError("proposal.kernels", f"unknown kernel kind {kind!r}")


def _collect_kernels(spec: dict) -> list[InteractionKernel]:
    try:
        if "kernels" in spec:
            return [_kernel_from_spec(k) for k in spec["kernels"]]
        if "radii" in spec:
            return [uniform_ball_kernel(float(r)) for r in spec["radii"]]
        if "sigma" in spec:
            return [gaussian_kernel(float(spec["sigma"]))]
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("proposal.radii", f"bad kernel size: {e}") from None
    return []


def proposal_from_spec(spec: dict) -> Proposal:
    """Build a proposal family from its JSON configuration."""
    if not isinstance(spec, dict):
        raise ConfigError("proposal", "proposal spec must be an object")
    family = spec.get("family")
    if family is None:
        raise ConfigError("proposal.family", "missing")
    kernels = _collect_kernels(spec)

    def single_kernel() -> InteractionKernel:
        if len(kernels) != 1:
            raise ConfigError(
                "proposal.kernels",
                f"family {family!r} needs exactly one kernel, got {len(kernels)}")
        return kernels[0]

    if family == "pmh":
        base: Proposal = RandomWalkProposal(single_kernel())
    elif family == "vanilla":
        base = VanillaProposal(single_kernel())
    elif family == "moka":
        if not kernels:
            raise ConfigError("proposal.kernels", "moka needs at least one kernel")
        base = MokaProposal(kernels, weight_mode=spec.get("weight_mode", "markov"))
    elif family == "kids":
        base = KidsProposal(single_kernel(), rl_iters=int(spec.get("kids_iters", 50)))
    elif family == "bgk":
        if kernels:
            locality = single_kernel()
        elif "bgk_threshold" in spec:
            locality = uniform_ball_kernel(float(spec["bgk_threshold"]))
        else:
            raise ConfigError("proposal.bgk_threshold",
                              "bgk needs a locality kernel or threshold")
        base = BgkProposal(locality)
    else:
        raise ConfigError("proposal.family", f"unknown family {family!r}")

    exploration = spec.get("exploration")
    if exploration:
        prob = exploration.get("prob")
        std = exploration.get("std")
        if prob is None or std is None:
            raise ConfigError("proposal.exploration", "needs 'prob' and 'std'")
        if not 0.0 <= float(prob) <= 1.0:
            raise ConfigError("proposal.exploration.prob", "must be in [0, 1]")
        if float(prob) > 0.0:
            base = ExplorationMixture(base, float(prob), float(std))
    return base
