"""Deterministic grid discretization of the nonlinear transition operator.

The swarm dynamics have a mean-field limit: a measure evolving by
f <- T(f), where T applies the swarm's accept/reject kernel built from f
itself.  This module discretizes T on a regular 1-D or 2-D grid and
instruments the evolution with relative entropies, their dissipation, and
the min/max density ratio bounds, which is how the package's convergence
claims are verified numerically.

Discretization choices: kernel rows are normalized against a padded grid
(pure quadrature-error removal), while mass proposed outside the box stays
removed and is absorbed by the rejection self-loop, so every proposal row
satisfies (in-box mass) + (clipped deficit) = 1 to float accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import METROPOLIS_MIN, AcceptanceFunction
from .kernels import InteractionKernel

__all__ = [
    "GridGeometry",
    "GridDensity",
    "grid_geometry",
    "make_grid_density",
    "uniform_grid_density",
    "two_bump_density_1d",
    "ConvolutionGridProposal",
    "DegenerateGridProposal",
    "LinearGridProposal",
    "transition_operator",
    "pde_evolve",
    "MeanFieldTrace",
    "entropy",
    "dissipation",
    "min_max_ratio",
    "check_micro_reversibility_grid",
    "fit_decay_rate",
]


@dataclass(frozen=True)
class GridGeometry:
    lower: np.ndarray
    upper: np.ndarray
    shape: tuple

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def steps(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    def centers(self) -> np.ndarray:
        """(C, dim) cell centers in row-major order."""
        axes = [
            self.lower[a] + self.steps[a] * (np.arange(self.shape[a]) + 0.5)
            for a in range(self.dim)
        ]
        if self.dim == 1:
            return axes[0][:, None]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in grids])


def grid_geometry(cells_per_axis: int, dim: int = 1, lower=None, upper=None) -> GridGeometry:
    lower = np.zeros(dim) if lower is None else np.asarray(lower, dtype=np.float64)
    upper = np.ones(dim) if upper is None else np.asarray(upper, dtype=np.float64)
    return GridGeometry(lower, upper, (cells_per_axis,) * dim)


@dataclass
class GridDensity:
    """Nonnegative cell densities summing to one against the cell volume."""

    geometry: GridGeometry
    values: np.ndarray

    def mass(self) -> float:
        return float(self.values.sum() * self.geometry.cell_volume)

    def check(self, tol: float = 1e-12) -> None:
        if np.any(self.values < 0):
            raise ValueError("grid density has negative cells")
        if abs(self.mass() - 1.0) > tol:
            raise ValueError(f"grid density mass {self.mass()} != 1")


def make_grid_density(geometry: GridGeometry, values, normalize: bool = True) -> GridDensity:
    v = np.asarray(values, dtype=np.float64).ravel().copy()
    if v.shape[0] != geometry.n_cells:
        raise ValueError("values do not match the grid")
    if np.any(v < 0):
        raise ValueError("grid density values must be nonnegative")
    if normalize:
        total = v.sum() * geometry.cell_volume
        if total <= 0:
            raise ValueError("grid density has no mass")
        v = v / total
    return GridDensity(geometry, v)


def uniform_grid_density(geometry: GridGeometry) -> GridDensity:
    span = float(np.prod(geometry.upper - geometry.lower))
    return GridDensity(geometry, np.full(geometry.n_cells, 1.0 / span))


def two_bump_density_1d(geometry: GridGeometry) -> GridDensity:
    """Smooth bimodal benchmark density on [0, 1]."""
    x = geometry.centers()[:, 0]
    vals = 0.5 * np.exp(-0.5 * ((x - 0.3) / 0.12) ** 2) + 0.5 * np.exp(
        -0.5 * ((x - 0.7) / 0.12) ** 2
    )
    return make_grid_density(geometry, vals)


def _axis_quadrature_weights(geometry: GridGeometry, kernel: InteractionKernel):
    """Per-source normalizers q_z = sum over a padded grid of K(y - z) v.

    Dividing by q removes midpoint-quadrature error without touching the
    genuinely clipped (outside-the-box) mass.
    """
    h = geometry.steps
    if kernel.kind == "gaussian":
        # separable: q_z = prod_axis q1d_axis(z_axis)
        factors = []
        for a in range(geometry.dim):
            g = geometry.shape[a]
            pad = int(math.ceil(kernel.support_radius() / h[a])) + 1
            cz = geometry.lower[a] + h[a] * (np.arange(g) + 0.5)
            cy = geometry.lower[a] + h[a] * (np.arange(-pad, g + pad) + 0.5)
            diff = (cy[:, None] - cz[None, :]) / kernel.scale
            k1 = np.exp(-0.5 * diff * diff) / (kernel.scale * math.sqrt(2 * math.pi))
            factors.append(k1.sum(axis=0) * h[a])
        if geometry.dim == 1:
            return factors[0]
        q = factors[0][:, None] * factors[1][None, :]
        return q.ravel()
    # uniform ball: direct neighborhood sum over integer offsets
    coef = kernel.coef(geometry.dim)
    r2 = kernel.scale**2
    pads = [int(math.ceil(kernel.scale / h[a])) + 1 for a in range(geometry.dim)]
    offsets = np.meshgrid(*[np.arange(-p, p + 1) for p in pads], indexing="ij")
    offs = np.column_stack([o.ravel() for o in offsets]).astype(np.float64) * h
    d2 = np.sum(offs * offs, axis=1)
    count = np.sum(d2 < r2)
    return np.full(geometry.n_cells, coef * count * geometry.cell_volume)


def _kernel_matrix(geometry: GridGeometry, kernel: InteractionKernel) -> np.ndarray:
    """Kmat[y, z] = K(c_y - c_z) / q_z over in-box cells (columns sum to the
    analytic in-box mass after multiplying by the cell volume)."""
    centers = geometry.centers()
    diff = centers[:, None, :] - centers[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    if kernel.kind == "gaussian":
        k = np.exp(-d2 * (0.5 / kernel.scale**2)) * kernel.coef(geometry.dim)
    else:
        k = np.where(d2 < kernel.scale**2, kernel.coef(geometry.dim), 0.0)
    return k / _axis_quadrature_weights(geometry, kernel)[None, :]


class GridProposal:
    """Discretized proposal density over cell pairs.

    ``rows(f)`` returns the density values Theta_f(y|x): a (C,) vector when
    the family does not depend on the conditioning cell, else a (C, C)
    matrix with x indexing rows.
    """

    kind = "grid"
    x_independent = True

    def rows(self, f: GridDensity):
        raise NotImplementedError

    def row_mass_and_deficit(self, f: GridDensity):
        """In-box proposal mass per conditioning cell and the clipped
        remainder absorbed by the rejection self-loop."""
        theta = self.rows(f)
        v = f.geometry.cell_volume
        if self.x_independent:
            mass = float(theta.sum() * v) * np.ones(f.geometry.n_cells)
        else:
            mass = theta.sum(axis=1) * v
        return mass, 1.0 - mass


class ConvolutionGridProposal(GridProposal):
    """Theta_f(y|x) = (K * f)(y): smooth the current density."""

    kind = "convolution"
    x_independent = True

    def __init__(self, geometry: GridGeometry, kernel: InteractionKernel):
        self.kernel = kernel
        self._kmat = _kernel_matrix(geometry, kernel)

    def rows(self, f: GridDensity):
        return self._kmat @ (f.values * f.geometry.cell_volume)


class DegenerateGridProposal(GridProposal):
    """Theta_f(y|x) = f(y): the small-kernel limit of the convolution."""

    kind = "degenerate"
    x_independent = True

    def rows(self, f: GridDensity):
        return f.values


class LinearGridProposal(GridProposal):
    """Theta(y|x) = K(y - x): the classical fixed random-walk kernel."""

    kind = "linear"
    x_independent = False

    def __init__(self, geometry: GridGeometry, kernel: InteractionKernel):
        self.kernel = kernel
        kmat = _kernel_matrix(geometry, kernel)
        # rows indexed by the conditioning cell x: Theta[x, y] = K(y-x)/q_x
        self._theta = np.ascontiguousarray(kmat.T)

    def rows(self, f: GridDensity):
        return self._theta


def _flux_matrix(proposal: GridProposal, f: GridDensity, pi: GridDensity,
                 h: AcceptanceFunction) -> np.ndarray:
    """F[x, y] = pi(x) Theta_f(y|x) h(alpha_f(x, y)).

    Micro-reversibility makes F symmetric; for h = min(1, u) it is computed
    as an elementwise min of A and A^T, which is exactly symmetric in
    floating point.
    """
    theta = proposal.rows(f)
    if proposal.x_independent:
        A = pi.values[:, None] * theta[None, :]
    else:
        A = pi.values[:, None] * theta
    if h.kind == "metropolis_min":
        return np.minimum(A, A.T)
    At = A.T
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(A > 0, At / np.where(A > 0, A, 1.0), 0.0)
    F = np.where(A > 0, A * h.h(alpha), 0.0)
    return F


def transition_operator(f: GridDensity, proposal: GridProposal, pi: GridDensity,
                        h: AcceptanceFunction = METROPOLIS_MIN) -> GridDensity:
    """One application of the discrete transition operator.

    Mass is conserved exactly (drift beyond 1e-10 aborts, smaller drift is
    renormalized away); cells more negative than -1e-12 abort.
    """
    v = f.geometry.cell_volume
    F = _flux_matrix(proposal, f, pi, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = f.values / pi.values
    new = f.values + (F @ r - r * F.sum(axis=1)) * v
    neg = new.min()
    if neg < -1e-12:
        raise RuntimeError(f"transition operator produced a negative cell ({neg:.3e}); "
                           "discretization bug")
    new = np.maximum(new, 0.0)
    mass = new.sum() * v
    if abs(mass - 1.0) > 1e-10:
        raise RuntimeError(f"transition operator mass drift {mass - 1.0:.3e}")
    return GridDensity(f.geometry, new / mass)


def entropy(f: GridDensity, pi: GridDensity, phi_kind: str = "chi2") -> float:
    """Relative entropy sum pi(x) phi(f(x)/pi(x)) v; phi is 0.5|s-1|^2 for
    "chi2" and s log s - s + 1 for "kl"."""
    s = f.values / pi.values
    if phi_kind == "chi2":
        phi = 0.5 * (s - 1.0) ** 2
    elif phi_kind == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            xlogx = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)
        phi = xlogx - s + 1.0
    else:
        raise ValueError("phi_kind must be 'chi2' or 'kl'")
    return float(np.sum(pi.values * phi) * f.geometry.cell_volume)


def _phi_prime(s: np.ndarray, phi_kind: str) -> np.ndarray:
    if phi_kind == "chi2":
        return s - 1.0
    with np.errstate(divide="ignore"):
        return np.log(s)


def dissipation(f: GridDensity, pi: GridDensity, proposal: GridProposal,
                h: AcceptanceFunction = METROPOLIS_MIN, phi_kind: str = "chi2") -> float:
    """Entropy production rate: (1/2) sum_{x,y} F (r_x - r_y)(phi'(r_x) -
    phi'(r_y)) v^2, nonnegative by convexity of phi."""
    v = f.geometry.cell_volume
    F = _flux_matrix(proposal, f, pi, h)
    r = f.values / pi.values
    dr = r[:, None] - r[None, :]
    p = _phi_prime(r, phi_kind)
    dp = p[:, None] - p[None, :]
    return float(0.5 * np.sum(F * dr * dp) * v * v)


def min_max_ratio(f: GridDensity, pi: GridDensity) -> tuple[float, float]:
    r = f.values / pi.values
    return float(r.min()), float(r.max())


def check_micro_reversibility_grid(proposal: GridProposal, pi: GridDensity,
                                   h: AcceptanceFunction = METROPOLIS_MIN,
                                   f: Optional[GridDensity] = None) -> float:
    """Max relative violation of pi(x) W_f(x->y) = pi(y) W_f(y->x), with the
    jump rates W computed directly from the proposal rows and h."""
    f = f or pi
    theta = proposal.rows(f)
    if proposal.x_independent:
        theta = np.broadcast_to(theta[None, :], (pi.values.size, theta.size))
    A = pi.values[:, None] * theta  # pi(x) Theta(y|x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        alpha = np.where(A > 0, A.T / np.where(A > 0, A, 1.0), 0.0)
        flux = np.where(A > 0, A * h.h(alpha), 0.0)
    scale = max(float(np.max(np.abs(flux))), np.finfo(float).tiny)
    return float(np.max(np.abs(flux - flux.T)) / scale)


@dataclass
class MeanFieldTrace:
    times: np.ndarray
    chi2: np.ndarray
    kl: np.ndarray
    min_ratio: np.ndarray
    max_ratio: np.ndarray
    dissipation: np.ndarray
    densities: list = field(default_factory=list)


def pde_evolve(f0: GridDensity, proposal: GridProposal, pi: GridDensity,
               h: AcceptanceFunction = METROPOLIS_MIN, dt: float = 1.0,
               n_steps: int = 100, keep_densities: bool = False,
               dissipation_kind: str = "chi2") -> MeanFieldTrace:
    """Forward-Euler evolution f <- f + dt (T(f) - f).

    dt = 1 recovers the discrete iteration f <- T(f); any dt in (0, 1]
    keeps positivity because the step is a convex combination.  Both
    entropies are always recorded; ``dissipation_kind`` selects the phi
    whose production rate goes into the dissipation column.
    """
    if not 0.0 < dt <= 1.0:
        raise ValueError("dt must lie in (0, 1]")
    rows = []
    f = f0
    densities = [f0] if keep_densities else []
    for step in range(n_steps + 1):
        mn, mx = min_max_ratio(f, pi)
        rows.append((step * dt, entropy(f, pi, "chi2"), entropy(f, pi, "kl"),
                     mn, mx, dissipation(f, pi, proposal, h, dissipation_kind)))
        if step == n_steps:
            break
        tf = transition_operator(f, proposal, pi, h)
        if dt == 1.0:
            f = tf
        else:
            f = GridDensity(f.geometry, (1.0 - dt) * f.values + dt * tf.values)
        if keep_densities:
            densities.append(f)
    arr = np.array(rows)
    return MeanFieldTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
                          arr[:, 5], densities)


def fit_decay_rate(times, values, floor: float = 1e-8,
                   ceiling_fraction: float = 0.5) -> float:
    """Least-squares exponential rate over the window where the series lies
    in [floor, values[0] * ceiling_fraction]."""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    mask = (v >= floor) & (v <= v[0] * ceiling_fraction) & (v > 0)
    if mask.sum() < 2:
        raise ValueError("not enough points in the fitting window")
    slope = np.polyfit(t[mask], np.log(v[mask]), 1)[0]
    return float(-slope)
