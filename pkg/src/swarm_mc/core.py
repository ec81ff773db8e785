"""The particle-swarm step engine and run loop.

One step freezes the proposal's swarm-dependent state against the current
empirical measure, draws one proposal per particle, and accepts each
independently with probability h(acceptance ratio).  The whole acceptance
path works in the log domain; the ratio is exponentiated only inside h.

Randomness contract: every step derives a counter-based stream from
(run seed, iteration) and draws all variates in a canonical order given by
the particle identity array, so results are reproducible, independent of
worker count, and invariant to slot permutations of the swarm.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import diagnostics as diag
from .errors import ConfigError, NumericError, ProposalDensityError
from .proposals import Proposal, proposal_from_spec
from .targets import TargetDensity, rejection_sample, target_from_spec

__all__ = [
    "AcceptanceFunction",
    "METROPOLIS_MIN",
    "BARKER",
    "acceptance_from_callable",
    "ParticleSwarm",
    "initialize_swarm",
    "log_acceptance_ratio",
    "StepTrace",
    "cmc_step",
    "RunConfig",
    "DiagnosticsRecord",
    "RunResult",
    "run_chain",
]

# stream tags for deriving independent generators from one run seed
_STREAM_STEP = 0
_STREAM_INIT = 1
_STREAM_REFERENCE = 2


def _stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), stream, index])
    return np.random.Generator(np.random.Philox(ss))


def derived_seed(seed: int, stream: int, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(seed), stream, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class AcceptanceFunction:
    """Nondecreasing h: [0, inf) -> [0, 1] with u*h(1/u) = h(u).

    ``log_h`` maps log u to log h(u) and is the form used on the sampling
    path.
    """

    kind: str
    h: Callable[[np.ndarray], np.ndarray]
    log_h: Callable[[np.ndarray], np.ndarray]


METROPOLIS_MIN = AcceptanceFunction(
    "metropolis_min",
    lambda u: np.minimum(1.0, u),
    lambda lu: np.minimum(0.0, lu),
)

BARKER = AcceptanceFunction(
    "barker",
    lambda u: u / (1.0 + u),
    lambda lu: -np.logaddexp(0.0, -lu),
)


def acceptance_from_callable(h: Callable, kind: str = "custom") -> AcceptanceFunction:
    def log_h(lu):
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(h(np.exp(lu)))

    return AcceptanceFunction(kind, h, log_h)


@dataclass
class ParticleSwarm:
    """N particle positions plus the state needed to advance them."""

    positions: np.ndarray  # (N, d)
    iteration: int
    seed: int
    ids: np.ndarray = None  # (N,) particle identities; default 0..N-1

    def __post_init__(self):
        self.positions = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if self.positions.ndim != 2:
            raise ValueError("positions must be (N, d)")
        if self.ids is None:
            self.ids = np.arange(self.positions.shape[0], dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (self.positions.shape[0],):
            raise ValueError("ids must be a length-N vector")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def initialize_swarm(n: int, dim: int, seed: int, scheme: str = "corner",
                     lower=None, upper=None) -> ParticleSwarm:
    """Seeded initial swarm.

    "corner" places particles in the top-corner tenth of the box,
    lower + span*(0.9 + 0.1*U) with U ~ Uniform([0,1]^d) -- a deliberately
    poor start.  "uniform" draws uniformly over the box.
    """
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be >= 1")
    lower = np.zeros(dim) if lower is None else np.asarray(lower, dtype=np.float64)
    upper = np.ones(dim) if upper is None else np.asarray(upper, dtype=np.float64)
    span = upper - lower
    rng = _stream_rng(seed, _STREAM_INIT)
    u = rng.random((n, dim))
    if scheme == "corner":
        pos = lower + span * (0.9 + 0.1 * u)
    elif scheme == "uniform":
        pos = lower + span * u
    else:
        raise ValueError(f"unknown initialization scheme {scheme!r}")
    return ParticleSwarm(pos, iteration=0, seed=int(seed))


def _canonical_order(swarm: ParticleSwarm) -> np.ndarray:
    return np.argsort(swarm.ids, kind="stable")


def _log_alpha_from_parts(log_pi_x, log_pi_y, log_fwd, log_rev) -> np.ndarray:
    """log alpha = [log pi(y) - log pi(x)] - [log Theta(y|x) - log Theta(x|y)],
    with the -inf cases resolved without NaN:

    * pi(y) = 0            -> -inf (auto-reject outside the support)
    * Theta(x|y) = 0       -> -inf (reverse move impossible)
    * Theta(y|x) = 0 only  -> +inf (the move is never proposed; accepting
                              keeps micro-reversibility since both fluxes
                              vanish)
    * both Theta zero      -> -inf by convention (both fluxes vanish)
    """
    log_pi_y = np.asarray(log_pi_y, dtype=np.float64)
    out = np.full(log_pi_y.shape, -np.inf)
    fwd_zero = np.isneginf(log_fwd)
    rev_zero = np.isneginf(log_rev)
    ok = ~np.isneginf(log_pi_y) & ~rev_zero
    regular = ok & ~fwd_zero
    out[regular] = (
        (log_pi_y[regular] - np.asarray(log_pi_x)[regular])
        - (np.asarray(log_fwd)[regular] - np.asarray(log_rev)[regular])
    )
    out[ok & fwd_zero] = np.inf
    return out


def _check_forward_density(proposal: Proposal, log_fwd: np.ndarray, in_support) -> None:
    bad = np.isnan(log_fwd) | np.isposinf(log_fwd)
    if proposal.positive_density:
        bad |= np.isneginf(log_fwd) & in_support
    if np.any(bad):
        raise ProposalDensityError(
            f"proposal {proposal.name!r} returned a non-finite log density at "
            f"{int(np.sum(bad))} in-support point(s); broken proposal or kernel"
        )


def log_acceptance_ratio(x, y, proposal: Proposal, target: TargetDensity,
                         swarm: ParticleSwarm, state=None):
    """Log acceptance ratio for a single (x, y) pair (or batches of pairs)
    against the swarm's frozen empirical measure."""
    order = _canonical_order(swarm)
    positions = np.ascontiguousarray(swarm.positions[order])
    if state is None:
        state = proposal.refresh(positions, target)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    log_pi_x = np.atleast_1d(target.log_density(x))
    log_pi_y = np.atleast_1d(target.log_density(y))
    if np.any(np.isneginf(log_pi_x)):
        raise ValueError("x must lie inside the target support")
    log_fwd = np.atleast_1d(proposal.log_density(state, y, x))
    log_rev = np.atleast_1d(proposal.log_density(state, x, y))
    _check_forward_density(proposal, log_fwd, target.inside(y))
    out = _log_alpha_from_parts(log_pi_x, log_pi_y, log_fwd, log_rev)
    return float(out[0]) if out.size == 1 else out


@dataclass
class StepTrace:
    """Per-particle record of one step (importance-sampling output).

    ``log_weights`` holds log W_i = log pi(Y_i) - log Theta(Y_i | X_i) for
    every particle, accepted or not.
    """

    iteration: int
    proposals: np.ndarray
    log_weights: np.ndarray
    accepted: np.ndarray
    log_alpha: np.ndarray
    acceptance_rate: float
    kernel_choice: Optional[np.ndarray] = None
    mixture_weights: Optional[np.ndarray] = None


def cmc_step(swarm: ParticleSwarm, proposal: Proposal, target: TargetDensity,
             accept: AcceptanceFunction = METROPOLIS_MIN) -> tuple[ParticleSwarm, StepTrace]:
    """Advance every particle once against the frozen empirical measure."""
    order = _canonical_order(swarm)
    X = np.ascontiguousarray(swarm.positions[order])
    n = X.shape[0]
    rng = _stream_rng(swarm.seed, _STREAM_STEP, swarm.iteration)

    state = proposal.refresh(X, target)
    Y = np.ascontiguousarray(proposal.sample(state, X, rng))
    log_u = np.log(rng.random(n))

    log_pi_x = target.log_density(X)
    if np.any(~np.isfinite(log_pi_x)):
        raise NumericError(swarm.iteration, "swarm contains particles outside the support")
    log_pi_y = target.log_density(Y)
    log_fwd = proposal.log_density(state, Y, X)
    log_rev = proposal.log_density(state, X, Y)
    _check_forward_density(proposal, log_fwd, target.inside(Y))

    log_alpha = _log_alpha_from_parts(log_pi_x, log_pi_y, log_fwd, log_rev)
    with np.errstate(invalid="ignore"):
        log_h = accept.log_h(log_alpha)
    accepted = (log_u <= log_h) & ~np.isneginf(log_h)
    X_new = np.where(accepted[:, None], Y, X)
    if not np.all(np.isfinite(X_new)):
        raise NumericError(swarm.iteration, "non-finite particle position produced")
    log_w = log_pi_y - log_fwd

    proposal.end_iteration(state, log_alpha)

    # scatter canonical results back to slot order
    positions = np.empty_like(X_new)
    positions[order] = X_new

    def unscatter(a):
        out = np.empty_like(a)
        out[order] = a
        return out

    choice = getattr(state, "kernel_choice", None)
    if choice is None:  # exploration wrapper keeps it on the wrapped state
        choice = getattr(getattr(state, "base_state", None), "kernel_choice", None)
    trace = StepTrace(
        iteration=swarm.iteration,
        proposals=unscatter(Y),
        log_weights=unscatter(log_w),
        accepted=unscatter(accepted),
        log_alpha=unscatter(log_alpha),
        acceptance_rate=float(np.mean(accepted)),
        kernel_choice=unscatter(choice) if choice is not None else None,
        mixture_weights=proposal.weights_snapshot(),
    )
    new_swarm = ParticleSwarm(positions, swarm.iteration + 1, swarm.seed, swarm.ids.copy())
    return new_swarm, trace


@dataclass
class DiagnosticsRecord:
    iteration: int
    acceptance_rate: float
    energy_distance: float
    ess: float
    log_normalizer: float
    mixture_weights: Optional[tuple] = None


@dataclass
class RunConfig:
    """Validated run configuration (see README for the JSON schema)."""

    target: object
    proposal: dict
    n_particles: int
    n_iterations: int
    seed: int
    diagnostics_every: int = 1
    init: str = "corner"
    reference_size: Optional[int] = None

    @staticmethod
    def from_dict(d: dict, seed_override: Optional[int] = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "must be a JSON object")

        def need(name):
            if name not in d:
                raise ConfigError(name, "missing")
            return d[name]

        target = need("target")
        proposal = need("proposal")
        try:
            n_particles = int(need("n_particles"))
            n_iterations = int(need("n_iterations"))
        except (TypeError, ValueError):
            raise ConfigError("n_particles/n_iterations", "must be integers") from None
        seed = seed_override if seed_override is not None else d.get("seed")
        if seed is None:
            raise ConfigError("seed", "missing (set it in the config or pass --seed)")
        cfg = RunConfig(
            target=target,
            proposal=proposal,
            n_particles=n_particles,
            n_iterations=n_iterations,
            seed=int(seed),
            diagnostics_every=int(d.get("diagnostics_every", 1)),
            init=d.get("init", "corner"),
            reference_size=(int(d["reference_size"]) if "reference_size" in d else None),
        )
        if cfg.n_particles < 1:
            raise ConfigError("n_particles", "must be >= 1")
        if cfg.n_iterations < 0:
            raise ConfigError("n_iterations", "must be >= 0")
        if cfg.diagnostics_every < 1:
            raise ConfigError("diagnostics_every", "must be >= 1")
        if cfg.init not in ("corner", "uniform"):
            raise ConfigError("init", "must be 'corner' or 'uniform'")
        # fail fast on malformed target/proposal specs
        try:
            target_from_spec(cfg.target)
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("target", str(e)) from None
        proposal_from_spec(cfg.proposal)
        return cfg


@dataclass
class RunResult:
    records: list
    z_series: np.ndarray  # columns: iteration, log_z, ess
    swarm: ParticleSwarm
    reference: Optional[np.ndarray]
    traces: Optional[list] = None


def _atomic_write(path: str, data: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(data)
    os.replace(tmp, path)


def _write_diagnostics_csv(path: str, records, n_weights: int) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["iter", "acc_rate", "energy_dist", "ess", "log_z"]
    header += [f"w{i}" for i in range(n_weights)]
    writer.writerow(header)
    for r in records:
        row = [r.iteration, repr(r.acceptance_rate), repr(r.energy_distance),
               repr(r.ess), repr(r.log_normalizer)]
        if n_weights:
            w = r.mixture_weights or (float("nan"),) * n_weights
            row += [repr(float(x)) for x in w]
        writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def _write_z_csv(path: str, z_series: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["iter", "log_z", "ess"])
    for it, log_z, ess in z_series:
        writer.writerow([int(it), repr(float(log_z)), repr(float(ess))])
    _atomic_write(path, buf.getvalue())


def _write_swarm_json(path: str, swarm: ParticleSwarm) -> None:
    payload = {
        "n": swarm.n,
        "dim": swarm.dim,
        "iteration": swarm.iteration,
        "seed": swarm.seed,
        "positions": swarm.positions.tolist(),
    }
    _atomic_write(path, json.dumps(payload))


def run_chain(config: RunConfig, out_dir: Optional[str] = None, svg: bool = False,
              keep_traces: bool = False) -> RunResult:
    """Run T steps, collecting diagnostics at the configured cadence.

    Deterministic for a fixed config: reruns produce bit-identical artifact
    files.  A NaN particle position aborts with the offending iteration.
    """
    target = target_from_spec(config.target)
    proposal = proposal_from_spec(config.proposal)
    swarm = initialize_swarm(config.n_particles, target.dim, config.seed,
                             scheme=config.init, lower=target.lower, upper=target.upper)
    ref_size = config.reference_size or config.n_particles
    reference = rejection_sample(target, ref_size,
                                 derived_seed(config.seed, _STREAM_REFERENCE))

    def make_record(it, trace, positions):
        ed = diag.energy_distance(positions, reference)
        if trace is None:
            return DiagnosticsRecord(it, float("nan"), ed, float("nan"), float("nan"))
        est = diag.is_estimates(trace)
        w = trace.mixture_weights
        return DiagnosticsRecord(it, trace.acceptance_rate, ed, est.ess,
                                 est.log_normalizer,
                                 tuple(float(x) for x in w) if w is not None else None)

    records = [make_record(0, None, swarm.positions)]
    z_rows = []
    traces = [] if keep_traces else None
    frames = []
    for t in range(config.n_iterations):
        swarm, trace = cmc_step(swarm, proposal, target)
        est = diag.is_estimates(trace)
        z_rows.append((swarm.iteration, est.log_normalizer, est.ess))
        if traces is not None:
            traces.append(trace)
        if swarm.iteration % config.diagnostics_every == 0 or t == config.n_iterations - 1:
            records.append(make_record(swarm.iteration, trace, swarm.positions))
            if svg and target.dim == 2:
                frames.append((swarm.iteration, swarm.positions.copy()))

    z_series = np.array(z_rows) if z_rows else np.empty((0, 3))
    result = RunResult(records, z_series, swarm, reference, traces)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        n_weights = max((len(r.mixture_weights) for r in records
                         if r.mixture_weights is not None), default=0)
        _write_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), records, n_weights)
        _write_z_csv(os.path.join(out_dir, "z_estimates.csv"), z_series)
        _write_swarm_json(os.path.join(out_dir, "swarm_final.json"), swarm)
        from . import report

        report.run_figure(records, os.path.join(out_dir, "diagnostics.png"))
        if svg and target.dim == 2:
            frame_dir = os.path.join(out_dir, "frames")
            os.makedirs(frame_dir, exist_ok=True)
            for it, pos in frames:
                report.scatter_frame(pos, target,
                                     os.path.join(frame_dir, f"iter_{it}.svg"),
                                     title=f"iteration {it}")
    return result
