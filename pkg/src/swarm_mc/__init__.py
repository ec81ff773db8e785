"""Interacting-particle Monte Carlo samplers with collective proposals."""

from .core import (
    BARKER,
    METROPOLIS_MIN,
    AcceptanceFunction,
    DiagnosticsRecord,
    ParticleSwarm,
    RunConfig,
    RunResult,
    StepTrace,
    acceptance_from_callable,
    cmc_step,
    initialize_swarm,
    log_acceptance_ratio,
    run_chain,
)
from .diagnostics import Baseline, energy_distance, iid_baseline, is_estimates, mse_logz
from .errors import ConfigError, NumericError, ProposalDensityError
from .kernels import (
    InteractionKernel,
    KernelSumPlan,
    gaussian_kernel,
    kernel_sum,
    log_kernel_density,
    pairwise_distance_sum,
    set_num_threads,
    uniform_ball_kernel,
)
from .proposals import (
    BgkProposal,
    ExplorationMixture,
    KidsProposal,
    MokaProposal,
    Proposal,
    RandomWalkProposal,
    VanillaProposal,
    bgk_moments,
    kids_weights,
    moka_weights_adaptive,
    moka_weights_markov,
    proposal_from_spec,
)
from .targets import (
    TargetDensity,
    banana3,
    cauchy_mix,
    gauss8,
    mixture_target,
    rejection_sample,
    target_from_spec,
    uniform_box,
)

__version__ = "0.1.0"
