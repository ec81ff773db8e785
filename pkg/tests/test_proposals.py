import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp, softmax

import swarm_mc as sm
from swarm_mc.core import BARKER, METROPOLIS_MIN, _log_alpha_from_parts
from swarm_mc.errors import ConfigError
from swarm_mc.kernels import kernel_sum
from swarm_mc.proposals import (
    BgkProposal,
    ExplorationMixture,
    KidsProposal,
    MokaProposal,
    RandomWalkProposal,
    VanillaProposal,
    _moka_objective,
    bgk_moments,
    kids_surrogate,
    kids_weights,
    moka_weights_adaptive,
    moka_weights_markov,
    proposal_from_spec,
)


def swarm_positions(n, d, seed, corner=False):
    rng = np.random.default_rng(seed)
    pos = rng.random((n, d))
    return 0.9 + 0.1 * pos if corner else pos


def micro_reversibility_violation(family, target, positions, n_pairs=50, seed=0,
                                  accept=METROPOLIS_MIN):
    """Max absolute log-domain violation of
    pi(x) Theta(y|x) h(a(x,y)) = pi(y) Theta(x|y) h(a(y,x))."""
    rng = np.random.default_rng(seed)
    d = positions.shape[1]
    x = rng.random((n_pairs, d))
    y = rng.random((n_pairs, d))
    state = family.refresh(positions, target)
    lpx, lpy = target.log_density(x), target.log_density(y)
    lf = family.log_density(state, y, x)
    lr = family.log_density(state, x, y)
    la_xy = _log_alpha_from_parts(lpx, lpy, lf, lr)
    la_yx = _log_alpha_from_parts(lpy, lpx, lr, lf)
    lhs = lpx + lf + accept.log_h(la_xy)
    rhs = lpy + lr + accept.log_h(la_yx)
    both_zero = np.isneginf(lhs) & np.isneginf(rhs)
    with np.errstate(invalid="ignore"):  # -inf minus -inf where both sides vanish
        return float(np.max(np.where(both_zero, 0.0, np.abs(lhs - rhs))))


def all_families(target_dim=2):
    return [
        RandomWalkProposal(sm.uniform_ball_kernel(0.15)),
        VanillaProposal(sm.gaussian_kernel(0.1)),
        VanillaProposal(sm.uniform_ball_kernel(0.2)),
        MokaProposal([sm.uniform_ball_kernel(0.05), sm.uniform_ball_kernel(0.25)], "markov"),
        MokaProposal([sm.gaussian_kernel(0.08), sm.gaussian_kernel(0.3)], "adaptive"),
        KidsProposal(sm.gaussian_kernel(0.12), rl_iters=15),
        BgkProposal(sm.uniform_ball_kernel(0.35)),
        ExplorationMixture(VanillaProposal(sm.uniform_ball_kernel(0.1)), 0.05, 0.3),
    ]


class TestMicroReversibility:
    @pytest.mark.parametrize("accept", [METROPOLIS_MIN, BARKER], ids=["min", "barker"])
    def test_all_families(self, accept):
        target = sm.banana3()
        positions = swarm_positions(64, 2, seed=1)
        for fam in all_families():
            v = micro_reversibility_violation(fam, target, positions, accept=accept)
            assert v <= 1e-12, f"{fam.name}: {v}"


class TestRandomWalk:
    def test_density_symmetric_exact(self):
        fam = RandomWalkProposal(sm.gaussian_kernel(0.2))
        rng = np.random.default_rng(2)
        x, y = rng.random((2, 30, 2))
        state = fam.refresh(x, None)
        np.testing.assert_array_equal(fam.log_density(state, y, x),
                                      fam.log_density(state, x, y))

    def test_log_alpha_reduces_to_target_ratio(self):
        target = sm.banana3()
        fam = RandomWalkProposal(sm.uniform_ball_kernel(0.3))
        swarm = sm.ParticleSwarm(swarm_positions(16, 2, 3), 0, seed=1)
        rng = np.random.default_rng(4)
        x = rng.random((20, 2)) * 0.8 + 0.1
        y = x + 0.05
        la = sm.log_acceptance_ratio(x, y, fam, target, swarm)
        np.testing.assert_array_equal(la, target.log_density(y) - target.log_density(x))

    def test_sample_mean_clt(self):
        fam = RandomWalkProposal(sm.gaussian_kernel(0.2))
        x = np.tile([[0.4, 0.6]], (100_000, 1))
        rng = np.random.default_rng(5)
        y = fam.sample(None, x, rng)
        tol = 3 * 0.2 / math.sqrt(100_000)
        np.testing.assert_allclose(y.mean(axis=0), [0.4, 0.6], atol=tol)


class TestVanilla:
    def test_single_particle_equals_random_walk_density(self):
        x0 = np.array([[0.3, 0.4]])
        van = VanillaProposal(sm.gaussian_kernel(0.15))
        rw = RandomWalkProposal(sm.gaussian_kernel(0.15))
        state = van.refresh(x0, None)
        rng = np.random.default_rng(6)
        y = rng.random((40, 2))
        np.testing.assert_allclose(van.log_density(state, y, None),
                                   rw.log_density(None, y, np.tile(x0, (40, 1))),
                                   rtol=1e-12)

    def test_histogram_ks_against_mixture_cdf(self):
        # proposals from a frozen 2-particle swarm follow the closed-form
        # half/half Gaussian mixture
        positions = np.array([[0.2], [0.7]])
        fam = VanillaProposal(sm.gaussian_kernel(0.1))
        state = fam.refresh(positions, None)
        rng = np.random.default_rng(7)
        draws = fam.sample(state, np.zeros((100_000, 1)), rng)[:, 0]

        def cdf(x):
            return 0.5 * stats.norm.cdf(x, 0.2, 0.1) + 0.5 * stats.norm.cdf(x, 0.7, 0.1)

        assert stats.kstest(draws, cdf).pvalue > 0.01

    def test_density_is_explicit_average(self):
        rng = np.random.default_rng(8)
        positions = rng.random((15, 2))
        fam = VanillaProposal(sm.gaussian_kernel(0.2))
        state = fam.refresh(positions, None)
        y = rng.random((9, 2))
        want = np.log(np.mean(
            np.exp(fam.kernel.log_density(y[:, None, :] - positions[None, :, :])), axis=1))
        np.testing.assert_allclose(fam.log_density(state, y, None), want, rtol=1e-12)

    def test_density_independent_of_conditioning_point(self):
        rng = np.random.default_rng(9)
        positions = rng.random((20, 2))
        for fam in [VanillaProposal(sm.uniform_ball_kernel(0.2)),
                    MokaProposal([sm.uniform_ball_kernel(0.1)], "markov"),
                    KidsProposal(sm.gaussian_kernel(0.1), rl_iters=5),
                    BgkProposal(sm.uniform_ball_kernel(0.4))]:
            state = fam.refresh(positions, sm.banana3())
            y = rng.random((12, 2))
            a = fam.log_density(state, y, rng.random((12, 2)))
            b = fam.log_density(state, y, rng.random((12, 2)))
            np.testing.assert_array_equal(a, b)


class _Target1D:
    dim = 1
    lower = np.zeros(1)
    upper = np.ones(1)

    def __init__(self, loc=0.4, scale=0.15):
        self.loc, self.scale = loc, scale

    def log_density(self, pts):
        pts = np.atleast_2d(pts)
        return -0.5 * ((pts[:, 0] - self.loc) / self.scale) ** 2

    def diameter(self):
        return 1.0


class TestMokaWeightsMarkov:
    def test_single_kernel(self):
        w = moka_weights_markov(swarm_positions(20, 1, 10), [sm.gaussian_kernel(0.1)],
                                _Target1D())
        np.testing.assert_array_equal(w, [1.0])

    def test_identical_kernels_tie_breaks_uniform(self):
        w = moka_weights_markov(swarm_positions(30, 1, 11),
                                [sm.gaussian_kernel(0.1)] * 2, _Target1D())
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)

    def test_matches_grid_search_oracle(self):
        # brute-force sweep of the same objective at resolution 1e-3
        positions = swarm_positions(50, 1, 12)
        kernels = [sm.gaussian_kernel(0.05), sm.gaussian_kernel(0.25)]
        target = _Target1D()
        alpha = moka_weights_markov(positions, kernels, target)
        D = np.stack([kernel_sum(positions, positions, k, np.full(50, 1 / 50))
                      for k in kernels])
        pi_t = softmax(target.log_density(positions))
        grid = np.arange(0.0, 1.0005, 0.001)
        vals = np.array([_moka_objective(np.array([a, 1 - a]), D, pi_t) for a in grid])
        best = int(np.argmin(vals))
        assert abs(alpha[0] - grid[best]) <= 0.01
        assert _moka_objective(alpha, D, pi_t) <= vals[best] + 1e-6

    def test_certified_against_uniform_and_vertices(self):
        target = sm.banana3()
        for seed in range(4):
            positions = swarm_positions(40, 2, 20 + seed)
            kernels = [sm.uniform_ball_kernel(r) for r in (0.05, 0.15, 0.4)]
            alpha = moka_weights_markov(positions, kernels, target)
            D = np.stack([kernel_sum(positions, positions, k, np.full(40, 1 / 40))
                          for k in kernels])
            pi_t = softmax(target.log_density(positions))
            got = _moka_objective(alpha, D, pi_t)
            assert got <= _moka_objective(np.full(3, 1 / 3), D, pi_t) + 1e-12
            for p in range(3):
                assert got <= _moka_objective(np.eye(3)[p], D, pi_t) + 1e-12


class TestMokaWeightsAdaptive:
    def test_identical_ratios_uniform(self):
        w = moka_weights_adaptive(np.array([0, 1, 0, 1]), np.log([0.7] * 4), 2)
        np.testing.assert_allclose(w, [0.5, 0.5], rtol=1e-12)

    def test_empty_kernel_gets_floor(self):
        w = moka_weights_adaptive(np.array([0, 0]), np.zeros(2), 2, w_min=1e-3)
        np.testing.assert_allclose(w, [1.0 / 1.001, 1e-3 / 1.001], rtol=1e-12)

    def test_geometric_means_desk_example(self):
        # geometric means 1.0 and 0.25 with no floor give (0.8, 0.2)
        choices = np.array([0, 0, 1, 1])
        log_ratios = np.log([2.0, 0.5, 0.5, 0.125])
        w = moka_weights_adaptive(choices, log_ratios, 2, w_min=0.0)
        np.testing.assert_allclose(w, [0.8, 0.2], rtol=1e-12)

    def test_clamping_handles_infinities(self):
        w = moka_weights_adaptive(np.array([0, 1]), np.array([np.inf, -np.inf]), 2,
                                  w_min=0.0, clamp=30.0)
        assert w[0] == pytest.approx(1.0, abs=1e-10)
        assert np.isfinite(w).all()


class TestMokaProposal:
    def test_single_kernel_density_equals_vanilla(self):
        positions = swarm_positions(12, 2, 13)
        moka = MokaProposal([sm.uniform_ball_kernel(0.2)], "markov")
        van = VanillaProposal(sm.uniform_ball_kernel(0.2))
        target = sm.banana3()
        ms, vs = moka.refresh(positions, target), van.refresh(positions, target)
        y = np.random.default_rng(14).random((25, 2))
        np.testing.assert_allclose(moka.log_density(ms, y, None),
                                   van.log_density(vs, y, None), rtol=1e-12)

    def test_density_is_weighted_sum_of_vanilla_densities(self):
        positions = swarm_positions(18, 2, 15)
        kernels = [sm.uniform_ball_kernel(0.1), sm.gaussian_kernel(0.25)]
        moka = MokaProposal(kernels, "adaptive")
        state = moka.refresh(positions, None)
        y = np.random.default_rng(16).random((30, 2))
        parts = []
        for k, a in zip(kernels, state.alpha):
            v = VanillaProposal(k)
            parts.append(math.log(a) + v.log_density(v.refresh(positions, None), y, None))
        want = logsumexp(np.stack(parts), axis=0)
        np.testing.assert_allclose(moka.log_density(state, y, None), want, rtol=1e-12)

    def test_adaptive_weights_update_after_iteration(self):
        positions = swarm_positions(32, 2, 17, corner=True)
        moka = MokaProposal([sm.uniform_ball_kernel(0.05), sm.uniform_ball_kernel(0.3)],
                            "adaptive")
        target = sm.banana3()
        swarm = sm.ParticleSwarm(positions, 0, seed=3)
        np.testing.assert_allclose(moka.weights_snapshot() if moka.weights_snapshot() is not None
                                   else [0.5, 0.5], [0.5, 0.5])
        _, trace = sm.cmc_step(swarm, moka, target)
        assert trace.kernel_choice is not None
        carried = moka._carry
        assert carried.shape == (2,)
        assert abs(carried.sum() - 1.0) <= 1e-12
        assert not np.allclose(carried, [0.5, 0.5])  # ratios differ across kernels


class TestKids:
    def test_single_particle(self):
        dw = kids_weights(np.array([[0.5]]), sm.gaussian_kernel(0.1), _Target1D(), 25)
        np.testing.assert_array_equal(dw.w, [1.0])
        assert dw.rl_iterations_used == 25

    def test_zero_iterations_uniform(self):
        dw = kids_weights(swarm_positions(10, 1, 18), sm.gaussian_kernel(0.1),
                          _Target1D(), 0)
        np.testing.assert_allclose(dw.w, np.full(10, 0.1), rtol=1e-12)

    def test_surrogate_nonincreasing(self):
        positions = swarm_positions(64, 2, 19)
        target = sm.banana3()
        kernel = sm.gaussian_kernel(0.1)
        vals = [kids_surrogate(kids_weights(positions, kernel, target, s).w,
                               positions, kernel, target) for s in (0, 5, 15, 40)]
        assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))

    def test_three_point_instance_matches_grid_oracle(self):
        # interior optimum; straight enumeration of the same objective on a
        # 0.001-step simplex grid
        positions = np.array([[0.15], [0.5], [0.85]])
        kernel = sm.gaussian_kernel(0.12)
        target = _Target1D(loc=0.45, scale=0.18)
        dw = kids_weights(positions, kernel, target, 50)
        best, best_w = np.inf, None
        for w1 in np.arange(0.0, 1.0005, 0.005):
            for w2 in np.arange(0.0, 1.0005 - w1, 0.005):
                w = np.array([w1, w2, max(0.0, 1.0 - w1 - w2)])
                w = w / w.sum()
                v = kids_surrogate(w, positions, kernel, target)
                if v < best:
                    best, best_w = v, w
        assert np.max(np.abs(dw.w - best_w)) <= 0.02

    def test_uniform_weights_density_equals_vanilla(self):
        positions = swarm_positions(14, 2, 21)
        kernel = sm.uniform_ball_kernel(0.25)
        kids = KidsProposal(kernel, rl_iters=0)
        van = VanillaProposal(kernel)
        target = sm.banana3()
        y = np.random.default_rng(22).random((20, 2))
        np.testing.assert_allclose(
            kids.log_density(kids.refresh(positions, target), y, None),
            van.log_density(van.refresh(positions, target), y, None), rtol=1e-12)

    def test_degenerate_weights_density(self):
        positions = swarm_positions(6, 2, 23)
        kernel = sm.gaussian_kernel(0.2)
        fam = KidsProposal(kernel)
        state = fam.refresh(positions, _stub_target_2d())
        state.log_weights = np.full(6, -np.inf)
        state.log_weights[3] = 0.0
        y = np.random.default_rng(24).random((10, 2))
        want = kernel.log_density(y - positions[3])
        np.testing.assert_allclose(fam.log_density(state, y, None), want, rtol=1e-12)


def _stub_target_2d():
    t = sm.uniform_box(2)
    return t


class TestBgk:
    def test_two_point_hand_moments(self):
        # flat locality weights over {(0,0), (2,0)}: mean (1,0) and
        # covariance [[1,0],[0,0]] plus the jitter
        positions = np.array([[0.0, 0.0], [2.0, 0.0]])
        mom = bgk_moments(positions, sm.uniform_ball_kernel(10.0), jitter=1e-8)
        np.testing.assert_allclose(mom.means, [[1.0, 0.0], [1.0, 0.0]], atol=1e-12)
        want = np.array([[1.0 + 1e-8, 0.0], [0.0, 1e-8]])
        np.testing.assert_allclose(mom.covariances[0], want, rtol=1e-9)
        np.testing.assert_allclose(mom.covariances[1], want, rtol=1e-9)

    def test_single_particle(self):
        mom = bgk_moments(np.array([[0.3, 0.6]]), sm.uniform_ball_kernel(0.5), jitter=1e-8)
        np.testing.assert_allclose(mom.means, [[0.3, 0.6]], rtol=1e-12)
        np.testing.assert_allclose(mom.covariances[0], 1e-8 * np.eye(2), rtol=1e-9)

    def test_translation_equivariance(self):
        positions = swarm_positions(25, 2, 26)
        kernel = sm.uniform_ball_kernel(0.3)
        a = bgk_moments(positions, kernel, jitter=1e-8)
        shift = np.array([1.5, -2.25])
        b = bgk_moments(positions + shift, kernel, jitter=1e-8)
        np.testing.assert_allclose(b.means, a.means + shift, atol=1e-12)
        np.testing.assert_allclose(b.covariances, a.covariances, atol=1e-12)

    def test_single_particle_proposal_density(self):
        fam = BgkProposal(sm.uniform_ball_kernel(0.5))
        target = sm.uniform_box(2)
        x0 = np.array([[0.4, 0.5]])
        state = fam.refresh(x0, target)
        jitter = fam.jitter_factor * target.diameter() ** 2
        y = np.random.default_rng(27).random((8, 2))
        want = (-0.5 * np.sum((y - x0) ** 2, axis=1) / jitter
                - math.log(2 * math.pi * jitter))
        np.testing.assert_allclose(fam.log_density(state, y, None), want, rtol=1e-9)

    def test_density_normalization_quadrature_1d(self):
        rng = np.random.default_rng(28)
        positions = rng.random((5, 1))
        fam = BgkProposal(sm.uniform_ball_kernel(0.4))
        state = fam.refresh(positions, sm.uniform_box(1))
        grid = np.linspace(-1.0, 2.0, 6001)[:, None]
        vals = np.exp(fam.log_density(state, grid, None))
        total = np.trapezoid(vals, grid[:, 0])
        assert total == pytest.approx(1.0, abs=1e-3)


class TestExploration:
    def test_zero_prob_identical_to_base(self):
        base = VanillaProposal(sm.uniform_ball_kernel(0.2))
        fam = ExplorationMixture(base, 0.0, 0.3)
        positions = swarm_positions(10, 2, 29)
        target = sm.banana3()
        sa, sb = fam.refresh(positions, target), base.refresh(positions, target)
        y = np.random.default_rng(30).random((12, 2))
        x = np.random.default_rng(31).random((12, 2))
        np.testing.assert_array_equal(fam.log_density(sa, y, x),
                                      base.log_density(sb, y, None))

    def test_full_prob_is_symmetric_walk(self):
        base = VanillaProposal(sm.uniform_ball_kernel(0.2))
        fam = ExplorationMixture(base, 1.0, 0.3)
        positions = swarm_positions(10, 2, 32)
        state = fam.refresh(positions, sm.banana3())
        rng = np.random.default_rng(33)
        x, y = rng.random((2, 15, 2))
        np.testing.assert_array_equal(fam.log_density(state, y, x),
                                      fam.log_density(state, x, y))

    def test_density_is_mixture_formula(self):
        base = VanillaProposal(sm.gaussian_kernel(0.15))
        eps, std = 0.3, 0.4
        fam = ExplorationMixture(base, eps, std)
        positions = swarm_positions(8, 2, 34)
        target = sm.banana3()
        state = fam.refresh(positions, target)
        rng = np.random.default_rng(35)
        x, y = rng.random((2, 20, 2))
        z = (y - x) / std
        wide = -0.5 * np.sum(z * z, axis=1) - math.log(2 * math.pi * std**2)
        base_vals = base.log_density(base.refresh(positions, target), y, None)
        want = np.logaddexp(math.log(eps) + wide, math.log1p(-eps) + base_vals)
        np.testing.assert_allclose(fam.log_density(state, y, x), want, rtol=1e-12)

    def test_prob_validation(self):
        with pytest.raises(ValueError):
            ExplorationMixture(VanillaProposal(sm.gaussian_kernel(0.1)), 1.5, 0.3)


class TestProposalFromSpec:
    def test_families_constructed(self):
        assert proposal_from_spec({"family": "pmh", "radii": [0.1]}).name == "pmh"
        assert proposal_from_spec({"family": "vanilla", "sigma": 0.2}).name == "vanilla"
        moka = proposal_from_spec({"family": "moka", "radii": [0.1, 0.2],
                                   "weight_mode": "adaptive"})
        assert moka.name == "moka-adaptive"
        kids = proposal_from_spec({"family": "kids", "radii": [0.1], "kids_iters": 7})
        assert kids.rl_iters == 7
        bgk = proposal_from_spec({"family": "bgk", "bgk_threshold": 0.25})
        assert bgk.kernel.scale == 0.25

    def test_exploration_wrapping(self):
        p = proposal_from_spec({"family": "vanilla", "radii": [0.1],
                                "exploration": {"prob": 0.01, "std": 0.3}})
        assert isinstance(p, ExplorationMixture)
        p0 = proposal_from_spec({"family": "vanilla", "radii": [0.1],
                                 "exploration": {"prob": 0.0, "std": 0.3}})
        assert isinstance(p0, VanillaProposal)

    def test_errors_name_fields(self):
        with pytest.raises(ConfigError, match="proposal.family"):
            proposal_from_spec({})
        with pytest.raises(ConfigError, match="family"):
            proposal_from_spec({"family": "warp"})
        with pytest.raises(ConfigError, match="radii"):
            proposal_from_spec({"family": "vanilla", "radii": [0.1, -0.2]})
        with pytest.raises(ConfigError, match="kernels"):
            proposal_from_spec({"family": "vanilla", "radii": [0.1, 0.2]})
        with pytest.raises(ConfigError, match="exploration"):
            proposal_from_spec({"family": "pmh", "radii": [0.1],
                                "exploration": {"prob": 0.5}})
        with pytest.raises(ConfigError, match="kernels"):
            proposal_from_spec({"family": "kids", "kernels": [{"kind": "gaussian"}]})
