import math

import numpy as np
import pytest

from swarm_mc.kernels import (
    InteractionKernel,
    KernelSumPlan,
    ball_counts,
    ball_volume,
    gaussian_kernel,
    kernel_sum,
    log_kernel_density,
    pairwise_distance_sum,
    uniform_ball_kernel,
)

from helpers import naive_kernel_sum, python_loop_kernel_sum


class TestInteractionKernel:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            InteractionKernel("triangle", 1.0)
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_gaussian_integrates_to_one(self, dim):
        # midpoint quadrature over a box covering the support
        kernel = gaussian_kernel(0.2)
        g = 801
        half = 2.0
        axes = [np.linspace(-half, half, g) for _ in range(dim)]
        if dim == 1:
            pts = axes[0][:, None]
        else:
            xx, yy = np.meshgrid(*axes)
            pts = np.column_stack([xx.ravel(), yy.ravel()])
        vol = (2 * half / (g - 1)) ** dim
        total = np.sum(kernel.density(pts)) * vol
        assert total == pytest.approx(1.0, abs=2e-3)

    def test_ball_normalization_analytic(self):
        # density * volume = 1 with the known closed-form ball volumes
        assert ball_volume(0.35, 1) == pytest.approx(2 * 0.35, rel=1e-15)
        assert ball_volume(0.35, 2) == pytest.approx(math.pi * 0.35**2, rel=1e-15)
        assert ball_volume(0.35, 3) == pytest.approx(4 / 3 * math.pi * 0.35**3, rel=1e-15)
        for dim in (1, 2, 3, 8):
            k = uniform_ball_kernel(0.35)
            assert k.coef(dim) * ball_volume(0.35, dim) == pytest.approx(1.0, rel=1e-15)

    def test_gaussian_positive_everywhere(self):
        k = gaussian_kernel(0.05)
        z = np.array([[5.0, 5.0]])
        assert np.isfinite(k.log_density(z)).all()

    def test_ball_density_value(self):
        k = uniform_ball_kernel(0.5)
        inside = k.density(np.array([[0.2, 0.1]]))
        assert inside[0] == pytest.approx(1.0 / ball_volume(0.5, 2), rel=1e-15)
        assert k.density(np.array([[0.6, 0.0]]))[0] == 0.0

    def test_ball_sampler_stays_inside(self):
        k = uniform_ball_kernel(0.3)
        rng = np.random.default_rng(0)
        e = k.sample(rng, 5000, 3)
        assert np.all(np.linalg.norm(e, axis=1) <= 0.3)

    def test_gaussian_sampler_moments(self):
        k = gaussian_kernel(0.4)
        rng = np.random.default_rng(1)
        e = k.sample(rng, 200_000, 2)
        assert np.allclose(e.mean(axis=0), 0.0, atol=0.005)
        assert np.allclose(e.std(axis=0), 0.4, atol=0.005)


class TestKernelSum:
    def test_single_pair_at_zero(self):
        k = gaussian_kernel(0.3)
        q = np.array([[0.4, 0.6]])
        out = kernel_sum(q, q, k, np.array([2.5]))
        assert out[0] == pytest.approx(2.5 * k.coef(2), rel=1e-15)

    def test_zero_weights(self):
        rng = np.random.default_rng(2)
        out = kernel_sum(rng.random((7, 3)), rng.random((9, 3)),
                         uniform_ball_kernel(0.5), np.zeros(9))
        assert np.all(out == 0.0)

    def test_matches_naive_oracle_random(self):
        rng = np.random.default_rng(3)
        Q = rng.random((257, 3))
        S = rng.random((257, 3))
        b = rng.standard_normal(257)
        k = gaussian_kernel(0.2)
        got = kernel_sum(Q, S, k, b)
        want = naive_kernel_sum(Q, S, k, b)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_matches_python_loop_small(self):
        rng = np.random.default_rng(4)
        Q = rng.random((11, 2))
        S = rng.random((13, 2))
        b = rng.standard_normal(13)
        for k in (gaussian_kernel(0.15), uniform_ball_kernel(0.4)):
            np.testing.assert_allclose(kernel_sum(Q, S, k, b),
                                       python_loop_kernel_sum(Q, S, k, b), rtol=1e-12)

    def test_worker_count_bitwise_invariant(self):
        rng = np.random.default_rng(5)
        Q = rng.random((500, 2))
        b = rng.random(500)
        k = gaussian_kernel(0.1)
        ref = kernel_sum(Q, Q, k, b, KernelSumPlan(workers=1))
        for workers in (2, 8):
            out = kernel_sum(Q, Q, k, b, KernelSumPlan(workers=workers))
            np.testing.assert_array_equal(out, ref)

    def test_tile_size_does_not_change_values(self):
        rng = np.random.default_rng(6)
        Q = rng.random((300, 2))
        b = rng.random(300)
        k = uniform_ball_kernel(0.2)
        ref = kernel_sum(Q, Q, k, b, KernelSumPlan(tile_size=256))
        out = kernel_sum(Q, Q, k, b, KernelSumPlan(tile_size=37))
        np.testing.assert_array_equal(out, ref)

    def test_translation_invariance_exact(self):
        # quantized inputs plus an integer shift keep every coordinate
        # exactly representable, so the subtract-first distances are
        # bitwise translation invariant
        rng = np.random.default_rng(7)
        Q = np.round(rng.random((64, 2)) * 2**20) / 2**20
        S = np.round(rng.random((80, 2)) * 2**20) / 2**20
        b = rng.random(80)
        shift = np.array([37.0, -12.0])
        for k in (gaussian_kernel(0.3), uniform_ball_kernel(0.25)):
            np.testing.assert_array_equal(kernel_sum(Q + shift, S + shift, k, b),
                                          kernel_sum(Q, S, k, b))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            kernel_sum(np.zeros((3, 2)), np.zeros((3, 3)), gaussian_kernel(1.0), np.ones(3))
        with pytest.raises(ValueError):
            kernel_sum(np.zeros((3, 2)), np.zeros((4, 2)), gaussian_kernel(1.0), np.ones(3))

    def test_nonfinite_weights_rejected(self):
        with pytest.raises(ValueError):
            kernel_sum(np.zeros((2, 1)), np.zeros((2, 1)), gaussian_kernel(1.0),
                       np.array([1.0, np.nan]))


class TestLogKernelDensity:
    def test_single_particle_at_query(self):
        k = gaussian_kernel(0.2)
        x = np.array([[0.3, 0.7]])
        got = log_kernel_density(x[0], x, k)
        assert got == pytest.approx(k.log_coef(2), rel=1e-15)

    def test_two_equidistant_particles(self):
        k = gaussian_kernel(0.25)
        swarm = np.array([[0.2], [0.8]])
        y = np.array([0.5])
        want = k.log_density(np.array([0.3]))  # log K(delta), weights cancel
        assert log_kernel_density(y, swarm, k) == pytest.approx(float(want), rel=1e-12)

    def test_ball_all_outside_is_neg_inf(self):
        rng = np.random.default_rng(8)
        swarm = rng.random((5, 2)) * 0.2
        y = np.array([0.9, 0.9])
        # direct distance check confirms no particle is within the ball
        assert np.all(np.linalg.norm(swarm - y, axis=1) > 0.1)
        assert log_kernel_density(y, swarm, uniform_ball_kernel(0.1)) == -np.inf

    def test_matches_linear_kernel_sum(self):
        rng = np.random.default_rng(9)
        swarm = rng.random((40, 2))
        pts = rng.random((23, 2))
        k = gaussian_kernel(0.15)
        got = log_kernel_density(pts, swarm, k)
        want = np.log(kernel_sum(pts, swarm, k, np.full(40, 1 / 40)))
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_weighted_with_zero_weights_no_nan(self):
        swarm = np.array([[0.1], [0.5], [0.9]])
        w = np.array([0.0, 1.0, 0.0])
        k = uniform_ball_kernel(0.05)
        vals = log_kernel_density(np.array([[0.1], [0.5]]), swarm, k, weights=w)
        assert vals[0] == -np.inf  # only the zero-weight particle is near
        assert np.isfinite(vals[1])

    def test_weights_validation(self):
        swarm = np.zeros((3, 1))
        with pytest.raises(ValueError):
            log_kernel_density(np.zeros((1, 1)), swarm, gaussian_kernel(1.0),
                               weights=np.array([-0.1, 0.6, 0.5]))


class TestBallCounts:
    def test_counts_match_distances(self):
        rng = np.random.default_rng(10)
        Q = rng.random((30, 3))
        S = rng.random((50, 3))
        radii = [0.1, 0.3, 0.6]
        counts = ball_counts(Q, S, radii)
        d = np.linalg.norm(Q[:, None, :] - S[None, :, :], axis=-1)
        for p, r in enumerate(radii):
            np.testing.assert_array_equal(counts[p], np.sum(d < r, axis=1))

    def test_radii_must_ascend(self):
        with pytest.raises(ValueError):
            ball_counts(np.zeros((1, 1)), np.zeros((1, 1)), [0.3, 0.1])


class TestPairwiseDistanceSum:
    def test_matches_naive(self):
        rng = np.random.default_rng(11)
        X = rng.random((37, 2))
        Y = rng.random((21, 2))
        naive = np.sum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1))
        assert pairwise_distance_sum(X, Y) == pytest.approx(naive, rel=1e-12)

    def test_worker_invariance(self):
        rng = np.random.default_rng(12)
        X = rng.random((400, 2))
        ref = pairwise_distance_sum(X, X, KernelSumPlan(workers=1))
        assert pairwise_distance_sum(X, X, KernelSumPlan(workers=8)) == ref
