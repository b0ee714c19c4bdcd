"""Tests for graph priors, exact/quadrature posteriors, scale learning, denoising."""

import numpy as np
import pytest

from conftest import piecewise_image
from nash.errors import QuadratureUnderflowError
from nash.fused import (
    DenoiseConfig,
    FusedPrior,
    FusedScales,
    Graph,
    MessageNet,
    denoise_image,
    estimate_noise_sd,
    fused_log_density,
    fused_log_marginal,
    fused_posterior_stats,
    gh_posterior,
    learn_scales,
    neighbor_summary,
    refine_scales,
    rmse,
)


def normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def oracle_moments(beta_bar, sigma02, log_prior, points=100_000, width=10.0, centers=(0.0,)):
    """Dense-grid trapezoid posterior moments for an arbitrary log prior.

    The window spans the observation and any prior centers by ``width``
    combined standard deviations, so off-center prior mass is not clipped.
    """
    half = width * np.sqrt(sigma02)
    lo = min(beta_bar, *centers) - half
    hi = max(beta_bar, *centers) + half
    grid = np.linspace(lo, hi, points)
    joint = normal_pdf(beta_bar, grid, sigma02) * np.exp(log_prior(grid))
    mass = np.trapezoid(joint, grid)
    mean = np.trapezoid(grid * joint, grid) / mass
    second = np.trapezoid(grid**2 * joint, grid) / mass
    return mean, second - mean**2, np.log(mass)


class TestGraph:
    def test_chain_structure(self):
        graph = Graph.chain(4)
        assert graph.kind == "chain"
        assert [list(nb) for nb in graph.neighbors] == [[1], [0, 2], [1, 3], [2]]

    def test_grid4_degrees(self):
        graph = Graph.grid4(3, 4)
        assert graph.p == 12
        assert graph.degrees.max() == 4
        assert graph.degrees.min() == 2  # corners

    def test_rejects_asymmetric_adjacency(self):
        with pytest.raises(ValueError):
            Graph([np.array([1]), np.array([], dtype=int)])

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            Graph.from_edges(3, [(0, 0)])

    def test_neighbor_mean_and_isolated_mask(self):
        graph = Graph.from_edges(4, [(0, 1), (1, 2)])
        means, isolated = graph.neighbor_mean(np.array([1.0, 2.0, 5.0, 9.0]))
        np.testing.assert_allclose(means[:3], [2.0, 3.0, 2.0])
        assert isolated.tolist() == [False, False, False, True]


class TestFusedLogDensity:
    def test_zero_at_joint_mode(self):
        assert fused_log_density(0.0, 0.0, 0.0, FusedScales(1.0, 2.0)) == 0.0

    def test_neighbor_swap_symmetry(self, rng):
        scales = FusedScales(0.7, 0.3)
        b = rng.standard_normal(20)
        np.testing.assert_allclose(
            fused_log_density(b, 1.2, -0.4, scales),
            fused_log_density(b, -0.4, 1.2, scales),
            atol=1e-12,
        )

    def test_arithmetic_example(self):
        assert fused_log_density(1.0, 0.0, 2.0, FusedScales(1.0, 1.0)) == pytest.approx(-3.0)

    def test_none_drops_factor(self):
        scales = FusedScales(1.0, 1.0)
        assert fused_log_density(1.0, None, 2.0, scales) == pytest.approx(-2.0)
        assert fused_log_density(1.0, None, None, scales) == pytest.approx(-1.0)

    def test_scale_equivariance(self, rng):
        # doubling values, neighbor means and scales leaves every factor ratio fixed
        b = rng.standard_normal(10)
        scales = FusedScales(0.6, 0.25)
        doubled = FusedScales(1.2, 0.5)
        np.testing.assert_allclose(
            fused_log_density(2 * b, 1.6, -0.8, doubled),
            fused_log_density(b, 0.8, -0.4, scales),
            atol=1e-12,
        )


class TestGhPosterior:
    def test_flat_prior_is_exact(self):
        summary = gh_posterior(1.3, 0.6, lambda b: np.zeros_like(np.asarray(b, float)), 32)
        assert summary.mean == pytest.approx(1.3, abs=1e-10)
        assert summary.variance == pytest.approx(0.6, abs=1e-10)
        assert summary.log_marginal == pytest.approx(0.0, abs=1e-10)

    def test_odd_symmetry_zero_mean(self):
        scales = FusedScales(0.5, 0.5)
        summary = gh_posterior(0.0, 0.4, lambda b: fused_log_density(b, 0.0, 0.0, scales), 32)
        assert summary.mean == pytest.approx(0.0, abs=1e-12)

    def test_node_refinement_shrinks_oracle_gap(self):
        scales = FusedScales(0.45, 0.15)
        log_prior = lambda b: fused_log_density(b, 0.8, 1.2, scales)
        mean, _, _ = oracle_moments(1.0, 0.25, log_prior)
        gaps = [abs(gh_posterior(1.0, 0.25, log_prior, nodes).mean - mean)
                for nodes in (16, 32, 64)]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_breakpoints_give_oracle_accuracy(self):
        # documented configuration: kinked prior tighter than the observation
        scales = FusedScales(0.45, 0.15)
        log_prior = lambda b: fused_log_density(b, 0.8, 1.2, scales)
        mean, variance, _ = oracle_moments(1.0, 0.25, log_prior)
        summary = gh_posterior(1.0, 0.25, log_prior, 32, breakpoints=[0.0, 0.8, 1.2])
        assert summary.mean == pytest.approx(mean, rel=1e-4)
        assert summary.variance == pytest.approx(variance, rel=1e-4)

    def test_underflow_reported(self):
        with pytest.raises(QuadratureUnderflowError):
            gh_posterior(0.0, 1.0, lambda b: np.full_like(np.asarray(b, float), -np.inf), 32)


class TestFusedPosteriorStats:
    def test_matches_dense_oracle_random_configs(self, rng):
        for _ in range(40):
            beta = float(rng.normal(0, 2))
            sigma02 = float(rng.uniform(0.01, 2.0))
            scales = FusedScales(float(rng.uniform(0.05, 3)), float(rng.uniform(0.05, 3)))
            left, right = rng.normal(0, 2, 2)
            stats = fused_posterior_stats(np.array([beta]), sigma02,
                                          np.array([[left, right]]), scales)
            mean, variance, _ = oracle_moments(
                beta, sigma02, lambda b: fused_log_density(b, left, right, scales),
                centers=(0.0, left, right),
            )
            assert stats.mean[0] == pytest.approx(mean, rel=1e-4, abs=1e-9)
            assert stats.variance[0] == pytest.approx(variance, rel=1e-4)

    def test_normalized_log_marginal(self):
        scales = FusedScales(0.6, 0.4)
        beta, sigma02, left, right = 0.5, 0.3, 0.2, 0.9
        log_prior = lambda b: fused_log_density(b, left, right, scales)
        _, _, log_joint_mass = oracle_moments(beta, sigma02, log_prior)
        wide = np.linspace(-40, 40, 4_000_001)
        log_z = np.log(np.trapezoid(np.exp(log_prior(wide)), wide))
        stats = fused_posterior_stats(np.array([beta]), sigma02,
                                      np.array([[left, right]]), scales)
        assert stats.log_marginal[0] == pytest.approx(log_joint_mass - log_z, abs=1e-6)

    def test_tight_smoothness_pins_to_neighbors(self):
        stats = fused_posterior_stats(np.array([0.2]), 0.5, np.array([[1.5, 1.5]]),
                                      FusedScales(5.0, 1e-3))
        assert stats.mean[0] == pytest.approx(1.5, abs=5e-3)

    def test_null_probability_is_zero(self, rng):
        stats = fused_posterior_stats(rng.normal(0, 1, 6), 0.2,
                                      rng.normal(0, 1, (6, 1)), FusedScales(0.5, 0.5))
        np.testing.assert_array_equal(stats.null_prob, np.zeros(6))


class TestLearnScales:
    def test_piecewise_constant_wants_tight_smoothness(self, rng):
        p = 60
        b = np.concatenate([np.zeros(30), np.full(30, 3.0)]) + rng.normal(0, 0.05, p)
        graph = Graph.chain(p)
        nbr = np.full((p, 2), np.nan)
        nbr[1:, 0] = b[:-1]
        nbr[:-1, 1] = b[1:]
        beta_bar = b + rng.normal(0, 0.1, p)
        learned = learn_scales(beta_bar, 0.01, graph, nbr)
        assert learned.s2 < learned.s1

    def test_isolated_nodes_reduce_to_one_dimensional_problem(self, rng):
        graph = Graph.from_edges(40, [])
        beta_bar = rng.standard_t(2, 40) * 0.5
        nbr = np.full((40, 1), np.nan)
        learned = learn_scales(beta_bar, 0.05, graph, nbr)
        values = np.geomspace(1e-3, 10.0, 12)
        # the objective cannot depend on s2 when every node is isolated
        for s2 in (0.01, 1.0):
            obj_a = fused_log_marginal(beta_bar, 0.05, nbr, FusedScales(0.7, s2)).sum()
            obj_b = fused_log_marginal(beta_bar, 0.05, nbr, FusedScales(0.7, 5.0)).sum()
            assert obj_a == pytest.approx(obj_b, abs=1e-12)
        scan = [fused_log_marginal(beta_bar, 0.05, nbr, FusedScales(float(s1), 1.0)).sum()
                for s1 in values]
        best_scan = float(values[int(np.argmax(scan))])
        learned_obj = fused_log_marginal(beta_bar, 0.05, nbr,
                                         FusedScales(learned.s1, 1.0)).sum()
        assert learned_obj >= max(scan) - 1e-9
        assert abs(np.log(learned.s1) - np.log(best_scan)) <= np.log(values[1] / values[0]) + 1e-9

    def test_deterministic(self, rng):
        p = 20
        b = rng.normal(0, 1, p)
        graph = Graph.chain(p)
        nbr = np.full((p, 2), np.nan)
        nbr[1:, 0] = b[:-1]
        nbr[:-1, 1] = b[1:]
        first = learn_scales(b, 0.1, graph, nbr)
        second = learn_scales(b, 0.1, graph, nbr)
        assert (first.s1, first.s2) == (second.s1, second.s2)

    def test_refine_never_worse_than_start(self, rng):
        p = 20
        b = rng.normal(0, 1, p)
        nbr = np.full((p, 2), np.nan)
        nbr[1:, 0] = b[:-1]
        nbr[:-1, 1] = b[1:]
        start = FusedScales(0.5, 0.5)
        refined = refine_scales(b, 0.1, nbr, start)
        obj = lambda s: fused_log_marginal(b, 0.1, nbr, s).sum()
        assert obj(refined) >= obj(start) - 1e-9


class TestNeighborSummary:
    def test_chain_interior_mean(self):
        graph = Graph.chain(3)
        b = np.array([1.0, 9.0, 3.0])
        v1, s2 = neighbor_summary(graph, b, 1, FusedScales(0.5, 0.2))
        assert v1 == pytest.approx(2.0)
        assert s2 == 0.2

    def test_isolated_fallback(self):
        graph = Graph.from_edges(2, [])
        v1, s2 = neighbor_summary(graph, np.array([1.0, 2.0]), 0, FusedScales(0.5, 0.2))
        assert (v1, s2) == (0.0, 0.5)

    def test_grid_corner_uses_exactly_two_neighbors(self):
        graph = Graph.grid4(3, 3)
        b = np.arange(9.0)
        v1, _ = neighbor_summary(graph, b, 0, FusedScales(1.0, 1.0))
        assert v1 == pytest.approx((b[1] + b[3]) / 2.0)


class TestMessageNet:
    def test_positive_scales_and_shapes(self, rng):
        graph = Graph.grid4(4, 5)
        net = MessageNet(n_features=3, hidden=6, seed=0)
        features = rng.standard_normal((20, 3))
        v1, s2 = net.forward(features, graph)
        assert v1.shape == (20,) and s2.shape == (20,)
        assert np.all(s2 > 0)

    def test_deterministic_forward(self, rng):
        graph = Graph.chain(6)
        net = MessageNet(n_features=1, hidden=4, seed=3)
        features = rng.standard_normal((6, 1))
        a = net.forward(features, graph)
        b = net.forward(features, graph)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_neighbor_summary_reads_net_outputs(self, rng):
        graph = Graph.chain(5)
        net = MessageNet(n_features=1, hidden=4, seed=1)
        b = rng.standard_normal(5)
        v1_all, s2_all = net.forward(b[:, None], graph)
        v1, s2 = neighbor_summary(graph, b, 2, FusedScales(1.0, 1.0), net=net)
        assert v1 == pytest.approx(v1_all[2])
        assert s2 == pytest.approx(s2_all[2])


class TestFusedPrior:
    def test_engine_fit_on_chain_signal(self, rng):
        n, p = 60, 12
        X = rng.standard_normal((n, p))
        b_true = np.concatenate([np.zeros(4), np.full(4, 1.5), np.zeros(4)])
        y = X @ b_true + 0.3 * rng.standard_normal(n)
        from nash.data import Dataset, SideInfo
        from nash.engine import FitConfig, fit

        graph = Graph.chain(p)
        prior = FusedPrior(graph)
        result = fit(Dataset(y=y, X=X), SideInfo.from_graph(graph), prior,
                     FitConfig(max_sweeps=40))
        assert np.isfinite(result.elbo_trace).all()
        assert result.elbo_trace[-1] >= result.elbo_trace[0]
        assert result.prior_null_mass == 0.0
        # middle block should dominate the recovered signal
        assert np.mean(np.abs(result.coefficients[4:8])) > np.mean(np.abs(result.coefficients[:4]))

    def test_learns_scales_once_by_default(self, rng):
        graph = Graph.chain(8)
        prior = FusedPrior(graph)
        prior.update(rng.normal(0, 1, 8), 0.2)
        first = prior.scales
        prior.update(rng.normal(0, 1, 8), 0.2)
        assert prior.scales is first


class TestDenoise:
    def test_constant_image_is_fixed_point(self):
        image = np.full((12, 15), 0.6)
        out = denoise_image(image, DenoiseConfig())
        np.testing.assert_allclose(out, image, atol=1e-6)

    def test_noise_estimate_close_to_truth(self):
        noise = np.random.default_rng(0).normal(0.0, 0.2, (60, 60))
        assert estimate_noise_sd(noise) == pytest.approx(0.2, rel=0.1)

    def test_improves_noisy_piecewise_image(self):
        image = piecewise_image(7)
        noisy = image + np.random.default_rng(7).normal(0, 0.2, image.shape)
        out = denoise_image(noisy, DenoiseConfig(noise_sd=0.2))
        assert rmse(out, image) < rmse(noisy, image)

    def test_grid_isomorphism_invariance(self):
        image = piecewise_image(3, size=20)
        noisy = image + np.random.default_rng(11).normal(0, 0.2, image.shape)
        config = DenoiseConfig(noise_sd=0.2)
        base = denoise_image(noisy, config)
        transposed = denoise_image(noisy.T, config).T
        flipped = np.flipud(denoise_image(np.flipud(noisy), config))
        np.testing.assert_allclose(transposed, base, atol=1e-12)
        np.testing.assert_allclose(flipped, base, atol=1e-12)

    def test_monotone_under_frozen_hyperparameters(self):
        image = piecewise_image(5)
        noisy = image + np.random.default_rng(5).normal(0, 0.2, image.shape)
        _, info = denoise_image(noisy, DenoiseConfig(noise_sd=0.2), with_info=True)
        elbo = info["elbo_trace"]
        data_term = info["data_term"]
        assert all(b >= a - 1e-8 for a, b in zip(elbo, elbo[1:]))
        assert all(b <= a + 1e-8 for a, b in zip(data_term, data_term[1:]))

    def test_rejects_non_matrix(self):
        from nash.errors import DimensionMismatchError
        with pytest.raises(DimensionMismatchError):
            denoise_image(np.zeros(5), DenoiseConfig())
