"""
测试先验构造：高斯先验、GMM 拟合与回退、集合采样、闭式测量噪声
"""

import numpy as np
import pytest

from core.basis import BasisFamily, BasisModel, fit_demonstration
from core.errors import DataError, EnsembleSizeError, InsufficientDataError, NonPsdPriorError
from core.priors import (
    DemonstrationCorpus,
    GmmPrior,
    build_gaussian_prior,
    estimate_measurement_noise,
    fit_gmm,
    fit_gmm_with_fallback,
    sample_ensemble,
    widen_velocity,
)
from core.data_model import Ensemble
from core.simulator import toy_throw_layout


def _corpus(layout, weights, durations):
    return DemonstrationCorpus(layout, np.asarray(weights), 1.0 / np.asarray(durations, dtype=float))


class TestGaussianPrior:
    def test_moments(self, toy_training):
        corpus, _ = toy_training
        prior = build_gaussian_prior(corpus, phase_variance=1e-6)
        assert prior.mean[0] == 0.0
        assert prior.phase_velocity == pytest.approx(np.mean(corpus.reciprocal_lengths))
        np.testing.assert_allclose(prior.weight_mean, corpus.weights.mean(axis=0))
        np.testing.assert_allclose(prior.weight_covariance, np.cov(corpus.W), atol=1e-12)
        assert prior.phase_variance == pytest.approx(1e-6)
        assert prior.covariance[1, 1] == pytest.approx(np.var(corpus.reciprocal_lengths, ddof=1))

    def test_no_phase_weight_correlation(self, toy_training):
        prior = build_gaussian_prior(toy_training[0])
        assert np.all(prior.covariance[:2, 2:] == 0.0)

    def test_needs_two_demonstrations(self, toy_training):
        with pytest.raises(InsufficientDataError):
            build_gaussian_prior(toy_training[0].subset([0]))

    def test_velocity_floor(self, toy_training):
        corpus, _ = toy_training
        velocity = np.mean(corpus.reciprocal_lengths)
        assert build_gaussian_prior(corpus, velocity_spread=0.5).covariance[1, 1] == pytest.approx((0.5 * velocity) ** 2)
        # 下限低于样本方差时不起作用
        assert build_gaussian_prior(corpus, velocity_spread=1e-3).covariance[1, 1] == pytest.approx(
            np.var(corpus.reciprocal_lengths, ddof=1)
        )


class TestEnsembleSampling:
    def test_direct_draws_demonstrations(self, toy_training):
        corpus, _ = toy_training
        ensemble = sample_ensemble(corpus, 5, "direct", seed=3)
        assert ensemble.size == 5
        assert np.all(ensemble.phases == 0.0)
        rows = {tuple(w) for w in corpus.weights}
        assert all(tuple(w) in rows for w in ensemble.weights)
        # 无放回
        assert len({tuple(w) for w in ensemble.weights}) == 5

    def test_full_size_uses_every_demonstration(self, toy_training):
        corpus, _ = toy_training
        ensemble = sample_ensemble(corpus, corpus.size, "direct", seed=0)
        np.testing.assert_allclose(np.sort(ensemble.members[:, 1]), np.sort(corpus.reciprocal_lengths))

    def test_direct_size_limit(self, toy_training):
        corpus, _ = toy_training
        with pytest.raises(EnsembleSizeError):
            sample_ensemble(corpus, corpus.size + 1, "direct", seed=0)
        assert sample_ensemble(corpus, corpus.size + 1, "direct", seed=0, with_replacement=True).size == corpus.size + 1

    def test_gmm_mode_needs_two_members(self, toy_training):
        with pytest.raises(EnsembleSizeError):
            sample_ensemble(toy_training[0], 1, "gmm", seed=0)

    def test_gmm_mode_velocities_positive(self, toy_training):
        ensemble = sample_ensemble(toy_training[0], 80, "gmm", seed=1)
        assert ensemble.size == 80
        assert np.all(ensemble.members[:, 1] > 0.0)

    def test_widen_velocity_keeps_mean(self):
        members = np.column_stack((np.zeros(40), np.full(40, 0.01), np.arange(40.0)))
        widened = widen_velocity(Ensemble(members), 0.3, seed=2)
        velocities = widened.members[:, 1]
        assert velocities.mean() == pytest.approx(0.01)
        assert np.std(velocities, ddof=1) / 0.01 == pytest.approx(0.3, rel=0.2)
        assert np.all(velocities > 0.0)
        np.testing.assert_array_equal(widened.members[:, [0, 2]], members[:, [0, 2]])

    def test_widen_velocity_noop_when_spread_enough(self, toy_training):
        ensemble = sample_ensemble(toy_training[0], 6, "direct", seed=1)
        assert widen_velocity(ensemble, 0.0, seed=0) is ensemble
        assert widen_velocity(ensemble, 1e-4, seed=0) is ensemble

    def test_reproducible(self, toy_training):
        a = sample_ensemble(toy_training[0], 6, "direct", seed=11)
        b = sample_ensemble(toy_training[0], 6, "direct", seed=11)
        np.testing.assert_array_equal(a.members, b.members)


class TestGmm:
    def test_selects_two_clusters(self):
        rng = np.random.default_rng(0)
        weights = np.vstack((
            rng.normal([-5.0, 0.0], 0.3, size=(40, 2)),
            rng.normal([5.0, 1.0], 0.3, size=(40, 2)),
        ))
        corpus = _corpus(toy_throw_layout(), weights, np.full(80, 100))
        gmm = fit_gmm(corpus, (1, 2, 3), seed=0)
        assert gmm.n_components == 2
        assert not gmm.fallback
        np.testing.assert_allclose(np.sort(gmm.means[:, 0]), [-5.0, 5.0], atol=0.2)

    def test_fewer_demonstrations_than_weights(self, toy_training):
        corpus, _ = toy_training
        assert corpus.size < corpus.weight_dimension
        with pytest.raises(NonPsdPriorError):
            fit_gmm(corpus, (1, 2, 3), seed=0)

    def test_fallback_engages(self, toy_training):
        corpus, _ = toy_training
        gmm = fit_gmm_with_fallback(corpus, (1, 2, 3), seed=0)
        assert gmm.fallback
        assert gmm.n_components == 1
        np.testing.assert_allclose(gmm.means[0], corpus.weights.mean(axis=0))
        assert gmm.sample(4, np.random.default_rng(0)).shape == (4, corpus.weight_dimension)

    def test_single_component_matches_fallback_normalization(self):
        rng = np.random.default_rng(3)
        weights = rng.multivariate_normal([1.0, -1.0], [[1.0, 0.3], [0.3, 0.5]], size=30)
        corpus = _corpus(toy_throw_layout(), weights, np.full(30, 100))
        gmm = fit_gmm(corpus, (1,), seed=0)
        np.testing.assert_allclose(gmm.covariances[0], np.cov(weights, rowvar=False, ddof=1), rtol=1e-6)
        np.testing.assert_allclose(gmm.covariances[0], build_gaussian_prior(corpus).weight_covariance, rtol=1e-6)

    def test_mixture_parameter_validation(self):
        with pytest.raises(DataError):
            GmmPrior(np.array([0.7, 0.7]), np.zeros((2, 3)), np.stack([np.eye(3)] * 2))


class TestMeasurementNoise:
    def test_matches_least_squares_oracle(self, toy_demos):
        model = BasisModel(toy_throw_layout(), tuple(BasisFamily.gaussian(6) for _ in range(12)))
        weights = np.vstack([fit_demonstration(d, model, ridge=0.0) for d in toy_demos])
        noise = estimate_measurement_noise(toy_demos, model, weights)

        expected = np.zeros(12)
        for demo in toy_demos:
            design = BasisFamily.gaussian(6).evaluate(demo.phases)
            for dof in range(12):
                coef, *_ = np.linalg.lstsq(design, demo.samples[dof], rcond=None)
                residual = demo.samples[dof] - design @ coef
                expected[dof] += np.mean(residual ** 2)
        expected /= len(toy_demos)

        assert noise.shape == (12, 12)
        np.testing.assert_allclose(np.diag(noise), expected, rtol=1e-6, atol=1e-15)
        assert np.all(noise[~np.eye(12, dtype=bool)] == 0.0)

    def test_weight_count_checked(self, toy_demos, toy_model, toy_training):
        corpus, _ = toy_training
        with pytest.raises(DataError):
            estimate_measurement_noise(toy_demos, toy_model, corpus.weights[:3])
