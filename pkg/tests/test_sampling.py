"""Tests for the sampling pipeline: weights, diagnostic, evidence, rejection and MC KL."""

import math
import unittest

import numpy as np
from scipy import stats

from popinfer.bayes_linear import compare_inferences, make_problem
from popinfer.errors import AllRejected, DimensionMismatch, NonFiniteWeight, ZeroEvidence
from popinfer.gaussian import make_gaussian, make_linear_map
from popinfer.kde import fit_kde
from popinfer.models import linear_model
from popinfer.sampling import (
    SampleEnsemble,
    build_ensemble,
    diagnostic_mean_ratio,
    estimate_pop_evidence,
    gaussian_likelihoods,
    gaussian_log_likelihoods,
    log_pop_evidence,
    mc_kl_estimate,
    mc_kl_from_logs,
    mc_kl_standard_error,
    ratio_weights,
    rejection_sample,
    sample_updated_density,
    standard_evidence,
    weight_tail_shape,
    weighted_moments,
)

INITIAL = make_gaussian([0.4, 0.0], 0.15 * np.eye(2))
OBSERVED = make_gaussian([0.1], [[0.3]])
NOISE = [[0.1]]
DATUM = [0.39]


def ensemble_from(log_weights, log_likelihoods):
    n = len(log_weights)
    params = np.arange(2 * n, dtype=float).reshape(n, 2)
    return SampleEnsemble(
        params=params,
        pop_outputs=params[:, :1],
        ind_outputs=params[:, :1],
        log_weights=np.asarray(log_weights, dtype=float),
        log_likelihoods=np.asarray(log_likelihoods, dtype=float),
    )


def covariance_standard_errors(samples, cov):
    """Large-sample standard errors of sample covariance entries."""
    n = samples.shape[0]
    var = np.diag(cov)
    return np.sqrt((np.outer(var, var) + cov ** 2) / n)


class TestWeights(unittest.TestCase):
    """Test ratio weights and the mean-ratio diagnostic."""

    def test_matching_densities(self):
        """Test that weights are near one when observed equals predicted."""
        outputs = np.random.default_rng(0).standard_normal((20_000, 1))
        weights = ratio_weights(outputs, make_gaussian([0.0], [[1.0]]), fit_kde(outputs))
        diagnostic = diagnostic_mean_ratio(weights)
        self.assertTrue(diagnostic.passed)
        self.assertAlmostEqual(diagnostic.mean, 1.0, delta=0.05)

    def test_callable_observed(self):
        """Test that a plain pdf callable works as observed density."""
        outputs = np.random.default_rng(1).standard_normal((2000, 1))
        kde = fit_kde(outputs)
        observed = make_gaussian([0.0], [[0.5]])
        np.testing.assert_allclose(ratio_weights(outputs, observed.pdf, kde), ratio_weights(outputs, observed, kde))

    def test_predicted_underflow(self):
        """Test that outputs far outside the predicted support are rejected."""
        kde = fit_kde(np.random.default_rng(2).standard_normal((500, 1)))
        with self.assertRaises(NonFiniteWeight):
            ratio_weights(np.array([[100.0]]), OBSERVED, kde)

    def test_diagnostic_verdicts(self):
        """Test passing and failing diagnostics."""
        self.assertTrue(diagnostic_mean_ratio(np.ones(100)).passed)
        failed = diagnostic_mean_ratio(np.full(100, 2.0))
        self.assertFalse(failed.passed)
        self.assertEqual(failed.mean, 2.0)
        self.assertEqual(failed.std_error, 0.0)

    def test_diagnostic_fails_without_predictability(self):
        """Test that an observed density outside the predicted support fails the diagnostic."""
        rng = np.random.default_rng(3)
        params = INITIAL.sample(rng, 50_000)
        pop = linear_model([[2.0, -1.0]])
        ensemble, _ = build_ensemble(params, pop, pop, make_gaussian([6.0], [[1.0]]), None, NOISE)
        self.assertFalse(diagnostic_mean_ratio(ensemble.weights).passed)

    def test_diagnostic_fails_for_wide_observed_variance(self):
        """Test that an observed variance four times the predicted one fails through the weight tail."""
        predicted = make_gaussian([0.8], [[0.75]])
        observed = make_gaussian([0.8], [[3.0]])
        outputs = predicted.sample(np.random.default_rng(31), 100_000)
        weights = np.exp(observed.log_pdf(outputs) - predicted.log_pdf(outputs))
        diagnostic = diagnostic_mean_ratio(weights)
        self.assertFalse(diagnostic.passed)
        self.assertGreater(diagnostic.tail_shape, 0.5)

    def test_tail_shape_of_pareto_weights(self):
        """Test the fitted tail shape of Lomax draws with tail index 1.25."""
        weights = np.random.default_rng(32).pareto(1.25, 100_000)
        self.assertAlmostEqual(weight_tail_shape(weights), 0.8, delta=0.25)
        self.assertFalse(diagnostic_mean_ratio(weights / weights.mean()).passed)

    def test_tail_shape_of_bounded_weights(self):
        """Test that bounded weights do not trigger the tail check."""
        weights = np.random.default_rng(33).uniform(0.0, 2.0, 100_000)
        shape = weight_tail_shape(weights)
        self.assertTrue(shape is None or shape < 0.5)
        self.assertTrue(diagnostic_mean_ratio(weights).passed)
        self.assertIsNone(weight_tail_shape(np.ones(1000)))
        self.assertIsNone(weight_tail_shape(np.ones(50)))


class TestEvidence(unittest.TestCase):
    """Test evidence estimates."""

    def test_pop_evidence(self):
        """Test the mean of weight-likelihood products."""
        self.assertAlmostEqual(estimate_pop_evidence([1.0, 1.0], [2.0, 4.0]), 3.0)
        self.assertAlmostEqual(estimate_pop_evidence([0.5, 1.5], [2.0, 4.0]), 3.5)

    def test_standard_evidence(self):
        """Test the mean of the likelihoods."""
        self.assertAlmostEqual(standard_evidence([2.0, 4.0]), 3.0)

    def test_log_space(self):
        """Test that tiny likelihoods do not underflow in log space."""
        value = log_pop_evidence([0.0, 0.0], [-2000.0, -2000.0])
        self.assertAlmostEqual(value, -2000.0)

    def test_zero_evidence(self):
        """Test that vanishing products are rejected."""
        with self.assertRaises(ZeroEvidence):
            log_pop_evidence([0.0, 0.0], [-np.inf, -np.inf])
        with self.assertRaises(ZeroEvidence):
            estimate_pop_evidence([0.0, 0.0], [1.0, 1.0])

    def test_length_mismatch(self):
        """Test that weights and likelihoods must align."""
        with self.assertRaises(DimensionMismatch):
            log_pop_evidence([0.0], [0.0, 0.0])

    def test_gaussian_likelihood(self):
        """Test the likelihood at a perfect fit."""
        values = gaussian_likelihoods([[0.39], [0.49]], DATUM, NOISE)
        self.assertAlmostEqual(values[0], 1.0 / math.sqrt(2 * math.pi * 0.1), places=12)
        self.assertAlmostEqual(values[1], values[0] * math.exp(-0.05), places=12)

    def test_log_likelihood_far_from_data(self):
        """Test that log likelihoods stay finite where likelihoods underflow."""
        logs = gaussian_log_likelihoods([[100.0]], DATUM, NOISE)
        expected = -0.5 * math.log(2 * math.pi * 0.1) - (100.0 - 0.39) ** 2 / 0.2
        self.assertAlmostEqual(logs[0] / expected, 1.0, places=12)
        self.assertEqual(gaussian_likelihoods([[100.0]], DATUM, NOISE)[0], 0.0)

    def test_log_likelihood_dimension(self):
        """Test that output and data dimensions must agree."""
        with self.assertRaises(DimensionMismatch):
            gaussian_log_likelihoods([[0.1, 0.2]], DATUM, NOISE)


class TestRejection(unittest.TestCase):
    """Test rejection sampling."""

    def test_single_supported_sample(self):
        """Test that only the sample with nonzero likelihood is accepted."""
        ensemble = ensemble_from([0.0, 0.0, 0.0], [-np.inf, 0.0, -np.inf])
        result = rejection_sample(ensemble, 1.0 / 3.0, np.random.default_rng(0))
        np.testing.assert_array_equal(result.accepted_indices, [1])
        self.assertEqual(result.n_accepted, 1)
        self.assertAlmostEqual(result.acceptance_rate, 1.0 / 3.0)
        self.assertAlmostEqual(result.scale_M, 3.0)

    def test_all_rejected(self):
        """Test that an ensemble without support is rejected."""
        ensemble = ensemble_from([0.0, 0.0], [-np.inf, -np.inf])
        with self.assertRaises(AllRejected):
            rejection_sample(ensemble, 1.0, np.random.default_rng(0))

    def test_zero_evidence(self):
        """Test that a non-positive evidence is rejected."""
        ensemble = ensemble_from([0.0, 0.0], [0.0, 0.0])
        with self.assertRaises(ZeroEvidence):
            rejection_sample(ensemble, 0.0, np.random.default_rng(0))

    def test_flat_acceptance(self):
        """Test that equal acceptance probabilities accept everything."""
        ensemble = ensemble_from(np.zeros(10), np.zeros(10))
        self.assertEqual(rejection_sample(ensemble, 1.0, np.random.default_rng(1)).n_accepted, 10)

    def test_ensemble_validation(self):
        """Test that misaligned or NaN ensembles are rejected."""
        with self.assertRaises(DimensionMismatch):
            SampleEnsemble(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(3), np.zeros(2))
        with self.assertRaises(NonFiniteWeight):
            ensemble_from([0.0, np.nan], [0.0, 0.0])


class TestKlEstimates(unittest.TestCase):
    """Test Monte Carlo KL estimates."""

    def test_flat_posterior(self):
        """Test that an uninformative likelihood gives zero KL."""
        self.assertEqual(mc_kl_estimate(np.ones(5), np.ones(5), 1.0), 0.0)

    def test_zero_terms(self):
        """Test that samples with zero weight contribute nothing."""
        value = mc_kl_estimate([0.0, 2.0], [1.0, 1.0], 1.0)
        self.assertAlmostEqual(value, 0.5 * 2.0 * math.log(2.0))

    def test_log_form_agrees(self):
        """Test the log-space estimate against the natural-scale one."""
        rng = np.random.default_rng(4)
        w = rng.uniform(0.5, 1.5, 100)
        lik = rng.uniform(0.1, 2.0, 100)
        evidence = float(np.mean(w * lik))
        value, se = mc_kl_from_logs(np.log(w), np.log(lik), math.log(evidence))
        self.assertAlmostEqual(value, mc_kl_estimate(w, lik, evidence), places=12)
        self.assertAlmostEqual(se, mc_kl_standard_error(w, lik, evidence), places=12)

    def test_weighted_moments(self):
        """Test that unit weights give the plain sample moments normalized by N."""
        params = np.random.default_rng(5).standard_normal((1000, 2))
        mean, cov = weighted_moments(params, np.ones(1000))
        np.testing.assert_allclose(mean, params.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(cov, np.cov(params, rowvar=False, ddof=0), atol=1e-12)


class TestAnalyticOracle(unittest.TestCase):
    """Compare the sampling pipeline with closed-form results on linear-Gaussian problems."""

    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(2023)
        cls.params = INITIAL.sample(rng, 100_000)
        cls.model = linear_model([[2.0, -1.0]])
        cls.ensemble, cls.kde = build_ensemble(cls.params, cls.model, cls.model, OBSERVED, DATUM, NOISE)
        problem = make_problem(INITIAL, make_linear_map([[2.0, -1.0]]), NOISE, DATUM)
        cls.analytic = compare_inferences(problem, make_linear_map([[2.0, -1.0]]), OBSERVED)

    def test_diagnostic(self):
        """Test that the mean ratio is within three standard errors of one."""
        diagnostic = diagnostic_mean_ratio(self.ensemble.weights)
        self.assertTrue(diagnostic.passed)
        self.assertTrue(diagnostic.tail_shape is None or diagnostic.tail_shape < 0.5)
        self.assertLessEqual(abs(diagnostic.mean - 1.0), 3.0 * diagnostic.std_error)

    def test_evidence_closed_form(self):
        """Test the population-informed evidence against N(y; B mu_up, B G_up B^T + noise)."""
        b = np.array([[2.0, -1.0]])
        updated = self.analytic.updated
        marginal = make_gaussian(b @ updated.mean, b @ updated.covariance @ b.T + np.array(NOISE))
        exact = math.exp(marginal.log_pdf(np.array(DATUM)))
        terms = self.ensemble.weights * self.ensemble.likelihoods
        se = terms.std(ddof=1) / math.sqrt(self.ensemble.n_samples)
        estimate = estimate_pop_evidence(self.ensemble.weights, self.ensemble.likelihoods)
        self.assertAlmostEqual(estimate, exact, delta=max(4.0 * se, 0.01 * exact))

    def test_weighted_expectations(self):
        """Test weighted averages of lambda_1, lambda_2, lambda_1^2 and lambda_1 lambda_2."""
        updated = self.analytic.updated
        mu, cov = updated.mean, updated.covariance
        p = self.ensemble.params
        cases = [
            (p[:, 0], mu[0]),
            (p[:, 1], mu[1]),
            (p[:, 0] ** 2, cov[0, 0] + mu[0] ** 2),
            (p[:, 0] * p[:, 1], cov[0, 1] + mu[0] * mu[1]),
        ]
        w = self.ensemble.weights
        for values, exact in cases:
            terms = w * values
            se = terms.std(ddof=1) / math.sqrt(len(terms))
            self.assertLessEqual(abs(terms.mean() - exact), 4.0 * se)
        mean, weighted_cov = weighted_moments(p, w)
        np.testing.assert_allclose(mean, mu, atol=0.01)
        np.testing.assert_allclose(weighted_cov, cov, atol=0.01)

    def test_rejection_matches_weighted_cdf(self):
        """Test accepted samples against the weighted empirical CDF with a two-sample KS bound."""
        log_evidence = log_pop_evidence(self.ensemble.log_weights, self.ensemble.log_likelihoods)
        result = rejection_sample(self.ensemble, math.exp(log_evidence), np.random.default_rng(10))
        alpha = self.ensemble.weights * self.ensemble.likelihoods
        order = np.argsort(self.params[:, 0])
        grid = self.params[order, 0]
        weighted_cdf = np.cumsum(alpha[order]) / alpha.sum()
        accepted_cdf = np.searchsorted(np.sort(result.accepted_params[:, 0]), grid, side="right") / result.n_accepted
        distance = np.abs(accepted_cdf - weighted_cdf).max()
        n = result.n_accepted
        m = alpha.sum() ** 2 / np.sum(alpha ** 2)
        bound = stats.kstwobign.ppf(0.99) * math.sqrt((n + m) / (n * m))
        self.assertLess(distance, bound)

    def test_parallel_forward_evaluation(self):
        """Test that forward evaluation across workers builds the same ensemble."""
        serial, _ = build_ensemble(self.params[:25_000], self.model, self.model, OBSERVED, DATUM, NOISE)
        parallel, _ = build_ensemble(self.params[:25_000], self.model, self.model, OBSERVED, DATUM, NOISE, n_jobs=2)
        np.testing.assert_array_equal(parallel.pop_outputs, serial.pop_outputs)
        np.testing.assert_array_equal(parallel.log_weights, serial.log_weights)

    def test_population_posterior_moments(self):
        """Test accepted-sample moments against the analytic population-informed posterior."""
        log_evidence = log_pop_evidence(self.ensemble.log_weights, self.ensemble.log_likelihoods)
        result = rejection_sample(self.ensemble, math.exp(log_evidence), np.random.default_rng(6))
        samples = result.accepted_params
        target = self.analytic.population
        mean_se = np.sqrt(np.diag(target.covariance) / samples.shape[0])
        np.testing.assert_array_less(np.abs(samples.mean(axis=0) - target.mean), 4.0 * mean_se)
        cov = np.cov(samples, rowvar=False)
        np.testing.assert_array_less(
            np.abs(cov - target.covariance), 4.0 * covariance_standard_errors(samples, target.covariance)
        )

    def test_standard_posterior_moments(self):
        """Test accepted-sample moments against the analytic standard posterior."""
        flat = self.ensemble.without_weights()
        log_evidence = log_pop_evidence(flat.log_weights, flat.log_likelihoods)
        samples = rejection_sample(flat, math.exp(log_evidence), np.random.default_rng(7)).accepted_params
        target = self.analytic.standard
        mean_se = np.sqrt(np.diag(target.covariance) / samples.shape[0])
        np.testing.assert_array_less(np.abs(samples.mean(axis=0) - target.mean), 4.0 * mean_se)

    def test_updated_density_samples(self):
        """Test samples of the updated density against its closed form."""
        samples = sample_updated_density(self.ensemble, np.random.default_rng(8)).accepted_params
        target = self.analytic.updated
        mean_se = np.sqrt(np.diag(target.covariance) / samples.shape[0])
        np.testing.assert_array_less(np.abs(samples.mean(axis=0) - target.mean), 4.0 * mean_se)

    def test_kl_estimates(self):
        """Test MC KL estimates against the analytic Gaussian KL."""
        zeros = np.zeros(self.ensemble.n_samples)
        log_c = log_pop_evidence(zeros, self.ensemble.log_likelihoods)
        log_c_pop = log_pop_evidence(self.ensemble.log_weights, self.ensemble.log_likelihoods)
        kl_std, se_std = mc_kl_from_logs(zeros, self.ensemble.log_likelihoods, log_c)
        kl_pop, se_pop = mc_kl_from_logs(self.ensemble.log_weights, self.ensemble.log_likelihoods, log_c_pop)
        self.assertLessEqual(
            abs(kl_std - self.analytic.kl_standard), max(3.0 * se_std, 0.02 * self.analytic.kl_standard)
        )
        self.assertLessEqual(abs(kl_pop - self.analytic.kl_pop), max(3.0 * se_pop, 0.02 * self.analytic.kl_pop))

    def test_projection_weighted_mean(self):
        """Test the reweighted mean of the projection example."""
        rng = np.random.default_rng(9)
        params = INITIAL.sample(rng, 100_000)
        pop = linear_model([[0.0, 1.0]])
        ensemble, _ = build_ensemble(params, pop, pop, make_gaussian([0.3], [[0.06]]), None, [[0.1]])
        mean, _ = weighted_moments(ensemble.params, ensemble.weights)
        terms = ensemble.weights[:, None] * ensemble.params
        se = np.std(terms, axis=0, ddof=1) / math.sqrt(ensemble.n_samples)
        np.testing.assert_array_less(np.abs(mean - [0.4, 0.3]), 3.0 * se)


if __name__ == "__main__":
    unittest.main()
