"""
Tests for the plug-in estimator, the bias bound and the confusion correction.
"""

import unittest

import numpy as np

from fairprobe.core_model import BinaryTrialTable, ConfusionMatrix, GroupModel
from fairprobe.errors import (
    DegenerateDiagonal,
    InvalidModel,
    SingularConfusion,
    StrictModeEmptyGroup,
    UndefinedPlugin,
    ZeroPrior,
    ZeroTau,
)
from fairprobe.estimator import (
    bias_and_bound,
    correct_rates,
    corrected_estimator,
    estimate_prior,
    interpolate_confusion,
    plugin_estimate,
    population_m,
    prop1_closed_form_bias,
    variance_inflation_factor,
)
from fairprobe.simulator import random_group_model

SYMMETRIC = [[0.9, 0.1], [0.1, 0.9]]


def two_group_model():
    return GroupModel.create([0.5, 0.5], [0.9, 0.7], SYMMETRIC)


class TestPluginEstimate(unittest.TestCase):
    def test_hand_computation(self):
        estimate = plugin_estimate(BinaryTrialTable(y=[1, 0, 1], g_hat=[0, 0, 1], num_segments=2), 2)
        np.testing.assert_allclose(estimate.m_hat, [0.5, 1.0])
        np.testing.assert_allclose(estimate.tau_hat, [2 / 3, 1 / 3])
        np.testing.assert_allclose(estimate.n_hat, [1 / 3, 1 / 3])
        self.assertTrue(estimate.is_complete)

    def test_all_successes(self):
        estimate = plugin_estimate(BinaryTrialTable(y=[1, 1, 1], g_hat=[0, 1, 1], num_segments=2), 2)
        np.testing.assert_array_equal(estimate.m_hat, [1.0, 1.0])

    def test_unobserved_group(self):
        trials = BinaryTrialTable(y=[1, 0], g_hat=[0, 0], num_segments=2)
        estimate = plugin_estimate(trials, 2)
        self.assertEqual(estimate.undefined_groups, frozenset({1}))
        self.assertTrue(np.isnan(estimate.m_hat[1]))
        self.assertIsNone(estimate.to_dict()['m_hat'][1])
        with self.assertRaises(StrictModeEmptyGroup):
            plugin_estimate(trials, 2, strict=True)


class TestPopulationBias(unittest.TestCase):
    def test_identity_confusion(self):
        model = GroupModel.create([0.3, 0.7], [0.2, 0.9], np.eye(2))
        np.testing.assert_allclose(population_m(model), model.p)
        report = bias_and_bound(model)
        np.testing.assert_allclose(report.bias, [0.0, 0.0])
        np.testing.assert_allclose(report.bound, [0.0, 0.0])

    def test_two_group_example(self):
        model = two_group_model()
        np.testing.assert_allclose(population_m(model), [0.88, 0.72])
        report = bias_and_bound(model)
        np.testing.assert_allclose(report.bias, [-0.02, 0.02], atol=1e-15)
        self.assertAlmostEqual(report.bound[1], 0.2 * 0.05 / 0.45)
        self.assertGreaterEqual(report.bound[1], 0.02)

    def test_constant_rates(self):
        model = GroupModel.create([0.2, 0.3, 0.5], [0.6, 0.6, 0.6],
                                  [[0.5, 0.3, 0.2], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
        np.testing.assert_allclose(population_m(model), [0.6, 0.6, 0.6])
        np.testing.assert_allclose(bias_and_bound(model).bias, [0.0, 0.0, 0.0], atol=1e-15)

    def test_zero_tau(self):
        model = GroupModel.create([0.5, 0.5], [0.9, 0.7], [[1.0, 0.0], [1.0, 0.0]])
        with self.assertRaises(ZeroTau):
            population_m(model)

    def test_degenerate_diagonal(self):
        model = GroupModel.create([0.5, 0.5], [0.9, 0.7], [[0.0, 1.0], [1.0, 0.0]])
        with self.assertRaises(DegenerateDiagonal):
            bias_and_bound(model)
        report = bias_and_bound(model, allow_degenerate=True)
        self.assertTrue(np.all(np.isnan(report.bound)))
        self.assertEqual(report.degenerate_groups, frozenset({0, 1}))

    def test_random_models(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            K = int(rng.choice([2, 4, 8]))
            model = random_group_model(K, rng, diagonal_strength=float(rng.uniform(0.0, 0.9)))
            m = population_m(model)
            # closed form matches the mixture limit
            np.testing.assert_allclose(m - model.p, prop1_closed_form_bias(model), atol=1e-12)
            # the limit stays inside the range of the true rates
            self.assertTrue(np.all(m >= model.p.min() - 1e-12) and np.all(m <= model.p.max() + 1e-12))
            report = bias_and_bound(model)
            self.assertTrue(np.all(np.abs(report.bias) <= report.bound + 1e-12))


class TestCorrection(unittest.TestCase):
    def test_identity_correction(self):
        pi = np.array([0.2, 0.8])
        p = np.array([0.4, 0.9])
        corrected = corrected_estimator(ConfusionMatrix(np.eye(2)), pi, p, pi)
        np.testing.assert_allclose(corrected, p)

    def test_two_group_example(self):
        corrected = corrected_estimator(ConfusionMatrix(np.array(SYMMETRIC)), [0.5, 0.5], [0.88, 0.72], [0.5, 0.5])
        np.testing.assert_allclose(corrected, [0.9, 0.7], atol=1e-12)

    def test_singular(self):
        with self.assertRaises(SingularConfusion):
            corrected_estimator(ConfusionMatrix(np.full((2, 2), 0.5)), [0.5, 0.5], [0.5, 0.5], [0.5, 0.5])

    def test_ill_conditioned(self):
        C = interpolate_confusion(2, 1.0 - 1e-13)
        with self.assertRaises(SingularConfusion):
            corrected_estimator(C, [0.5, 0.5], [0.5, 0.5], [0.5, 0.5])

    def test_zero_prior(self):
        with self.assertRaises(ZeroPrior):
            corrected_estimator(ConfusionMatrix(np.eye(2)), [0.5, 0.5], [0.5, 0.5], [1.0, 0.0])

    def test_undefined_plugin(self):
        with self.assertRaises(UndefinedPlugin):
            corrected_estimator(ConfusionMatrix(np.eye(2)), [1.0, 0.0], [0.5, np.nan], [0.5, 0.5])

    def test_prior_off_simplex(self):
        with self.assertRaises(InvalidModel):
            corrected_estimator(ConfusionMatrix(np.eye(2)), [0.5, 0.5], [0.5, 0.5], [5.0, 5.0])
        trials = BinaryTrialTable(y=[1, 0, 1, 0], g_hat=[0, 0, 1, 1], num_segments=2)
        with self.assertRaises(InvalidModel):
            correct_rates(trials, ConfusionMatrix(np.eye(2)), [5, 5])
        # a looser tolerance admits a prior that sums to 1 only approximately
        result = correct_rates(trials, ConfusionMatrix(np.eye(2)), [0.5, 0.5 + 1e-7], tolerance=1e-6)
        np.testing.assert_allclose(result['p_corrected'], [0.5, 0.5], rtol=1e-6)

    def test_population_exactness(self):
        rng = np.random.default_rng(99)
        checked = 0
        while checked < 1000:
            model = random_group_model(int(rng.choice([2, 4, 8])), rng, diagonal_strength=0.6)
            # redraw: tiny priors amplify rounding in the division by pi
            if model.pi.min() < 1e-3:
                continue
            corrected = corrected_estimator(model.C, model.tau, population_m(model), model.pi)
            np.testing.assert_allclose(corrected, model.p, atol=1e-10)
            checked += 1

    def test_estimate_prior(self):
        model = GroupModel.create([0.3, 0.7], [0.5, 0.5], SYMMETRIC)
        np.testing.assert_allclose(estimate_prior(model.C, model.tau), [0.3, 0.7], atol=1e-12)

    def test_correct_rates(self):
        trials = BinaryTrialTable(y=[1, 1, 0, 1, 0, 0], g_hat=[0, 0, 0, 1, 1, 1], num_segments=2)
        result = correct_rates(trials, ConfusionMatrix(np.eye(2)), [0.5, 0.5])
        np.testing.assert_allclose(result['p_corrected'], [2 / 3, 1 / 3])
        self.assertEqual(result['prior_source'], 'given')
        self.assertAlmostEqual(result['inflation_factor'], 1.0)
        estimated = correct_rates(trials, ConfusionMatrix(np.eye(2)))
        self.assertEqual(estimated['prior_source'], 'estimated')
        np.testing.assert_allclose(estimated['pi'], [0.5, 0.5])


class TestVarianceInflation(unittest.TestCase):
    def test_identity(self):
        self.assertAlmostEqual(variance_inflation_factor(ConfusionMatrix(np.eye(3))), 1.0, places=10)

    def test_symmetric(self):
        self.assertAlmostEqual(variance_inflation_factor(ConfusionMatrix(np.array(SYMMETRIC))), 1.5625, places=8)

    def test_near_uniform(self):
        factor = variance_inflation_factor(ConfusionMatrix(np.array([[0.51, 0.49], [0.49, 0.51]])))
        self.assertAlmostEqual(factor, 2500.0, delta=1e-6 * 2500)

    def test_singular(self):
        with self.assertRaises(SingularConfusion):
            variance_inflation_factor(ConfusionMatrix(np.full((2, 2), 0.5)))

    def test_grows_with_noise(self):
        factors = [variance_inflation_factor(interpolate_confusion(3, noise)) for noise in (0.0, 0.3, 0.6, 0.9)]
        self.assertEqual(factors, sorted(factors))
        self.assertAlmostEqual(factors[0], 1.0, places=10)


if __name__ == '__main__':
    unittest.main()
