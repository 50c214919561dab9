"""
Tests for the accuracy, fairness and robustness metrics.
"""

import math
import unittest

import numpy as np

from fairprobe.core_model import BinaryTrialTable, SampleTable, Taxonomy
from fairprobe.errors import DimensionMismatch, EmptyGroup, EmptyTable, InvalidTable, ZeroMax, ZeroMean
from fairprobe.metrics import (
    GroupRates,
    RateKind,
    RateScale,
    degree_of_bias,
    degree_of_bias_relative,
    demographic_parity,
    equalized_odds,
    group_rates,
    homogeneity_entropy,
    label_distribution_per_identity,
    macro_accuracy,
    majority_accuracies,
    micro_accuracy,
    one_vs_rest_rates,
    per_group_accuracy,
    robustness_scores,
)

BINARY = Taxonomy('t', ('A', 'B'))


def table(true, predicted, identities=None, K=2):
    n = len(predicted)
    return SampleTable(
        image_ids=[f"img{i}" for i in range(n)],
        identity_ids=identities or [f"id{i}" for i in range(n)],
        true_segments=true,
        predicted_segments=predicted,
        num_segments=K,
    )


def identity_table(groups, K=2):
    """One identity per entry of ``groups``, each a sequence of predicted segments"""
    identities, predicted = [], []
    for index, labels in enumerate(groups):
        identities += [f"person{index}"] * len(labels)
        predicted += list(labels)
    return table(None, predicted, identities, K)


def rates(*values, kind=RateKind.ACCURACY):
    return GroupRates(np.array(values), kind)


class TestAccuracy(unittest.TestCase):
    def test_micro(self):
        self.assertEqual(micro_accuracy(table([0, 1, 0, 1], [0, 1, 0, 1])), 1.0)
        self.assertEqual(micro_accuracy(table([0, 1, 0, 1], [0, 1, 0, 0])), 0.75)

    def test_micro_empty(self):
        with self.assertRaises(EmptyTable):
            micro_accuracy(table([], []))

    def test_per_group(self):
        result = per_group_accuracy(table([0, 0, 1, 1], [0, 1, 1, 1]), BINARY)
        np.testing.assert_allclose(result.rates, [0.5, 1.0])

    def test_per_group_missing_group(self):
        with self.assertRaises(EmptyGroup):
            per_group_accuracy(table([0, 0], [0, 1]), BINARY)

    def test_macro(self):
        # group A: 1/3 correct, group B: 1/1
        t = table([0, 0, 0, 1], [0, 1, 1, 1])
        self.assertAlmostEqual(micro_accuracy(t), 0.5)
        self.assertAlmostEqual(macro_accuracy(t, BINARY), (1 / 3 + 1) / 2)


class TestFairness(unittest.TestCase):
    def test_degree_of_bias(self):
        self.assertEqual(degree_of_bias(rates(0.9, 0.9, 0.9, 0.9)), 0.0)
        self.assertAlmostEqual(degree_of_bias(rates(0.8, 1.0)), 0.1)

    def test_degree_of_bias_percent_scale(self):
        percent = rates(0.8, 1.0).as_percent()
        self.assertEqual(percent.scale, RateScale.PERCENT)
        self.assertAlmostEqual(degree_of_bias(percent), 10.0)

    def test_degree_of_bias_relative(self):
        self.assertAlmostEqual(degree_of_bias_relative(rates(0.7, 0.7)), 0.0)
        self.assertAlmostEqual(degree_of_bias_relative(rates(0.5, 1.0)), 1 / 3)
        with self.assertRaises(ZeroMean):
            degree_of_bias_relative(rates(0.0, 0.0))

    def test_demographic_parity(self):
        result = demographic_parity(rates(0.5, 1.0))
        self.assertAlmostEqual(result.difference, 0.5)
        self.assertAlmostEqual(result.ratio, 0.5)
        result = demographic_parity(rates(0.6, 0.8, 0.9))
        self.assertAlmostEqual(result.difference, 0.3)
        self.assertAlmostEqual(result.ratio, 2 / 3)
        result = demographic_parity(rates(0.4, 0.4))
        self.assertEqual((result.difference, result.ratio), (0.0, 1.0))

    def test_demographic_parity_all_zero(self):
        with self.assertRaises(ZeroMax) as ctx:
            demographic_parity(rates(0.0, 0.0))
        self.assertEqual(ctx.exception.partial['dpd'], 0.0)

    def test_equalized_odds(self):
        result = equalized_odds(rates(0.9, 0.85, kind=RateKind.TPR), rates(0.1, 0.1, kind=RateKind.FPR))
        self.assertAlmostEqual(result.difference, 0.05)
        self.assertAlmostEqual(result.ratio, 0.85 / 0.9)

    def test_equalized_odds_identical(self):
        result = equalized_odds(rates(0.7, 0.7), rates(0.2, 0.2))
        self.assertEqual(result.difference, 0.0)
        self.assertEqual(result.ratio, 1.0)

    def test_equalized_odds_zero_minimum(self):
        # a zero minimum is a defined ratio of 0; only an all-zero rate vector is undefined
        result = equalized_odds(rates(1.0, 1.0), rates(0.0, 0.2))
        self.assertAlmostEqual(result.difference, 0.2)
        self.assertEqual(result.ratio, 0.0)

    def test_equalized_odds_zero_max(self):
        with self.assertRaises(ZeroMax) as ctx:
            equalized_odds(rates(0.9, 0.7), rates(0.0, 0.0))
        self.assertAlmostEqual(ctx.exception.partial['eod'], 0.2)
        self.assertAlmostEqual(ctx.exception.partial['eor'], 0.7 / 0.9)

    def test_equalized_odds_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            equalized_odds(rates(0.9, 0.8), rates(0.1, 0.1, 0.1))

    def test_parity_bounds_on_random_rates(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            r = rates(*rng.uniform(0.01, 1.0, size=int(rng.integers(2, 8))))
            parity = demographic_parity(r)
            self.assertGreaterEqual(parity.difference, 0.0)
            self.assertGreaterEqual(parity.ratio, 0.0)
            self.assertLessEqual(parity.ratio, 1.0)
            self.assertGreaterEqual(degree_of_bias(r), 0.0)

    def test_rates_validated(self):
        with self.assertRaises(InvalidTable):
            rates(0.5, 1.5)
        GroupRates(np.array([50.0, 100.0]), scale=RateScale.PERCENT)

    def test_one_vs_rest_rates(self):
        # A rows predicted (A, A, B); B rows predicted (B, A)
        tpr, fpr = one_vs_rest_rates(table([0, 0, 0, 1, 1], [0, 0, 1, 1, 0]), BINARY)
        np.testing.assert_allclose(tpr.rates, [2 / 3, 1 / 2])
        np.testing.assert_allclose(fpr.rates, [1 / 2, 1 / 3])

    def test_group_rates_from_trials(self):
        trials = BinaryTrialTable(y=[1, 0, 0, 0, 1, 1], g_hat=[0, 0, 0, 1, 1, 1], num_segments=2,
                                  g_true=[0, 0, 1, 1, 1, 1])
        np.testing.assert_allclose(group_rates(trials, 2, RateKind.FMR).rates, [0.5, 0.5])
        np.testing.assert_allclose(group_rates(trials, 2, use_true_groups=False).rates, [1 / 3, 2 / 3])


class TestRobustness(unittest.TestCase):
    def test_label_distribution(self):
        distributions = label_distribution_per_identity(identity_table([(0, 0, 1), (1,)]), BINARY)
        np.testing.assert_allclose(distributions['person0'], [2 / 3, 1 / 3])
        np.testing.assert_allclose(distributions['person1'], [0.0, 1.0])

    def test_label_distribution_sums_to_one(self):
        rng = np.random.default_rng(5)
        groups = [tuple(rng.integers(0, 3, int(rng.integers(1, 9)))) for _ in range(30)]
        distributions = label_distribution_per_identity(identity_table(groups, K=3), Taxonomy('t', ('a', 'b', 'c')))
        np.testing.assert_allclose(distributions.frequencies.sum(axis=1), 1.0)

    def test_homogeneity_single_label(self):
        self.assertEqual(homogeneity_entropy(identity_table([(0, 0), (1, 1, 1)]), BINARY), 0.0)

    def test_homogeneity_uniform(self):
        self.assertAlmostEqual(homogeneity_entropy(identity_table([(0, 0, 1, 1)]), BINARY), 1.0)

    def test_homogeneity_mixed(self):
        expected = (-(2 / 3) * math.log2(2 / 3) - (1 / 3) * math.log2(1 / 3)) / 2
        value = homogeneity_entropy(identity_table([(0, 0, 1), (1, 1, 1, 1)]), BINARY)
        self.assertAlmostEqual(value, expected)
        self.assertAlmostEqual(value, 0.4591, places=4)

    def test_majority_accuracies(self):
        scores = majority_accuracies(identity_table([(0, 0, 1), (1, 1, 1, 1)]), BINARY)
        self.assertAlmostEqual(scores.mama_raw, 6 / 7)
        self.assertAlmostEqual(scores.mima_raw, 5 / 6)
        self.assertAlmostEqual(scores.mama_norm, 5 / 7)
        self.assertAlmostEqual(scores.mima_norm, 2 / 3)

    def test_majority_best_and_worst_case(self):
        best = majority_accuracies(identity_table([(0,), (1, 1)]), BINARY)
        self.assertEqual((best.mama_raw, best.mima_raw, best.mama_norm, best.mima_norm), (1.0, 1.0, 1.0, 1.0))
        taxonomy = Taxonomy('t', ('a', 'b', 'c'))
        worst = majority_accuracies(identity_table([(0, 1, 2), (2, 1, 0)], K=3), taxonomy)
        self.assertAlmostEqual(worst.mama_raw, 1 / 3)
        self.assertAlmostEqual(worst.mima_norm, 0.0)

    def test_robustness_scores_min_images(self):
        t = identity_table([(0, 0, 1), (1,)])
        scores = robustness_scores(t, BINARY, min_images=2)
        self.assertEqual(scores.identities_used, 1)
        self.assertAlmostEqual(scores.mima_raw, 2 / 3)
        with self.assertRaises(EmptyTable):
            robustness_scores(t, BINARY, min_images=5)

    def test_bounds_on_random_tables(self):
        rng = np.random.default_rng(7)
        taxonomy = Taxonomy('t', ('a', 'b', 'c', 'd'))
        for _ in range(25):
            groups = [tuple(rng.integers(0, 4, int(rng.integers(1, 12)))) for _ in range(15)]
            scores = robustness_scores(identity_table(groups, K=4), taxonomy)
            self.assertGreaterEqual(scores.home, 0.0)
            self.assertLessEqual(scores.home, 1.0)
            for value in (scores.mama_raw, scores.mima_raw):
                self.assertGreaterEqual(value, 0.25 - 1e-12)
                self.assertLessEqual(value, 1.0)
            for value in (scores.mama_norm, scores.mima_norm):
                self.assertGreaterEqual(value, 0.0)
                self.assertLessEqual(value, 1.0)

    def test_matches_loop_computation(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            K = int(rng.integers(2, 6))
            taxonomy = Taxonomy('t', tuple(f"s{k}" for k in range(K)))
            groups = [tuple(int(v) for v in rng.integers(0, K, int(rng.integers(1, 10))))
                      for _ in range(int(rng.integers(1, 12)))]
            scores = robustness_scores(identity_table(groups, K=K), taxonomy)

            entropies, majorities, sizes = [], [], []
            for labels in groups:
                counts = [labels.count(k) for k in range(K)]
                h = 0.0
                for c in counts:
                    if c:
                        q = c / len(labels)
                        h -= q * math.log(q, K)
                entropies.append(h)
                majorities.append(max(counts))
                sizes.append(len(labels))
            mama = sum(majorities) / sum(sizes)
            mima = sum(m / s for m, s in zip(majorities, sizes)) / len(groups)

            self.assertAlmostEqual(scores.home, sum(entropies) / len(groups), places=10)
            self.assertAlmostEqual(scores.mama_raw, mama, places=12)
            self.assertAlmostEqual(scores.mima_raw, mima, places=12)
            self.assertAlmostEqual(scores.mima_norm, max(0.0, (mima - 1 / K) * K / (K - 1)), places=12)


if __name__ == '__main__':
    unittest.main()
