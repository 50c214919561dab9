"""
Tests for the dense solver and the power-iteration operator norm.
"""

import unittest
import warnings

import numpy as np

from fairprobe.errors import NoConvergenceWarning, SingularMatrix, ValidationError
from fairprobe.linalg import dense_inverse, operator_norm, power_iteration_norm, solve_dense


class TestSolveDense(unittest.TestCase):
    def test_identity(self):
        b = np.array([0.3, -1.0, 2.5])
        np.testing.assert_allclose(solve_dense(np.eye(3), b).x, b)

    def test_hand_solve(self):
        solution = solve_dense(np.array([[0.9, 0.1], [0.1, 0.9]]), np.array([0.44, 0.36]))
        np.testing.assert_allclose(solution.x, [0.45, 0.35], atol=1e-14)
        self.assertAlmostEqual(solution.condition, 1.25, places=12)

    def test_zero_matrix(self):
        with self.assertRaises(SingularMatrix):
            solve_dense(np.zeros((2, 2)), np.ones(2))

    def test_rank_deficient(self):
        with self.assertRaises(SingularMatrix):
            solve_dense(np.array([[0.5, 0.5], [0.5, 0.5]]), np.ones(2))

    def test_shapes(self):
        with self.assertRaises(ValidationError):
            solve_dense(np.ones((2, 3)), np.ones(2))
        with self.assertRaises(ValidationError):
            solve_dense(np.eye(2), np.ones(3))
        with self.assertRaises(ValidationError):
            solve_dense(np.eye(65), np.ones(65))

    def test_random_systems(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            K = int(rng.integers(1, 10))
            A = rng.normal(size=(K, K)) + K * np.eye(K)
            b = rng.normal(size=K)
            np.testing.assert_allclose(solve_dense(A, b).x, np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)

    def test_inverse(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(dense_inverse(A).x @ A, np.eye(2), atol=1e-14)


class TestOperatorNorm(unittest.TestCase):
    def test_identity(self):
        self.assertAlmostEqual(operator_norm(np.eye(4)), 1.0, places=12)

    def test_diagonal(self):
        self.assertAlmostEqual(operator_norm(np.diag([2.0, 0.5])), 2.0, places=10)

    def test_symmetric_confusion(self):
        self.assertAlmostEqual(operator_norm(np.array([[0.9, 0.1], [0.1, 0.9]])), 1.0, places=10)

    def test_zero_matrix(self):
        self.assertEqual(operator_norm(np.zeros((3, 3))), 0.0)

    def test_deterministic_with_seed(self):
        A = np.random.default_rng(4).normal(size=(5, 5))
        self.assertEqual(operator_norm(A, seed=7), operator_norm(A, seed=7))

    def test_matches_reference_norm(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            K = int(rng.integers(2, 6))
            A = rng.normal(size=(K, K))
            estimate = power_iteration_norm(A, max_iter=10000)
            self.assertTrue(estimate.converged)
            self.assertAlmostEqual(estimate.value / np.linalg.norm(A, 2), 1.0, delta=1e-5)

    def test_iteration_cap_warns(self):
        # a single step cannot meet the relative tolerance
        A = np.diag([1.0, 0.99, 0.98])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            estimate = power_iteration_norm(A, max_iter=1)
        self.assertFalse(estimate.converged)
        self.assertTrue(any(issubclass(w.category, NoConvergenceWarning) for w in caught))
        self.assertLessEqual(estimate.value, 1.0 + 1e-12)

    def test_covariance_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            K = int(rng.integers(2, 7))
            M = rng.normal(size=(K, K))
            L = rng.normal(size=(K, K))
            sigma = L @ L.T
            lhs = np.linalg.norm(M @ sigma @ M.T, 2)
            rhs = np.linalg.norm(M, 2) ** 2 * np.linalg.norm(sigma, 2)
            self.assertLessEqual(lhs, rhs * (1 + 1e-12))


if __name__ == '__main__':
    unittest.main()
