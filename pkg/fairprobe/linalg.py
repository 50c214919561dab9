"""
Small dense linear algebra for K <= 64: LU solves with a conditioning
estimate, and the operator (spectral) norm by power iteration.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import NoConvergenceWarning, SingularMatrix, ValidationError

logger = logging.getLogger(__name__)

MAX_DIMENSION = 64
PIVOT_TOLERANCE = 1e-14
POWER_ITERATION_SEED = 0x5EED
POWER_ITERATION_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class DenseSolution:
    x: np.ndarray
    condition: float
    residual: float


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool


def _square(A, max_dimension: int = MAX_DIMENSION) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"Expected a square matrix, got shape {A.shape}")
    if A.shape[0] > max_dimension:
        raise ValidationError(f"Matrix size {A.shape[0]} exceeds the dense limit {max_dimension}")
    return A


def _factor(A: np.ndarray, pivot_tolerance: float):
    scale = np.linalg.norm(A, np.inf)
    if scale == 0 or not np.isfinite(scale):
        raise SingularMatrix("Matrix is zero or non-finite")
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    small = np.flatnonzero(pivots < pivot_tolerance * scale)
    if small.size:
        raise SingularMatrix(f"Pivot {pivots[small[0]]:.3e} below {pivot_tolerance:g} * ||A||_inf",
                             pivot_index=int(small[0]))
    return lu, piv


def solve_dense(A, b, pivot_tolerance: float = PIVOT_TOLERANCE,
                max_dimension: int = MAX_DIMENSION) -> DenseSolution:
    """Solve A x = b by LU with partial pivoting; report the 1-norm condition number"""
    A = _square(A, max_dimension)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValidationError(f"Right-hand side has shape {b.shape}, expected ({A.shape[0]},)")

    lu_piv = _factor(A, pivot_tolerance)
    x = lu_solve(lu_piv, b, check_finite=False)
    # one step of iterative refinement
    x = x + lu_solve(lu_piv, b - A @ x, check_finite=False)

    inverse = lu_solve(lu_piv, np.eye(A.shape[0]), check_finite=False)
    condition = float(np.linalg.norm(A, 1) * np.linalg.norm(inverse, 1))
    residual = float(np.max(np.abs(A @ x - b)))
    if residual > 1e-10 * (1.0 + float(np.max(np.abs(b), initial=0.0))):
        logger.warning(f"Dense solve residual {residual:.3e} above target (condition {condition:.3e})")
    return DenseSolution(x=x, condition=condition, residual=residual)


def dense_inverse(A, pivot_tolerance: float = PIVOT_TOLERANCE,
                  max_dimension: int = MAX_DIMENSION) -> DenseSolution:
    """Inverse of A (stored in ``x``) with the same condition estimate as solve_dense"""
    A = _square(A, max_dimension)
    lu_piv = _factor(A, pivot_tolerance)
    inverse = lu_solve(lu_piv, np.eye(A.shape[0]), check_finite=False)
    condition = float(np.linalg.norm(A, 1) * np.linalg.norm(inverse, 1))
    residual = float(np.max(np.abs(A @ inverse - np.eye(A.shape[0]))))
    return DenseSolution(x=inverse, condition=condition, residual=residual)


def power_iteration_norm(A, seed: int = POWER_ITERATION_SEED, tol: float = POWER_ITERATION_TOLERANCE,
                         max_iter: Optional[int] = None,
                         max_dimension: int = MAX_DIMENSION) -> NormEstimate:
    """Largest singular value of A from power iteration on A^T A"""
    A = _square(A, max_dimension)
    K = A.shape[0]
    cap = max_iter if max_iter is not None else 10 * K * K
    gram = A.T @ A

    rng = np.random.default_rng(seed)
    x = rng.normal(size=K)
    x /= np.linalg.norm(x)

    lam = 0.0
    for iteration in range(1, cap + 1):
        y = gram @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            # start vector fell in the null space of A
            if not gram.any():
                return NormEstimate(0.0, iteration, True)
            x = rng.normal(size=K)
            x /= np.linalg.norm(x)
            continue
        lam_new = float(x @ y)
        x = y / y_norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return NormEstimate(float(np.sqrt(max(lam_new, 0.0))), iteration, True)
        lam = lam_new

    warnings.warn(f"Power iteration did not converge within {cap} iterations", NoConvergenceWarning)
    logger.warning(f"Operator norm estimate kept after {cap} iterations without convergence")
    return NormEstimate(float(np.sqrt(max(lam, 0.0))), cap, False)


def operator_norm(A, seed: int = POWER_ITERATION_SEED, tol: float = POWER_ITERATION_TOLERANCE,
                  max_iter: Optional[int] = None) -> float:
    """Operator norm (largest singular value) of a square matrix"""
    return power_iteration_norm(A, seed=seed, tol=tol, max_iter=max_iter).value
