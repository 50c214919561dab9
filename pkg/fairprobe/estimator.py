"""
Estimating per-group success rates when the group labels are themselves
predictions.

With observed pairs (g_hat, Y) the naive per-group rate m_hat converges to
m_g = sum_a pi_a c_ag p_a / tau_g, a mixture of the true rates p. Knowing the
confusion matrix C and the prior pi, the corrected estimator
(C^T)^-1 (tau_hat * m_hat) / pi removes the mixing at the price of a variance
inflation bounded by ||(C^T)^-1||_op^2.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet

import numpy as np

from .core_model import (
    DEFAULT_TOLERANCE,
    BinaryTrialTable,
    ConfusionMatrix,
    GroupModel,
    group_counts,
    validate_simplex,
)
from .errors import (
    DegenerateDiagonal,
    InvalidModel,
    SingularConfusion,
    SingularMatrix,
    StrictModeEmptyGroup,
    UndefinedPlugin,
    ValidationError,
    ZeroPrior,
    ZeroTau,
)
from .linalg import (
    MAX_DIMENSION,
    PIVOT_TOLERANCE,
    POWER_ITERATION_SEED,
    dense_inverse,
    operator_norm,
    solve_dense,
)

logger = logging.getLogger(__name__)

CONDITION_THRESHOLD = 1e12


@dataclass(frozen=True, eq=False)
class PluginEstimate:
    """Naive per-observed-group rates; undefined groups hold NaN"""
    m_hat: np.ndarray
    tau_hat: np.ndarray
    n_hat: np.ndarray
    undefined_groups: FrozenSet[int]
    counts: np.ndarray = field(repr=False)
    successes: np.ndarray = field(repr=False)

    @property
    def is_complete(self) -> bool:
        return not self.undefined_groups

    def to_dict(self) -> Dict[str, Any]:
        return {
            'm_hat': _nan_to_none(self.m_hat),
            'tau_hat': self.tau_hat.tolist(),
            'n_hat': _nan_to_none(self.n_hat),
            'undefined_groups': sorted(self.undefined_groups),
            'counts': self.counts.tolist(),
            'successes': self.successes.tolist(),
        }


@dataclass(frozen=True, eq=False)
class BiasReport:
    m: np.ndarray
    bias: np.ndarray
    bound: np.ndarray
    delta_max: np.ndarray
    degenerate_groups: FrozenSet[int] = frozenset()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'm': self.m.tolist(),
            'bias': self.bias.tolist(),
            'bound': _nan_to_none(self.bound),
            'delta_max': self.delta_max.tolist(),
            'degenerate_groups': sorted(self.degenerate_groups),
        }


def _nan_to_none(values: np.ndarray):
    return [None if np.isnan(v) else float(v) for v in values]


def plugin_estimate(trials: BinaryTrialTable, K: int, strict: bool = False) -> PluginEstimate:
    """Empirical m_hat_g = successes_g / counts_g and tau_hat_g = counts_g / I"""
    counts, successes = group_counts(trials, K)
    undefined = frozenset(int(g) for g in np.flatnonzero(counts == 0))
    if undefined:
        if strict:
            raise StrictModeEmptyGroup(f"No identity was assigned to groups {sorted(undefined)}",
                                       groups=sorted(undefined))
        logger.warning(f"Plug-in estimate undefined for groups {sorted(undefined)}")

    with np.errstate(divide='ignore', invalid='ignore'):
        m_hat = np.where(counts > 0, successes / np.maximum(counts, 1), np.nan)
    tau_hat = counts / counts.sum()
    return PluginEstimate(m_hat=m_hat, tau_hat=tau_hat, n_hat=tau_hat * m_hat,
                          undefined_groups=undefined, counts=counts, successes=successes)


def _weights(model: GroupModel) -> np.ndarray:
    """W[a, g] = pi_a c_ag, so tau = W.sum(axis=0)"""
    return model.pi[:, None] * model.C.entries


def population_m(model: GroupModel) -> np.ndarray:
    """Probability limit of the plug-in estimator for every observed group"""
    W = _weights(model)
    tau = W.sum(axis=0)
    zero = np.flatnonzero(tau <= 0)
    if zero.size:
        raise ZeroTau(f"tau is zero for groups {zero.tolist()}", groups=zero.tolist())
    return (W.T @ model.p) / tau


def prop1_closed_form_bias(model: GroupModel) -> np.ndarray:
    """Bias_g = sum_{a != g} pi_a c_ag (p_a - p_g) / sum_a pi_a c_ag"""
    W = _weights(model)
    tau = W.sum(axis=0)
    zero = np.flatnonzero(tau <= 0)
    if zero.size:
        raise ZeroTau(f"tau is zero for groups {zero.tolist()}", groups=zero.tolist())
    differences = model.p[:, None] - model.p[None, :]  # [a, g] = p_a - p_g
    off_diagonal = W * differences
    np.fill_diagonal(off_diagonal, 0.0)
    return off_diagonal.sum(axis=0) / tau


def bias_and_bound(model: GroupModel, allow_degenerate: bool = False) -> BiasReport:
    """Population bias of the plug-in limit and its upper bound per group"""
    W = _weights(model)
    K = model.K
    diagonal = np.diag(W).copy()
    degenerate = np.flatnonzero(diagonal <= 0)
    if degenerate.size and not allow_degenerate:
        raise DegenerateDiagonal(f"pi_g c_gg is zero for groups {degenerate.tolist()}",
                                 groups=degenerate.tolist())

    m = population_m(model)
    bias = prop1_closed_form_bias(model)

    delta_max = np.zeros(K)
    for g in range(K):
        others = np.delete(model.p, g)
        delta_max[g] = float(np.max(np.abs(others - model.p[g]))) if others.size else 0.0

    leakage = W.sum(axis=0) - diagonal
    with np.errstate(divide='ignore', invalid='ignore'):
        bound = np.where(diagonal > 0, delta_max * leakage / np.where(diagonal > 0, diagonal, 1.0), np.nan)
    return BiasReport(m=m, bias=bias, bound=bound, delta_max=delta_max,
                      degenerate_groups=frozenset(int(g) for g in degenerate))


def _invert_confusion(C: ConfusionMatrix, condition_threshold: float):
    try:
        inverse = dense_inverse(C.entries.T, pivot_tolerance=PIVOT_TOLERANCE, max_dimension=MAX_DIMENSION)
    except SingularMatrix as e:
        raise SingularConfusion(f"Confusion matrix is singular: {e.message}") from e
    if inverse.condition > condition_threshold:
        raise SingularConfusion(f"Confusion matrix condition number {inverse.condition:.3e} "
                                f"exceeds {condition_threshold:.0e}", condition=inverse.condition)
    return inverse


def corrected_estimator(C: ConfusionMatrix, tau_hat, m_hat, pi,
                        condition_threshold: float = CONDITION_THRESHOLD,
                        tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """p_corr = (C^T)^-1 (tau_hat * m_hat) / pi, elementwise division by the known prior"""
    tau_hat = np.asarray(tau_hat, dtype=float)
    m_hat = np.asarray(m_hat, dtype=float)
    pi = np.asarray(pi, dtype=float)
    K = C.K
    if tau_hat.shape != (K,) or m_hat.shape != (K,) or pi.shape != (K,):
        raise ValidationError(f"tau_hat, m_hat and pi must have length K={K}")
    undefined = np.flatnonzero(~np.isfinite(m_hat))
    if undefined.size:
        raise UndefinedPlugin(f"Plug-in rates undefined for groups {undefined.tolist()}",
                              groups=undefined.tolist())
    if not validate_simplex(pi, tolerance):
        raise InvalidModel(f"Prior must be a probability vector, got {pi.tolist()}", pi=pi.tolist())
    zero = np.flatnonzero(pi <= 0)
    if zero.size:
        raise ZeroPrior(f"Prior is zero for groups {zero.tolist()}", groups=zero.tolist())

    try:
        solution = solve_dense(C.entries.T, tau_hat * m_hat)
    except SingularMatrix as e:
        raise SingularConfusion(f"Confusion matrix is singular: {e.message}") from e
    if solution.condition > condition_threshold:
        raise SingularConfusion(f"Confusion matrix condition number {solution.condition:.3e} "
                                f"exceeds {condition_threshold:.0e}", condition=solution.condition)
    return solution.x / pi


def estimate_prior(C: ConfusionMatrix, tau_hat, condition_threshold: float = CONDITION_THRESHOLD) -> np.ndarray:
    """Prior recovered from tau = C^T pi, clipped at 0 and renormalised.

    Used when only the estimated groups are observed; the sampling noise of
    tau_hat carries into the corrected rates.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    try:
        solution = solve_dense(C.entries.T, tau_hat)
    except SingularMatrix as e:
        raise SingularConfusion(f"Confusion matrix is singular: {e.message}") from e
    if solution.condition > condition_threshold:
        raise SingularConfusion(f"Confusion matrix condition number {solution.condition:.3e} "
                                f"exceeds {condition_threshold:.0e}", condition=solution.condition)
    pi = np.clip(solution.x, 0.0, None)
    if pi.sum() <= 0:
        raise ZeroPrior("Recovered prior has no positive mass")
    if np.any(solution.x < -1e-12):
        logger.warning("Recovered prior had negative entries; clipped to 0 before renormalising")
    return pi / pi.sum()


def variance_inflation_factor(C: ConfusionMatrix, condition_threshold: float = CONDITION_THRESHOLD,
                              seed: int = POWER_ITERATION_SEED) -> float:
    """||(C^T)^-1||_op^2: worst-case covariance inflation of the corrected estimator"""
    inverse = _invert_confusion(C, condition_threshold)
    return operator_norm(inverse.x, seed=seed) ** 2


def interpolate_confusion(K: int, noise: float) -> ConfusionMatrix:
    """(1 - noise) I + noise J / K: identity at 0, uniform (singular) at 1"""
    if not 0.0 <= noise <= 1.0:
        raise ValidationError(f"noise must lie in [0, 1], got {noise}")
    entries = (1.0 - noise) * np.eye(K) + noise * np.full((K, K), 1.0 / K)
    return ConfusionMatrix(entries)


def correct_rates(trials: BinaryTrialTable, C: ConfusionMatrix, pi=None, strict: bool = False,
                  condition_threshold: float = CONDITION_THRESHOLD,
                  tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, Any]:
    """Plug-in and corrected rates for a trial table, with the inflation diagnostic"""
    plugin = plugin_estimate(trials, C.K, strict=strict)
    prior_source = 'given'
    if pi is None:
        pi = estimate_prior(C, plugin.tau_hat, condition_threshold)
        prior_source = 'estimated'
    corrected = corrected_estimator(C, plugin.tau_hat, plugin.m_hat, pi, condition_threshold, tolerance)
    return {
        'plugin': plugin.to_dict(),
        'pi': np.asarray(pi, dtype=float).tolist(),
        'prior_source': prior_source,
        'p_corrected': corrected.tolist(),
        'inflation_factor': variance_inflation_factor(C, condition_threshold),
    }
