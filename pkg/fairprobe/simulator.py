"""
Monte Carlo checks of the noisy-group estimators.

Data are generated under conditional independence of g_hat and Y given the
true group: G ~ Categorical(pi), Y ~ Bernoulli(p_G), g_hat ~ Categorical(C[G]).
Replication r always draws from a generator seeded by (seed, r), and
replication statistics are reduced pairwise in replication order, so the
report does not depend on how many worker threads ran.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .core_model import BinaryTrialTable, GroupModel
from .errors import FairProbeError, InvalidConfig, UndefinedPlugin, ZeroPrior
from .estimator import (
    bias_and_bound,
    corrected_estimator,
    interpolate_confusion,
    plugin_estimate,
    population_m,
    variance_inflation_factor,
)
from .linalg import operator_norm

logger = logging.getLogger(__name__)

CHECKS = ('prop1', 'prop2')
ABSOLUTE_SLACK = 1e-12


@dataclass(frozen=True)
class SimTolerances:
    se_multiplier: float = 4.0
    cov_slack: float = 0.05
    max_dropped_fraction: float = 0.1

    def to_dict(self) -> Dict[str, Any]:
        return {'se_multiplier': self.se_multiplier, 'cov_slack': self.cov_slack,
                'max_dropped_fraction': self.max_dropped_fraction}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'SimTolerances':
        data = data or {}
        return cls(
            se_multiplier=float(data.get('se_multiplier', 4.0)),
            cov_slack=float(data.get('cov_slack', 0.05)),
            max_dropped_fraction=float(data.get('max_dropped_fraction', 0.1)),
        )


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo experiment: a model, run size I, replications R and a seed"""
    model: GroupModel
    identities_per_run: int
    replications: int
    seed: int = 0
    tolerances: SimTolerances = field(default_factory=SimTolerances)
    checks: Tuple[str, ...] = CHECKS
    label: str = ''

    def __post_init__(self):
        if self.identities_per_run < 1:
            raise InvalidConfig(f"identities_per_run must be >= 1, got {self.identities_per_run}")
        if self.replications < 1:
            raise InvalidConfig(f"replications must be >= 1, got {self.replications}")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise InvalidConfig(f"Unknown checks {sorted(unknown)}; expected a subset of {list(CHECKS)}")
        object.__setattr__(self, 'checks', tuple(self.checks))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'label': self.label,
            'model': {'pi': self.model.pi.tolist(), 'p': self.model.p.tolist(),
                      'C': self.model.C.entries.tolist()},
            'identities_per_run': self.identities_per_run,
            'replications': self.replications,
            'seed': self.seed,
            'tolerances': self.tolerances.to_dict(),
            'checks': list(self.checks),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SimConfig':
        model = data['model']
        return cls(
            model=GroupModel.create(model['pi'], model['p'], model['C']),
            identities_per_run=int(data['identities_per_run']),
            replications=int(data['replications']),
            seed=int(data.get('seed', 0)),
            tolerances=SimTolerances.from_dict(data.get('tolerances')),
            checks=tuple(data.get('checks', CHECKS)),
            label=str(data.get('label', '')),
        )


@dataclass(frozen=True, eq=False)
class GroupStatistics:
    """Per observed group: replication statistics of m_hat next to the theory"""
    mean_m_hat: np.ndarray
    var_m_hat: np.ndarray
    se_m_hat: np.ndarray
    m_population: np.ndarray
    bias_closed_form: np.ndarray
    bias_empirical: np.ndarray
    bound: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {name: _vector(getattr(self, name)) for name in (
            'mean_m_hat', 'var_m_hat', 'se_m_hat', 'm_population',
            'bias_closed_form', 'bias_empirical', 'bound')}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GroupStatistics':
        return cls(**{name: _array(data[name]) for name in (
            'mean_m_hat', 'var_m_hat', 'se_m_hat', 'm_population',
            'bias_closed_form', 'bias_empirical', 'bound')})


@dataclass(frozen=True, eq=False)
class CorrectedStatistics:
    mean_p_corr: np.ndarray
    se_p_corr: np.ndarray
    cov_corrected: np.ndarray
    cov_plugin_numerator: np.ndarray
    norm_cov_corrected: float
    norm_cov_plugin_numerator: float
    inflation_factor: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mean_p_corr': _vector(self.mean_p_corr),
            'se_p_corr': _vector(self.se_p_corr),
            'cov_corrected': self.cov_corrected.tolist(),
            'cov_plugin_numerator': self.cov_plugin_numerator.tolist(),
            'norm_cov_corrected': self.norm_cov_corrected,
            'norm_cov_plugin_numerator': self.norm_cov_plugin_numerator,
            'inflation_factor': self.inflation_factor,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CorrectedStatistics':
        return cls(
            mean_p_corr=_array(data['mean_p_corr']),
            se_p_corr=_array(data['se_p_corr']),
            cov_corrected=_array(data['cov_corrected']),
            cov_plugin_numerator=_array(data['cov_plugin_numerator']),
            norm_cov_corrected=_scalar(data['norm_cov_corrected']),
            norm_cov_plugin_numerator=_scalar(data['norm_cov_plugin_numerator']),
            inflation_factor=_scalar(data['inflation_factor']),
        )


@dataclass(frozen=True, eq=False)
class SimReport:
    config: SimConfig
    replications_used: int = 0
    replications_dropped: int = 0
    groups: Optional[GroupStatistics] = None
    corrected: Optional[CorrectedStatistics] = None
    prop1_ok: Optional[bool] = None
    bound_ok: Optional[bool] = None
    prop2_unbiased_ok: Optional[bool] = None
    prop2_variance_ok: Optional[bool] = None
    errors: Tuple[Dict[str, Any], ...] = ()

    @property
    def ok(self) -> bool:
        verdicts = [v for v in (self.prop1_ok, self.bound_ok, self.prop2_unbiased_ok, self.prop2_variance_ok)
                    if v is not None]
        return not self.errors and bool(verdicts) and all(verdicts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config.to_dict(),
            'replications_used': self.replications_used,
            'replications_dropped': self.replications_dropped,
            'groups': None if self.groups is None else self.groups.to_dict(),
            'corrected': None if self.corrected is None else self.corrected.to_dict(),
            'verdicts': {
                'prop1_ok': self.prop1_ok,
                'bound_ok': self.bound_ok,
                'prop2_unbiased_ok': self.prop2_unbiased_ok,
                'prop2_variance_ok': self.prop2_variance_ok,
            },
            'errors': list(self.errors),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SimReport':
        verdicts = data.get('verdicts') or {}
        groups, corrected = data.get('groups'), data.get('corrected')
        return cls(
            config=SimConfig.from_dict(data['config']),
            replications_used=int(data.get('replications_used', 0)),
            replications_dropped=int(data.get('replications_dropped', 0)),
            groups=None if groups is None else GroupStatistics.from_dict(groups),
            corrected=None if corrected is None else CorrectedStatistics.from_dict(corrected),
            prop1_ok=verdicts.get('prop1_ok'),
            bound_ok=verdicts.get('bound_ok'),
            prop2_unbiased_ok=verdicts.get('prop2_unbiased_ok'),
            prop2_variance_ok=verdicts.get('prop2_variance_ok'),
            errors=tuple(data.get('errors', ())),
        )


def _vector(values: np.ndarray) -> List[Optional[float]]:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(values, dtype=float)]


def _array(values) -> np.ndarray:
    """Inverse of _vector: null entries come back as NaN"""
    return np.asarray(values, dtype=float)


def _scalar(value) -> float:
    return float('nan') if value is None else float(value)


# -- sampling -----------------------------------------------------------------

def replication_seed(seed: int, replication: int) -> np.random.SeedSequence:
    """Seed of replication r, derived from (seed, r) only"""
    return np.random.SeedSequence([int(seed), int(replication)])


def _last_positive(probabilities: np.ndarray) -> np.ndarray:
    """Index of the last strictly positive entry of each row"""
    positive = probabilities > 0
    K = probabilities.shape[-1]
    return K - 1 - np.argmax(positive[..., ::-1], axis=-1)


def sample_run(model: GroupModel, I: int, seed) -> BinaryTrialTable:
    """Draw I identities: true group, success indicator, then estimated group"""
    rng = np.random.default_rng(seed)
    pi = model.pi
    C = model.C.entries

    cdf = np.cumsum(pi)
    g_true = np.searchsorted(cdf[:-1], rng.random(I), side='right')
    g_true = np.minimum(g_true, _last_positive(pi))

    y = (rng.random(I) < model.p[g_true]).astype(np.int8)

    row_cdf = np.cumsum(C, axis=1)[:, :-1]
    g_hat = (rng.random(I)[:, None] >= row_cdf[g_true]).sum(axis=1)
    g_hat = np.minimum(g_hat, _last_positive(C)[g_true])

    return BinaryTrialTable(y=y, g_hat=g_hat, num_segments=model.K, g_true=g_true)


def random_group_model(K: int, rng: np.random.Generator, diagonal_strength: float = 0.6) -> GroupModel:
    """Seeded random model; rows of C put at least ``diagonal_strength`` on the diagonal"""
    pi = rng.dirichlet(np.ones(K))
    p = rng.uniform(0.0, 1.0, size=K)
    C = diagonal_strength * np.eye(K) + (1.0 - diagonal_strength) * rng.dirichlet(np.ones(K), size=K)
    C /= C.sum(axis=1, keepdims=True)
    return GroupModel.create(pi, p, C)


# -- reduction ----------------------------------------------------------------

def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Tree sum along axis 0 with a fixed split order"""
    n = values.shape[0]
    if n == 0:
        return np.zeros(values.shape[1:])
    if n == 1:
        return np.array(values[0], dtype=float)
    middle = n // 2
    return pairwise_sum(values[:middle]) + pairwise_sum(values[middle:])


def _mean_and_covariance(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    R = samples.shape[0]
    mean = pairwise_sum(samples) / R
    centered = samples - mean
    if R < 2:
        return mean, np.zeros((samples.shape[1], samples.shape[1]))
    outer = centered[:, :, None] * centered[:, None, :]
    return mean, pairwise_sum(outer) / (R - 1)


# -- replications -------------------------------------------------------------

def _one_replication(model: GroupModel, I: int, seed: int, r: int) -> Tuple[np.ndarray, np.ndarray]:
    trials = sample_run(model, I, replication_seed(seed, r))
    counts = np.bincount(trials.g_hat, minlength=model.K)
    if (counts == 0).any():
        nan = np.full(model.K, np.nan)
        return nan, counts / counts.sum()
    estimate = plugin_estimate(trials, model.K)
    return estimate.m_hat, estimate.tau_hat


def _run_replications(config: SimConfig, threads: int = 1,
                      show_progress: bool = False) -> Tuple[np.ndarray, np.ndarray, int]:
    """Stacked (m_hat, tau_hat) of the kept replications and the dropped count"""
    R = config.replications

    def work(r: int):
        return _one_replication(config.model, config.identities_per_run, config.seed, r)

    desc = f"simulate {config.label or 'config'}"
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(tqdm(pool.map(work, range(R)), total=R, desc=desc, disable=not show_progress))
    else:
        results = [work(r) for r in tqdm(range(R), desc=desc, disable=not show_progress)]

    m_hats = np.array([m for m, _ in results])
    tau_hats = np.array([t for _, t in results])
    kept = np.all(np.isfinite(m_hats), axis=1)
    dropped = int((~kept).sum())
    if dropped:
        logger.warning(f"{dropped} of {R} replications left a group empty and were dropped")
        if dropped > config.tolerances.max_dropped_fraction * R:
            raise UndefinedPlugin(f"{dropped} of {R} replications left a group empty "
                                  f"(limit {config.tolerances.max_dropped_fraction:.0%})",
                                  dropped=dropped, replications=R)
    return m_hats[kept], tau_hats[kept], dropped


def _group_statistics(model: GroupModel, m_hats: np.ndarray) -> GroupStatistics:
    R = m_hats.shape[0]
    mean, covariance = _mean_and_covariance(m_hats)
    variance = np.diag(covariance).copy()
    report = bias_and_bound(model, allow_degenerate=True)
    return GroupStatistics(
        mean_m_hat=mean,
        var_m_hat=variance,
        se_m_hat=np.sqrt(variance / R),
        m_population=report.m,
        bias_closed_form=report.bias,
        bias_empirical=mean - model.p,
        bound=report.bound,
    )


def _within(difference: np.ndarray, se: np.ndarray, multiplier: float) -> bool:
    return bool(np.all(np.abs(difference) <= multiplier * se + ABSOLUTE_SLACK))


def _evaluate(config: SimConfig, checks: Sequence[str], threads: int, show_progress: bool) -> SimReport:
    model = config.model
    tolerances = config.tolerances

    if 'prop1' in checks:
        bias_and_bound(model)  # DegenerateDiagonal surfaces before sampling
    population_m(model)
    inflation = None
    if 'prop2' in checks:
        if (model.pi <= 0).any():
            raise ZeroPrior("Correction needs a strictly positive prior",
                            groups=np.flatnonzero(model.pi <= 0).tolist())
        inflation = variance_inflation_factor(model.C)

    m_hats, tau_hats, dropped = _run_replications(config, threads, show_progress)
    used = m_hats.shape[0]
    groups = _group_statistics(model, m_hats)
    verdicts: Dict[str, Optional[bool]] = {}
    if used < 2:
        logger.warning("Fewer than 2 usable replications; verdicts left undecided")

    if 'prop1' in checks and used >= 2:
        verdicts['prop1_ok'] = _within(groups.mean_m_hat - groups.m_population, groups.se_m_hat,
                                       tolerances.se_multiplier)
        verdicts['bound_ok'] = bool(np.all(np.abs(groups.bias_closed_form) <= groups.bound + ABSOLUTE_SLACK))

    corrected = None
    if 'prop2' in checks:
        n_hats = tau_hats * m_hats
        p_corr = np.array([corrected_estimator(model.C, t, m, model.pi) for t, m in zip(tau_hats, m_hats)])
        mean_corr, cov_p_corr = _mean_and_covariance(p_corr)
        _, cov_corrected = _mean_and_covariance(p_corr * model.pi)
        _, cov_n = _mean_and_covariance(n_hats)
        corrected = CorrectedStatistics(
            mean_p_corr=mean_corr,
            se_p_corr=np.sqrt(np.diag(cov_p_corr) / max(used, 1)),
            cov_corrected=cov_corrected,
            cov_plugin_numerator=cov_n,
            norm_cov_corrected=operator_norm(cov_corrected),
            norm_cov_plugin_numerator=operator_norm(cov_n),
            inflation_factor=inflation,
        )
        if used >= 2:
            verdicts['prop2_unbiased_ok'] = _within(corrected.mean_p_corr - model.p, corrected.se_p_corr,
                                                    tolerances.se_multiplier)
            limit = (1.0 + tolerances.cov_slack) * inflation * corrected.norm_cov_plugin_numerator
            verdicts['prop2_variance_ok'] = bool(corrected.norm_cov_corrected <= limit + ABSOLUTE_SLACK)

    return SimReport(config=config, replications_used=used, replications_dropped=dropped,
                     groups=groups, corrected=corrected, **verdicts)


def verify_prop1(config: SimConfig, threads: int = 1, show_progress: bool = False) -> SimReport:
    """Plug-in consistency: mean m_hat within se_multiplier * SE of m, and the bias bound"""
    return _evaluate(config, ('prop1',), threads, show_progress)


def verify_prop2(config: SimConfig, threads: int = 1, show_progress: bool = False) -> SimReport:
    """Corrected estimator: unbiased for p, covariance within the inflation bound"""
    return _evaluate(config, ('prop2',), threads, show_progress)


def simulate(config: SimConfig, threads: int = 1, show_progress: bool = False) -> SimReport:
    """Run the config's checks on one set of replications, recording failures instead of raising"""
    checks = list(config.checks)
    errors: List[Dict[str, Any]] = []
    if 'prop2' in checks:
        try:
            variance_inflation_factor(config.model.C)
            if (config.model.pi <= 0).any():
                raise ZeroPrior("Correction needs a strictly positive prior")
        except FairProbeError as e:
            logger.warning(f"Skipping the corrected-estimator check for '{config.label}': {e}")
            errors.append(e.to_dict())
            checks.remove('prop2')
    if not checks:
        return SimReport(config=config, errors=tuple(errors))
    try:
        report = _evaluate(config, checks, threads, show_progress)
    except FairProbeError as e:
        logger.warning(f"Simulation '{config.label}' failed: {e}")
        return SimReport(config=config, errors=tuple(errors + [e.to_dict()]))
    if errors:
        report = replace(report, errors=tuple(errors))
    logger.info(f"Simulation '{config.label}' finished: {report.replications_used} replications used")
    return report


# -- sweeps -------------------------------------------------------------------

def noise_sweep_configs(base: SimConfig, noise_levels: Sequence[float]) -> List[SimConfig]:
    """Same experiment along the identity-to-uniform confusion path"""
    configs = []
    for noise in noise_levels:
        C = interpolate_confusion(base.model.K, noise)
        model = GroupModel.create(base.model.pi, base.model.p, C)
        configs.append(replace(base, model=model, label=f"{base.label or 'noise'}={noise:g}"))
    return configs


def size_sweep_configs(base: SimConfig, sizes: Sequence[int]) -> List[SimConfig]:
    return [replace(base, identities_per_run=int(I), label=f"{base.label or 'I'}={int(I)}") for I in sizes]


def results_table(reports: Sequence[SimReport]) -> pd.DataFrame:
    """One row per (config, group), ready for external plotting"""
    columns = ['config_index', 'label', 'identities_per_run', 'replications', 'group',
               'm_population', 'mean_m_hat', 'se_m_hat', 'bias_closed_form', 'bias_empirical', 'bound',
               'mean_p_corr', 'se_p_corr', 'inflation_factor', 'prop1_ok', 'bound_ok',
               'prop2_unbiased_ok', 'prop2_variance_ok', 'error']
    rows = []
    for index, report in enumerate(reports):
        config = report.config
        error = '; '.join(e['error'] for e in report.errors)
        for g in range(config.model.K):
            row = {
                'config_index': index,
                'label': config.label,
                'identities_per_run': config.identities_per_run,
                'replications': config.replications,
                'group': g,
                'prop1_ok': report.prop1_ok,
                'bound_ok': report.bound_ok,
                'prop2_unbiased_ok': report.prop2_unbiased_ok,
                'prop2_variance_ok': report.prop2_variance_ok,
                'error': error,
            }
            if report.groups is not None:
                for name in ('m_population', 'mean_m_hat', 'se_m_hat', 'bias_closed_form',
                             'bias_empirical', 'bound'):
                    row[name] = float(getattr(report.groups, name)[g])
            if report.corrected is not None:
                row['mean_p_corr'] = float(report.corrected.mean_p_corr[g])
                row['se_p_corr'] = float(report.corrected.se_p_corr[g])
                row['inflation_factor'] = report.corrected.inflation_factor
            rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def sweep(configs: Sequence[SimConfig], threads: int = 1,
          show_progress: bool = False) -> Tuple[List[SimReport], pd.DataFrame]:
    """Simulate every config in order; a failing config is recorded and the sweep continues"""
    reports = [simulate(config, threads=threads, show_progress=show_progress)
               for config in tqdm(configs, desc='sweep', disable=not show_progress or len(configs) < 2)]
    failed = sum(1 for r in reports if r.errors)
    if failed:
        logger.warning(f"{failed} of {len(reports)} sweep configs recorded errors")
    return reports, results_table(reports)


def standard_error_ratio(reports: Sequence[SimReport]) -> List[float]:
    """Mean SE of m_hat per report times sqrt(I); roughly constant when SE shrinks as 1/sqrt(I)"""
    return [float(np.mean(r.groups.se_m_hat) * math.sqrt(r.config.identities_per_run))
            for r in reports if r.groups is not None]
