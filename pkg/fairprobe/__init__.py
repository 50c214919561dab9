"""
fairprobe: auditing toolkit for demographic attribute inference.

Metrics over per-image predictions grouped by identity, estimators of
per-group rates under noisy group labels with their Monte Carlo checks, and
probing heads over precomputed face embeddings.
"""

__version__ = "0.1.0"

from .core_model import (
    BinaryTrialTable,
    ConfusionMatrix,
    GroupModel,
    SampleRow,
    SampleTable,
    Taxonomy,
    empirical_confusion,
    validate_simplex,
)
from .errors import FairProbeError, NoConvergenceWarning
from .estimator import (
    bias_and_bound,
    correct_rates,
    corrected_estimator,
    plugin_estimate,
    variance_inflation_factor,
)
from .metrics import GroupRates, RateKind, RateScale
from .probing import EmbeddingSet, HeadKind, SvmHead, knn_label, predict, train_head
from .simulator import SimConfig, SimReport, simulate, sweep

__all__ = [
    '__version__',
    'BinaryTrialTable',
    'ConfusionMatrix',
    'EmbeddingSet',
    'FairProbeError',
    'GroupModel',
    'GroupRates',
    'HeadKind',
    'NoConvergenceWarning',
    'RateKind',
    'RateScale',
    'SampleRow',
    'SampleTable',
    'SimConfig',
    'SimReport',
    'SvmHead',
    'Taxonomy',
    'bias_and_bound',
    'correct_rates',
    'corrected_estimator',
    'empirical_confusion',
    'knn_label',
    'plugin_estimate',
    'predict',
    'simulate',
    'sweep',
    'train_head',
    'validate_simplex',
    'variance_inflation_factor',
]
