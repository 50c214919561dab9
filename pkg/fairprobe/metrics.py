"""
Accuracy, fairness and robustness metrics.

Fairness metrics take per-group rates (GroupRates); robustness metrics look at
how consistently the images of one identity receive the same predicted label.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import entropy

from .core_model import MISSING, BinaryTrialTable, SampleTable, Taxonomy
from .errors import (
    DimensionMismatch,
    EmptyGroup,
    EmptyTable,
    InvalidTable,
    ValidationError,
    ZeroMax,
    ZeroMean,
)

logger = logging.getLogger(__name__)


class RateKind(Enum):
    ACCURACY = "accuracy"
    FMR = "FMR"
    FNMR = "FNMR"
    TPR = "TPR"
    FPR = "FPR"


class RateScale(Enum):
    UNIT = "unit"
    PERCENT = "percent"

    @property
    def upper(self) -> float:
        return 100.0 if self is RateScale.PERCENT else 1.0


@dataclass(frozen=True, eq=False)
class GroupRates:
    """One rate per segment, tagged with what it measures and its scale"""
    rates: np.ndarray
    kind: RateKind = RateKind.ACCURACY
    scale: RateScale = RateScale.UNIT

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float, copy=True)
        if rates.ndim != 1 or rates.size == 0:
            raise InvalidTable(f"Rates must be a non-empty vector, got shape {rates.shape}")
        if not np.all(np.isfinite(rates)) or rates.min() < 0 or rates.max() > self.scale.upper:
            raise InvalidTable(f"{self.kind.value} rates must lie in [0, {self.scale.upper:g}]",
                               rates=rates.tolist())
        rates.setflags(write=False)
        object.__setattr__(self, 'rates', rates)

    @property
    def K(self) -> int:
        return len(self.rates)

    def as_percent(self) -> 'GroupRates':
        if self.scale is RateScale.PERCENT:
            return self
        return GroupRates(self.rates * 100.0, self.kind, RateScale.PERCENT)

    def to_dict(self) -> Dict[str, Any]:
        return {'rates': self.rates.tolist(), 'kind': self.kind.value, 'scale': self.scale.value}


@dataclass(frozen=True)
class ParityResult:
    difference: float
    ratio: float


@dataclass(frozen=True)
class RobustnessScores:
    """HomE (lower is better) and majority accuracies (higher is better)"""
    home: Optional[float]
    mama_raw: float
    mima_raw: float
    mama_norm: float
    mima_norm: float
    identities_used: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'home': self.home,
            'mama_raw': self.mama_raw,
            'mima_raw': self.mima_raw,
            'mama_norm': self.mama_norm,
            'mima_norm': self.mima_norm,
            'identities_used': self.identities_used,
        }


@dataclass(frozen=True, eq=False)
class LabelDistributions:
    """Per-identity predicted-label counts and relative frequencies"""
    identities: List[str]
    counts: np.ndarray
    frequencies: np.ndarray

    def __getitem__(self, identity: str) -> np.ndarray:
        return self.frequencies[self.identities.index(identity)]

    def __len__(self) -> int:
        return len(self.identities)

    @property
    def images_per_identity(self) -> np.ndarray:
        return self.counts.sum(axis=1)


# -- accuracy -----------------------------------------------------------------

def micro_accuracy(table: SampleTable) -> float:
    """Fraction of rows whose prediction equals the true segment"""
    if len(table) == 0:
        raise EmptyTable("Cannot compute accuracy of an empty table")
    table.require_labels(true=True, predicted=True)
    return float(np.mean(table.true_segments == table.predicted_segments))


def per_group_accuracy(table: SampleTable, taxonomy: Taxonomy) -> GroupRates:
    """Accuracy restricted to the rows of each true segment"""
    if len(table) == 0:
        raise EmptyTable("Cannot compute accuracy of an empty table")
    table.require_labels(true=True, predicted=True)
    K = taxonomy.K
    totals = np.bincount(table.true_segments, minlength=K)
    correct = np.bincount(table.true_segments[table.true_segments == table.predicted_segments], minlength=K)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise EmptyGroup(f"Segments without rows: {[taxonomy.name_of(int(g)) for g in empty]}",
                         groups=[taxonomy.name_of(int(g)) for g in empty])
    return GroupRates(correct / totals, RateKind.ACCURACY)


def macro_accuracy(table: SampleTable, taxonomy: Taxonomy) -> float:
    """Mean of per-group accuracies; every segment weighs the same"""
    return float(np.mean(per_group_accuracy(table, taxonomy).rates))


# -- fairness -----------------------------------------------------------------

def _require_groups(rates: GroupRates) -> np.ndarray:
    if rates.K < 2:
        raise ValidationError(f"Fairness metrics need at least 2 groups, got {rates.K}")
    return rates.rates


def degree_of_bias(rates: GroupRates) -> float:
    """Population standard deviation of the per-group rates, on the input scale"""
    return float(np.std(_require_groups(rates), ddof=0))


def degree_of_bias_relative(rates: GroupRates) -> float:
    """sqrt(mean((1 - r_g / mean(r))^2)), the mean-normalised variant"""
    r = rates.rates
    mean = float(np.mean(r))
    if mean <= 0:
        raise ZeroMean("Relative degree of bias is undefined when the mean rate is 0")
    return float(np.sqrt(np.mean((1.0 - r / mean) ** 2)))


def demographic_parity(rates: GroupRates) -> ParityResult:
    """Difference p_max - p_min and ratio p_min / p_max across groups"""
    r = _require_groups(rates)
    p_min, p_max = float(r.min()), float(r.max())
    dpd = p_max - p_min
    if p_max <= 0:
        raise ZeroMax("Demographic parity ratio is undefined: every rate is 0",
                      partial={'dpd': dpd}, kind=rates.kind.value)
    return ParityResult(difference=dpd, ratio=p_min / p_max)


def equalized_odds(rates_tpr: GroupRates, rates_fpr: GroupRates) -> ParityResult:
    """Worst-case difference and ratio over the TPR and FPR parity results.

    A zero minimum with a positive maximum gives ratio 0 (FPR = (0, 0.2) yields
    EOR = 0, not ZeroMax); ZeroMax is raised only when every rate of TPR or FPR is 0.
    """
    if rates_tpr.K != rates_fpr.K:
        raise DimensionMismatch(f"TPR has {rates_tpr.K} groups, FPR has {rates_fpr.K}")
    differences = []
    ratios = []
    undefined = []
    for name, rates in (('TPR', rates_tpr), ('FPR', rates_fpr)):
        r = _require_groups(rates)
        differences.append(float(r.max() - r.min()))
        if r.max() <= 0:
            undefined.append(name)
        else:
            ratios.append(float(r.min() / r.max()))

    eod = max(differences)
    if undefined:
        raise ZeroMax(f"Equalized odds ratio is undefined: every {'/'.join(undefined)} rate is 0",
                      partial={'eod': eod, 'eor': min(ratios) if ratios else None},
                      metrics=undefined)
    return ParityResult(difference=eod, ratio=min(ratios))


def one_vs_rest_rates(table: SampleTable, taxonomy: Taxonomy) -> Tuple[GroupRates, GroupRates]:
    """Per segment g: TPR = recall of g, FPR = share of non-g rows predicted as g"""
    tpr = per_group_accuracy(table, taxonomy)
    K = taxonomy.K
    predicted = np.bincount(table.predicted_segments, minlength=K)
    true_positive = np.bincount(table.true_segments[table.true_segments == table.predicted_segments],
                                minlength=K)
    negatives = len(table) - np.bincount(table.true_segments, minlength=K)
    fpr = (predicted - true_positive) / negatives
    return GroupRates(tpr.rates, RateKind.TPR), GroupRates(fpr, RateKind.FPR)


def group_rates(trials: BinaryTrialTable, K: int, kind: RateKind = RateKind.ACCURACY,
                use_true_groups: bool = True) -> GroupRates:
    """Per-group mean of the performance indicator Y.

    With Y = 1{impostor accepted} this is FMR_g, with Y = 1{genuine rejected}
    it is FNMR_g. Groups come from g_true when available and complete,
    otherwise from the estimated g_hat.
    """
    if len(trials) == 0:
        raise EmptyTable("Trial table is empty")
    groups = trials.g_hat
    if use_true_groups and trials.g_true is not None and not (trials.g_true == MISSING).any():
        groups = trials.g_true
    totals = np.bincount(groups, minlength=K)
    hits = np.bincount(groups[trials.y == 1], minlength=K)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise EmptyGroup(f"Groups without trials: {empty.tolist()}", groups=empty.tolist())
    return GroupRates(hits / totals, kind)


# -- robustness ---------------------------------------------------------------

def label_distribution_per_identity(table: SampleTable, taxonomy: Taxonomy,
                                    min_images: int = 1) -> LabelDistributions:
    """Relative frequency of each predicted label among an identity's images"""
    if len(table) == 0:
        raise EmptyTable("Cannot compute label distributions of an empty table")
    table.require_labels(predicted=True)
    K = taxonomy.K
    identities, inverse = table.identity_index()
    counts = np.bincount(inverse * K + table.predicted_segments,
                         minlength=len(identities) * K).reshape(len(identities), K)

    sizes = counts.sum(axis=1)
    keep = sizes >= min_images
    if not keep.any():
        raise EmptyTable(f"No identity has at least {min_images} images")
    if not keep.all():
        logger.info(f"Ignoring {int((~keep).sum())} identities with fewer than {min_images} images")
        identities = [i for i, k in zip(identities, keep) if k]
        counts = counts[keep]
        sizes = sizes[keep]
    return LabelDistributions(identities=identities, counts=counts, frequencies=counts / sizes[:, None])


def homogeneity_entropy(table: SampleTable, taxonomy: Taxonomy, min_images: int = 1) -> float:
    """Mean over identities of the label-distribution entropy normalised by log K"""
    K = taxonomy.K
    if K < 2:
        raise ValidationError("Homogeneity entropy needs K >= 2 (log K normaliser)")
    distributions = label_distribution_per_identity(table, taxonomy, min_images)
    per_identity = entropy(distributions.counts, axis=1) / math.log(K)
    return float(np.clip(np.mean(per_identity), 0.0, 1.0))


def _normalise_majority(raw: float, K: int) -> float:
    return float(np.clip((raw - 1.0 / K) * K / (K - 1), 0.0, 1.0))


def majority_accuracies(table: SampleTable, taxonomy: Taxonomy, min_images: int = 1) -> RobustnessScores:
    """Image-weighted (MaMA) and identity-averaged (MiMA) majority-label fractions"""
    K = taxonomy.K
    distributions = label_distribution_per_identity(table, taxonomy, min_images)
    majority = distributions.counts.max(axis=1)
    sizes = distributions.images_per_identity

    mama_raw = float(majority.sum() / sizes.sum())
    mima_raw = float(np.mean(majority / sizes))
    return RobustnessScores(
        home=None,
        mama_raw=mama_raw,
        mima_raw=mima_raw,
        mama_norm=_normalise_majority(mama_raw, K),
        mima_norm=_normalise_majority(mima_raw, K),
        identities_used=len(distributions),
    )


def robustness_scores(table: SampleTable, taxonomy: Taxonomy, min_images: int = 1) -> RobustnessScores:
    """HomE plus MaMA/MiMA over the identities with at least ``min_images`` images"""
    majority = majority_accuracies(table, taxonomy, min_images)
    home = homogeneity_entropy(table, taxonomy, min_images)
    logger.debug(f"Robustness over {majority.identities_used} identities: HomE={home:.4f}")
    return RobustnessScores(
        home=home,
        mama_raw=majority.mama_raw,
        mima_raw=majority.mima_raw,
        mama_norm=majority.mama_norm,
        mima_norm=majority.mima_norm,
        identities_used=majority.identities_used,
    )
