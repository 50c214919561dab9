"""
Audit report: accuracy, fairness, robustness and (optionally) the noisy-group
estimator results for one labelled prediction table.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .core_model import (
    DEFAULT_TOLERANCE,
    BinaryTrialTable,
    ConfusionMatrix,
    GroupModel,
    SampleTable,
    Taxonomy,
    empirical_confusion,
)
from .errors import EmptyRow, EstimationError, FairProbeError, ZeroMax, ZeroMean
from .estimator import CONDITION_THRESHOLD, bias_and_bound, correct_rates
from .metrics import (
    RateScale,
    degree_of_bias,
    degree_of_bias_relative,
    demographic_parity,
    equalized_odds,
    macro_accuracy,
    micro_accuracy,
    one_vs_rest_rates,
    per_group_accuracy,
    robustness_scores,
)

logger = logging.getLogger(__name__)


@dataclass
class AuditReport:
    taxonomy: Dict[str, Any]
    scale: str
    accuracy: Optional[Dict[str, Any]] = None
    fairness: Optional[Dict[str, Any]] = None
    robustness: Optional[Dict[str, Any]] = None
    confusion: Optional[Dict[str, Any]] = None
    estimator: Optional[Dict[str, Any]] = None
    provenance: Dict[str, Any] = field(default_factory=dict)
    notes: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'taxonomy': self.taxonomy,
            'scale': self.scale,
            'accuracy': self.accuracy,
            'fairness': self.fairness,
            'robustness': self.robustness,
            'confusion': self.confusion,
            'estimator': self.estimator,
            'provenance': self.provenance,
            'notes': self.notes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AuditReport':
        return cls(
            taxonomy=dict(data['taxonomy']),
            scale=data['scale'],
            accuracy=data.get('accuracy'),
            fairness=data.get('fairness'),
            robustness=data.get('robustness'),
            confusion=data.get('confusion'),
            estimator=data.get('estimator'),
            provenance=dict(data.get('provenance') or {}),
            notes=list(data.get('notes') or []),
        )


def _named(values, taxonomy: Taxonomy) -> Dict[str, float]:
    return {name: float(v) for name, v in zip(taxonomy.segments, values)}


def _note(report: AuditReport, error: FairProbeError, block: str) -> None:
    logger.warning(f"{block}: {error}")
    entry = error.to_dict()
    entry['block'] = block
    report.notes.append(entry)


def _fairness_block(table: SampleTable, taxonomy: Taxonomy, scale: float, report: AuditReport) -> Dict[str, Any]:
    rates = per_group_accuracy(table, taxonomy)
    block: Dict[str, Any] = {'dob': degree_of_bias(rates) * scale}
    try:
        block['dob_relative'] = degree_of_bias_relative(rates)
    except ZeroMean as e:
        block['dob_relative'] = None
        _note(report, e, 'fairness')

    try:
        parity = demographic_parity(rates)
        block['dpd'], block['dpr'] = parity.difference * scale, parity.ratio
    except ZeroMax as e:
        block['dpd'], block['dpr'] = e.partial['dpd'] * scale, None
        _note(report, e, 'fairness')

    tpr, fpr = one_vs_rest_rates(table, taxonomy)
    block['tpr'] = _named(tpr.rates * scale, taxonomy)
    block['fpr'] = _named(fpr.rates * scale, taxonomy)
    try:
        odds = equalized_odds(tpr, fpr)
        block['eod'], block['eor'] = odds.difference * scale, odds.ratio
    except ZeroMax as e:
        block['eod'] = e.partial['eod'] * scale
        block['eor'] = e.partial.get('eor')
        _note(report, e, 'fairness')
    return block


def robustness_block(table: SampleTable, taxonomy: Taxonomy, min_images: int = 1) -> Dict[str, Any]:
    return robustness_scores(table, taxonomy, min_images).to_dict()


def estimator_block(trials: BinaryTrialTable, C: ConfusionMatrix, pi=None, strict: bool = False,
                    condition_threshold: float = CONDITION_THRESHOLD,
                    tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, Any]:
    """Plug-in and corrected rates; the bias report uses the corrected rates as a stand-in for p"""
    block = correct_rates(trials, C, pi, strict=strict, condition_threshold=condition_threshold,
                          tolerance=tolerance)
    p_estimate = np.clip(np.asarray(block['p_corrected']), 0.0, 1.0)
    model = GroupModel.create(block['pi'], p_estimate, C, tolerance=tolerance)
    block['bias_report'] = bias_and_bound(model, allow_degenerate=True).to_dict()
    return block


def build_audit_report(table: SampleTable, taxonomy: Taxonomy, percent: bool = True, min_images: int = 1,
                       trials: Optional[BinaryTrialTable] = None, confusion: Optional[ConfusionMatrix] = None,
                       pi=None, strict: bool = False, condition_threshold: float = CONDITION_THRESHOLD,
                       tolerance: float = DEFAULT_TOLERANCE,
                       provenance: Optional[Dict[str, Any]] = None) -> AuditReport:
    """Every block the inputs allow; a block that cannot be computed is left null with a note.

    Accuracies, DoB and the DPD/EOD differences are in percentage points when
    ``percent`` is set; ratios and robustness scores are always unitless.
    """
    rate_scale = RateScale.PERCENT if percent else RateScale.UNIT
    scale = rate_scale.upper
    report = AuditReport(taxonomy=taxonomy.to_dict(), scale=rate_scale.value, provenance=provenance or {})

    if table.has_true_labels and table.has_predictions:
        rates = per_group_accuracy(table, taxonomy)
        report.accuracy = {
            'micro': micro_accuracy(table) * scale,
            'macro': macro_accuracy(table, taxonomy) * scale,
            'per_group': _named(rates.rates * scale, taxonomy),
        }
        report.fairness = _fairness_block(table, taxonomy, scale, report)
        try:
            report.confusion = empirical_confusion(table, taxonomy).to_dict()
        except EmptyRow as e:
            _note(report, e, 'confusion')
    else:
        table.require_labels(predicted=True)
        logger.info("No complete true labels; accuracy and fairness blocks skipped")

    report.robustness = robustness_block(table, taxonomy, min_images)

    if trials is not None and confusion is not None:
        try:
            report.estimator = estimator_block(trials, confusion, pi, strict=strict,
                                               condition_threshold=condition_threshold, tolerance=tolerance)
        except EstimationError as e:
            if strict:
                raise
            _note(report, e, 'estimator')
    logger.info(f"Audit report built over {len(table)} images")
    return report
