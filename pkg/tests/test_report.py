"""
Tests for the audit report blocks.
"""

import unittest

import numpy as np

from fairprobe.core_model import BinaryTrialTable, ConfusionMatrix, SampleTable, Taxonomy
from fairprobe.errors import InvalidModel, MissingLabel, SingularConfusion
from fairprobe.report import build_audit_report

TAXONOMY = Taxonomy('gender', ('female', 'male'))


def perfect_table():
    return SampleTable(['i0', 'i1', 'i2', 'i3'], ['p', 'p', 'q', 'q'], [0, 0, 1, 1], [0, 0, 1, 1], 2)


class TestAuditReport(unittest.TestCase):
    def test_perfect_predictions(self):
        report = build_audit_report(perfect_table(), TAXONOMY).to_dict()
        self.assertEqual(report['accuracy']['micro'], 100.0)
        self.assertEqual(report['fairness']['dob'], 0.0)
        self.assertEqual(report['fairness']['dpr'], 1.0)
        # every FPR is 0, so the ratio half comes from TPR alone and a note is kept
        self.assertEqual(report['fairness']['eod'], 0.0)
        self.assertEqual(report['fairness']['eor'], 1.0)
        self.assertEqual([n['error'] for n in report['notes']], ['ZeroMax'])
        self.assertEqual(report['confusion']['entries'], [[1.0, 0.0], [0.0, 1.0]])
        self.assertEqual(report['robustness']['home'], 0.0)
        self.assertIsNone(report['estimator'])

    def test_unit_scale(self):
        report = build_audit_report(perfect_table(), TAXONOMY, percent=False)
        self.assertEqual(report.scale, 'unit')
        self.assertEqual(report.accuracy['micro'], 1.0)

    def test_predictions_only(self):
        table = SampleTable(['i0', 'i1'], ['p', 'p'], None, [0, 1], 2)
        report = build_audit_report(table, TAXONOMY)
        self.assertIsNone(report.accuracy)
        self.assertIsNone(report.fairness)
        self.assertAlmostEqual(report.robustness['home'], 1.0)

    def test_nothing_to_report(self):
        table = SampleTable(['i0'], ['p'], [0], None, 2)
        with self.assertRaises(MissingLabel):
            build_audit_report(table, TAXONOMY)

    def test_estimator_block(self):
        trials = BinaryTrialTable(y=[1, 1, 0, 1, 0, 0], g_hat=[0, 0, 0, 1, 1, 1], num_segments=2)
        C = ConfusionMatrix(np.array([[0.9, 0.1], [0.1, 0.9]]))
        report = build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C, pi=[0.5, 0.5])
        block = report.estimator
        self.assertEqual(block['prior_source'], 'given')
        self.assertEqual(len(block['bias_report']['bound']), 2)
        self.assertAlmostEqual(block['inflation_factor'], 1.5625, places=6)

    def test_singular_confusion(self):
        trials = BinaryTrialTable(y=[1, 0], g_hat=[0, 1], num_segments=2)
        C = ConfusionMatrix(np.full((2, 2), 0.5))
        report = build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C)
        self.assertIsNone(report.estimator)
        self.assertEqual(report.notes[-1]['error'], 'SingularConfusion')
        self.assertEqual(report.notes[-1]['block'], 'estimator')
        with self.assertRaises(SingularConfusion):
            build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C, strict=True)

    def test_condition_threshold(self):
        trials = BinaryTrialTable(y=[1, 1, 0, 1, 0, 0], g_hat=[0, 0, 0, 1, 1, 1], num_segments=2)
        C = ConfusionMatrix(np.array([[0.6, 0.4], [0.4, 0.6]]))
        self.assertIsNotNone(build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C).estimator)
        report = build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C, condition_threshold=2.0)
        self.assertIsNone(report.estimator)
        self.assertEqual(report.notes[-1]['error'], 'SingularConfusion')
        with self.assertRaises(SingularConfusion):
            build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=C, condition_threshold=2.0,
                               strict=True)

    def test_prior_off_simplex(self):
        trials = BinaryTrialTable(y=[1, 0], g_hat=[0, 1], num_segments=2)
        with self.assertRaises(InvalidModel):
            build_audit_report(perfect_table(), TAXONOMY, trials=trials, confusion=ConfusionMatrix(np.eye(2)),
                               pi=[5, 5])


if __name__ == '__main__':
    unittest.main()
