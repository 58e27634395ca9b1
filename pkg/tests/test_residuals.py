#!/usr/bin/env python3
"""
Tests for the A, B, R residuals and their scaling fits
"""

import unittest

import numpy as np

from flowlab.errors import DegenerateFit
from flowlab.field_catalog import get_pair
from flowlab.measure_lab import MeasureSource, sample_reference_measure
from flowlab.reporting import ResidualKind
from flowlab.residuals import (gronwall_audit, ladder_rows, residual_A, residual_B, residual_ladder,
                               residual_R, residual_R_integral, scaling_exponent, weighted_norm)

BOX = [(-2.0, 2.0)] * 3
DELTAS = [2.0 ** -k for k in range(3, 11)]


def box_ensemble(n, seed=7):
    return sample_reference_measure(MeasureSource.uniform_box(BOX), n, seed)


class TestWeightedNorm(unittest.TestCase):

    def test_rows_use_euclidean_norm(self):
        values = np.array([[3.0, 4.0], [0.0, 0.0]])
        self.assertAlmostEqual(weighted_norm(values, np.array([0.5, 0.5]), 1.0), 2.5)
        self.assertAlmostEqual(weighted_norm(values, np.array([0.5, 0.5]), 2.0), np.sqrt(12.5))
        self.assertEqual(weighted_norm(values, np.array([0.5, 0.5]), np.inf), 5.0)


class TestLadders(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.pair = get_pair("graph_foliation(f=sin x cos y)")
        cls.ens = box_ensemble(2000)

    def test_zero_increment(self):
        for report in (residual_A(self.pair, self.ens, 0.3, 0.3, 0.5),
                       residual_B(self.pair, self.ens, 0.3, 0.3, 0.5),
                       residual_R(self.pair, self.ens, 0.3, 0.3, 0.5)):
            self.assertEqual(report.value, 0.0)

    def test_A_is_first_order(self):
        reports = residual_ladder("A", self.pair, self.ens, 0.3, DELTAS, 0.5)
        self.assertTrue(all(r.kind is ResidualKind.A for r in reports))
        fit = scaling_exponent(reports)
        self.assertTrue(fit.within(0.9, 1.1), fit)

    def test_B_is_second_order_at_zero_time(self):
        fit = scaling_exponent(residual_ladder("B", self.pair, self.ens, 0.3, DELTAS, 0.0))
        self.assertTrue(fit.within(1.8, 2.2), fit)

    def test_R_is_second_order(self):
        fit = scaling_exponent(residual_ladder("r", self.pair, self.ens, 0.3, DELTAS, 0.5))
        self.assertTrue(fit.within(1.8, 2.2), fit)
        self.assertLessEqual(fit.ci_low, fit.slope)
        self.assertGreaterEqual(fit.ci_high, fit.slope)

    def test_ladder_rows(self):
        reports = residual_ladder("A", self.pair, self.ens, 0.3, DELTAS[:2], 0.5)
        rows = ladder_rows(reports)
        self.assertEqual([r[0] for r in rows], DELTAS[:2])
        self.assertEqual(rows[0][2], 2000)

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            residual_ladder("C", self.pair, self.ens, 0.3, DELTAS, 0.5)


class TestScalingExponent(unittest.TestCase):

    def test_exact_power_law(self):
        fit = scaling_exponent(deltas=DELTAS, values=[3.0 * d ** 2 for d in DELTAS])
        self.assertAlmostEqual(fit.slope, 2.0, places=9)
        self.assertAlmostEqual(np.exp(fit.intercept), 3.0, places=6)
        self.assertEqual(fit.count, len(DELTAS))

    def test_too_few_points(self):
        with self.assertRaises(DegenerateFit):
            scaling_exponent(deltas=DELTAS[:3], values=[1.0, 0.5, 0.25])

    def test_nonpositive_value(self):
        with self.assertRaises(DegenerateFit):
            scaling_exponent(deltas=DELTAS, values=[0.0] + DELTAS[1:])

    def test_narrow_ladder(self):
        deltas = [0.1, 0.08, 0.05, 0.02]
        with self.assertRaises(DegenerateFit):
            scaling_exponent(deltas=deltas, values=deltas)


class TestLinearPair(unittest.TestCase):

    def setUp(self):
        self.pair = get_pair("commuting_linear")
        self.ens = box_ensemble(500, seed=11)

    def test_gronwall_bound_holds(self):
        audit = gronwall_audit(self.pair, self.ens, 0.2, 0.45, T=1.0)
        self.assertAlmostEqual(audit.lipschitz, 2.0, places=9)
        self.assertIn(0.0, audit.times.tolist())
        self.assertGreater(audit.initial_norm, 0.0)
        self.assertTrue(audit.holds)

    def test_linear_second_field_has_no_remainder(self):
        report = residual_R(self.pair, self.ens, 0.2, 0.45, 0.7)
        self.assertLessEqual(report.value, 1e-12)
        integral = residual_R_integral(self.pair, self.ens, 0.2, 0.45, T=1.0, nodes=4)
        self.assertLessEqual(integral.value, 1e-10)
        self.assertEqual(integral.params["nodes"], 4)

    def test_integral_needs_distinct_times(self):
        with self.assertRaises(ValueError):
            residual_R_integral(self.pair, self.ens, 0.2, 0.2, T=1.0)


if __name__ == "__main__":
    unittest.main()
