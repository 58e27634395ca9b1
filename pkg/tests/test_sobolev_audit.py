#!/usr/bin/env python3
"""
Tests for pointwise Sobolev audits
"""

import unittest

import numpy as np

from flowlab.errors import ZeroDenominator
from flowlab.field_catalog import get_audit_function
from flowlab.field_core import Hyperplane, ScalarFunctionSpec, SingularSet
from flowlab.grids import GridSpec
from flowlab.sobolev_audit import (FIRST_SHARP, FIRST_STAR, ORDERS, SECOND, SECOND_LINEAR,
                                   sample_point_pairs, sobolev_pointwise_audit)


class TestPointPairs(unittest.TestCase):

    def setUp(self):
        self.spec = GridSpec.cube(-2.0, 2.0, 32, 2)

    def test_pairs_respect_distance(self):
        xs, ys = sample_point_pairs(self.spec, 1000, seed=1, max_distance=0.5)
        dist = np.linalg.norm(ys - xs, axis=1)
        self.assertTrue(np.all(dist > 0.0))
        self.assertTrue(np.all(dist <= 0.5 + 1e-12))
        self.assertTrue(np.all(self.spec.inside(ys)))

    def test_pairs_are_seeded(self):
        a = sample_point_pairs(self.spec, 50, seed=2, max_distance=0.5)
        b = sample_point_pairs(self.spec, 50, seed=2, max_distance=0.5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_distance_too_large(self):
        with self.assertRaises(ValueError):
            sample_point_pairs(self.spec, 10, seed=0, max_distance=2.5)


class TestAudits(unittest.TestCase):

    def setUp(self):
        self.spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        self.xs, self.ys = sample_point_pairs(self.spec, 500, seed=3, max_distance=0.5)

    def test_linear_first_order_is_exact(self):
        f = get_audit_function("linear", 2)
        for order in (FIRST_SHARP, SECOND_LINEAR):
            report = sobolev_pointwise_audit(f, order, self.xs, self.ys, self.spec)
            self.assertLessEqual(report.max_lhs, 1e-12, order)

    def test_quadratic_second_order_is_exact(self):
        f = get_audit_function("quadratic", 2)
        report = sobolev_pointwise_audit(f, SECOND, self.xs, self.ys, self.spec)
        self.assertLessEqual(report.max_lhs, 1e-11)
        self.assertEqual(report.skipped, 0)

    def test_all_orders_report_every_pair(self):
        f = get_audit_function("bump", 2)
        for order in ORDERS:
            report = sobolev_pointwise_audit(f, order, self.xs, self.ys, self.spec)
            self.assertEqual(report.pair_count, 500)
            self.assertTrue(np.all(report.ratios >= 0.0))
            self.assertTrue(np.isfinite(report.max_ratio))

    def test_first_star_constant_is_stable_under_refinement(self):
        f = get_audit_function("bump", 2)
        coarse = GridSpec.cube(-2.0, 2.0, 32, 2)
        fine = GridSpec.cube(-2.0, 2.0, 64, 2)
        xs, ys = sample_point_pairs(coarse, 2000, seed=4, max_distance=0.5)
        a = sobolev_pointwise_audit(f, FIRST_STAR, xs, ys, coarse).mean_ratio
        b = sobolev_pointwise_audit(f, FIRST_STAR, xs, ys, fine).mean_ratio
        self.assertGreater(a, 0.0)
        self.assertLess(abs(a - b) / a, 0.2)

    def test_exclusion(self):
        f = get_audit_function("linear", 2)
        tube = SingularSet((Hyperplane.coordinate(0, 2),), epsilon=0.1)
        report = sobolev_pointwise_audit(f, FIRST_STAR, self.xs, self.ys, self.spec, exclusion=tube)
        expected = int(np.sum(tube.in_tube(self.xs) | tube.in_tube(self.ys)))
        self.assertEqual(report.excluded, expected)
        self.assertEqual(report.pair_count, 500 - expected)

    def test_zero_right_hand_side(self):
        # wrong (zero) Hessian on a curved function leaves nothing to divide by
        curved = ScalarFunctionSpec("x^2", 2, lambda p: p[..., 0] ** 2,
                                    lambda p: np.stack([2 * p[..., 0], 0 * p[..., 1]], axis=-1),
                                    lambda p: np.zeros(np.shape(p) + (2,)))
        with self.assertRaises(ZeroDenominator):
            sobolev_pointwise_audit(curved, SECOND_LINEAR, self.xs, self.ys, self.spec)

    def test_unknown_order(self):
        with self.assertRaises(ValueError):
            sobolev_pointwise_audit(get_audit_function("linear", 2), "third", self.xs, self.ys, self.spec)


if __name__ == "__main__":
    unittest.main()
