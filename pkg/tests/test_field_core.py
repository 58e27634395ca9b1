#!/usr/bin/env python3
"""
Tests for field specs, differential operators and the builtin catalog
"""

import unittest

import numpy as np

from flowlab.errors import DimensionMismatch, NoAnalyticJacobian, SingularPoint, UnknownCatalogEntry
from flowlab.field_catalog import (builtin_catalog, builtin_fields, get_audit_function, get_field,
                                   get_pair, shifted_field, verify_pair_metadata)
from flowlab.field_core import (CENTRAL_DIFFERENCE, FieldPairSpec, Hyperplane, ScalarFunctionSpec,
                                SingularSet, Tube, VectorFieldSpec, divergence, eval_field,
                                jacobian, jacobian_agreement, lie_bracket, points_off_singular)
from flowlab.streams import block_generator


def _helix_points(n: int, min_abs_x: float = 0.05, seed: int = 7) -> np.ndarray:
    rng = block_generator(seed, 0, tag="helix-test")
    pts = rng.uniform(-2.0, 2.0, (4 * n, 3))
    pts = pts[np.abs(pts[:, 0]) >= min_abs_x]
    return pts[:n]


class TestSingularSets(unittest.TestCase):

    def test_hyperplane_distance(self):
        plane = Hyperplane.coordinate(0, 3)
        d = plane.distance(np.array([[-2.0, 1.0, 5.0], [0.5, 0.0, 0.0]]))
        np.testing.assert_allclose(d, [2.0, 0.5])

    def test_tube_distance_is_distance_to_line(self):
        tube = Tube((0.0, 0.0, 0.0), (0.0, 0.0, 2.0))
        self.assertAlmostEqual(float(tube.distance(np.array([3.0, 4.0, -7.0]))), 5.0)

    def test_points_off_singular_masks_tube(self):
        helix = get_pair("helix")
        pts = np.array([[0.0005, 1.0, 0.0], [0.5, 1.0, 0.0], [-0.01, -1.0, 2.0]])
        mask = points_off_singular([helix.first, helix.second], pts)
        self.assertEqual(mask.tolist(), [False, True, True])

    def test_empty_singular_set_is_infinitely_far(self):
        s = SingularSet(())
        self.assertTrue(np.isinf(s.distance(np.zeros((2, 3)))).all())


class TestEvaluation(unittest.TestCase):

    def setUp(self):
        self.helix = get_pair("helix")

    def test_eval_on_singular_set_raises(self):
        with self.assertRaises(SingularPoint):
            eval_field(self.helix.first, [0.0, 1.0, 0.0])

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            eval_field(self.helix.first, [1.0, 1.0])

    def test_pair_dimension_mismatch(self):
        plane = get_field("rotation_2d")
        with self.assertRaises(DimensionMismatch):
            FieldPairSpec("bad", plane, self.helix.first, True)

    def test_helix_components(self):
        v1 = eval_field(self.helix.first, [1.0, 1.0, 0.0])
        v2 = eval_field(self.helix.second, [1.0, 1.0, 0.0])
        np.testing.assert_allclose(v1, [1.0, 0.0, -0.5])
        np.testing.assert_allclose(v2, [0.0, 1.0, 0.5])

    def test_batch_shape_is_preserved(self):
        pts = _helix_points(10).reshape(2, 5, 3)
        self.assertEqual(eval_field(self.helix.first, pts).shape, (2, 5, 3))

    def test_missing_analytic_jacobian(self):
        field = VectorFieldSpec("bare", 2, lambda p, t=0.0: np.asarray(p) * 2.0)
        with self.assertRaises(NoAnalyticJacobian):
            jacobian(field, [1.0, 2.0])
        jac = jacobian(field, [1.0, 2.0], method=CENTRAL_DIFFERENCE)
        np.testing.assert_allclose(jac, 2.0 * np.eye(2), atol=1e-8)
        self.assertAlmostEqual(float(divergence(field, [1.0, 2.0], method=CENTRAL_DIFFERENCE)), 4.0,
                               places=6)

    def test_scalar_hessian_missing(self):
        f = ScalarFunctionSpec("flat", 2, lambda p: np.zeros(np.shape(p)[:-1]),
                               lambda p: np.zeros(np.shape(p)))
        with self.assertRaises(NoAnalyticJacobian):
            f.hess(np.zeros(2))


class TestBrackets(unittest.TestCase):

    def test_helix_bracket_vanishes(self):
        pair = get_pair("helix")
        bracket = lie_bracket(pair, _helix_points(10000))
        self.assertLessEqual(float(np.max(np.abs(bracket))), 1e-7)

    def test_helix_bracket_vanishes_by_central_difference(self):
        pair = get_pair("helix")
        bracket = lie_bracket(pair, _helix_points(500, min_abs_x=0.2), method=CENTRAL_DIFFERENCE)
        self.assertLessEqual(float(np.max(np.abs(bracket))), 1e-5)

    def test_heisenberg_bracket(self):
        pair = get_pair("heisenberg_shear")
        bracket = lie_bracket(pair, np.array([[0.3, -1.2], [2.0, 0.5]]))
        np.testing.assert_allclose(bracket, [[0.0, 1.0], [0.0, 1.0]])

    def test_catalog_metadata_matches_brackets(self):
        for pair in builtin_catalog():
            worst = verify_pair_metadata(pair, samples=400, seed=3)
            if pair.bracket_vanishes_ae:
                self.assertLessEqual(worst, 1e-7, pair.name)
            else:
                self.assertGreater(worst, 0.5, pair.name)


class TestJacobians(unittest.TestCase):

    def test_analytic_matches_central_difference(self):
        for name, field in builtin_fields().items():
            if field.singular_set is not None:
                pts = _helix_points(200, min_abs_x=0.3)
            else:
                pts = block_generator(1, 0, tag=name).uniform(-2.0, 2.0, (200, field.dim))
            self.assertLessEqual(jacobian_agreement(field, pts), 1e-6, name)

    def test_graph_foliation_is_divergence_free(self):
        pair = get_pair("graph_foliation(f=sin x cos y)")
        pts = block_generator(2, 0, tag="div").uniform(-3.0, 3.0, (100, 3))
        for field in (pair.first, pair.second):
            np.testing.assert_allclose(divergence(field, pts), 0.0, atol=1e-12)
            np.testing.assert_allclose(divergence(field, pts, method=CENTRAL_DIFFERENCE), 0.0,
                                       atol=1e-8)

    def test_dilation_divergence(self):
        self.assertAlmostEqual(float(divergence(get_field("dilation"), [1.0, 2.0, 3.0])), 3.0)


class TestCatalogLookup(unittest.TestCase):

    def test_unknown_pair(self):
        with self.assertRaises(UnknownCatalogEntry):
            get_pair("nope")

    def test_pair_component_by_name(self):
        field = get_field("helix.V2")
        self.assertEqual(field.name, "helix.V2")

    def test_audit_function_dimension(self):
        self.assertEqual(get_audit_function("bump", 3).dim, 3)
        self.assertEqual(get_audit_function("sin x cos y", 2).dim, 2)
        with self.assertRaises(UnknownCatalogEntry):
            get_audit_function("sin x cos y", 3)

    def test_shifted_field(self):
        base = get_field("rotation")
        moved = shifted_field(base, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(eval_field(moved, [1.0, 0.0, 0.0]), [0.0, 1.0, 1.0])
        with self.assertRaises(UnknownCatalogEntry):
            shifted_field(base, [1.0, 0.0])

    def test_pulsed_rotation_depends_on_time(self):
        field = get_field("pulsed_rotation")
        self.assertTrue(field.time_dependent)
        at_zero = eval_field(field, [1.0, 0.0, 0.0], t=0.0)
        at_peak = eval_field(field, [1.0, 0.0, 0.0], t=np.pi / 2)
        np.testing.assert_allclose(at_zero, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(at_peak, [0.0, 1.5, 0.0])


if __name__ == "__main__":
    unittest.main()
