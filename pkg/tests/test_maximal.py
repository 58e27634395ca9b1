#!/usr/bin/env python3
"""
Tests for maximal and sharp maximal functions on grids
"""

import unittest

import numpy as np

from flowlab.errors import OutOfBounds
from flowlab.field_catalog import get_audit_function
from flowlab.grids import GridSpec, ScalarGridField
from flowlab.maximal import (RADIUS_RATIO, ball_kernel, maximal_function, maximal_grid,
                             radius_lattice, sharp_maximal_decay, sharp_maximal_function,
                             sharp_maximal_grid, sharp_radii, snap_radius, snap_radius_up)

AUDIT_NAMES = ("linear", "quadratic", "bump", "norm", "gaussian")


def _grid_of(name: str, spec: GridSpec) -> ScalarGridField:
    return ScalarGridField.from_function(spec, get_audit_function(name, spec.dim))


class TestRadiusLattice(unittest.TestCase):

    def setUp(self):
        self.spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        self.h = 0.125

    def test_lattice_starts_with_point_value(self):
        radii = radius_lattice(self.spec, 1.0)
        self.assertEqual(radii[0], 0.0)
        self.assertAlmostEqual(radii[1], self.h / 2)
        self.assertTrue(np.all(np.diff(radii) > 0))
        np.testing.assert_allclose(radii[2:] / radii[1:-1], RADIUS_RATIO)

    def test_snapping(self):
        self.assertAlmostEqual(snap_radius(self.spec, 1.0), 1.0)
        self.assertAlmostEqual(snap_radius(self.spec, 0.99), self.h * RADIUS_RATIO ** 11)
        self.assertAlmostEqual(snap_radius_up(self.spec, 0.99), 1.0)
        self.assertEqual(snap_radius(self.spec, 0.01), 0.0)

    def test_sharp_radii_are_maximal_radii(self):
        full = radius_lattice(self.spec, self.spec.diameter)
        part = sharp_radii(self.spec, 0.5)
        np.testing.assert_allclose(full[:len(part)], part, rtol=1e-14)

    def test_ball_kernel_volume(self):
        spec = GridSpec.cube(-2.0, 2.0, 64, 2)
        kernel = ball_kernel(spec, 1.0)
        area = float(np.sum(kernel)) * spec.cell_volume
        self.assertAlmostEqual(area, np.pi, delta=0.01)


class TestMaximalInequalities(unittest.TestCase):

    def test_sharp_bounded_by_twice_maximal(self):
        spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        for name in AUDIT_NAMES:
            grid = _grid_of(name, spec)
            star = maximal_grid(grid)
            for r in (0.25, 1.0):
                sharp = sharp_maximal_grid(grid, r)
                self.assertEqual(int(np.sum(sharp > 2.0 * star)), 0, f"{name}, r={r}")

    def test_maximal_dominates_point_value(self):
        spec = GridSpec.cube(-2.0, 2.0, 16, 3)
        grid = _grid_of("quadratic", spec)
        self.assertTrue(np.all(maximal_grid(grid) >= np.abs(grid.values)))

    def test_constant_has_no_oscillation_inside(self):
        spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        grid = ScalarGridField(spec, np.ones(spec.shape), fill=1.0)
        np.testing.assert_allclose(sharp_maximal_grid(grid, 1.0), 0.0, atol=1e-12)
        np.testing.assert_allclose(maximal_grid(grid), 1.0, rtol=1e-9)

    def test_vector_valued_input(self):
        spec = GridSpec.cube(-2.0, 2.0, 16, 2)
        parts = [_grid_of("bump", spec), _grid_of("gaussian", spec)]
        star = maximal_grid(parts)
        magnitude = np.hypot(parts[0].values, parts[1].values)
        self.assertTrue(np.all(star >= magnitude * (1 - 1e-12)))

    def test_decay_along_halving_radii(self):
        spec = GridSpec.cube(-2.0, 2.0, 64, 2)
        report = sharp_maximal_decay(_grid_of("bump", spec), 2.0, [1.0, 0.5, 0.25, 0.125])
        self.assertTrue(report.strictly_decreasing, report.norms)
        self.assertTrue(np.all(report.ratios < 1.0))

    def test_indicator_of_ball_at_center(self):
        spec = GridSpec.cube(-2.0, 2.0, 64, 2)
        ball = ScalarGridField.from_function(spec, lambda p: (np.linalg.norm(p, axis=-1) <= 0.5).astype(float))
        self.assertAlmostEqual(maximal_function(ball, [0.0, 0.0]), 1.0, places=12)
        center = spec.cell_index(np.array([[0.01, 0.01]]))[0]
        self.assertAlmostEqual(float(maximal_grid(ball)[tuple(center)]), 1.0, places=12)

    def test_lipschitz_oscillation_bound(self):
        spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        h = float(np.max(spec.widths))
        for name, lipschitz in (("linear", np.sqrt(1.25)), ("norm", 1.0)):
            grid = _grid_of(name, spec)
            for r in (0.25, 0.5):
                inside = np.all(np.abs(spec.centers()) < 2.0 - r - 2 * h, axis=-1)
                sharp = sharp_maximal_grid(grid, r)[inside]
                self.assertTrue(np.all(sharp <= lipschitz * r), f"{name}, r={r}")
                self.assertGreater(float(np.max(sharp)), 0.0)

    def test_norm_decay_halves_with_radius(self):
        spec = GridSpec.cube(-2.0, 2.0, 128, 2)
        report = sharp_maximal_decay(_grid_of("norm", spec), 2.0, [0.5, 0.25], interior=True)
        np.testing.assert_allclose(report.radii, [0.5, 0.25])
        self.assertAlmostEqual(float(report.ratios[0]), 0.5, delta=0.05)

    def test_decay_needs_p_above_one(self):
        spec = GridSpec.cube(-2.0, 2.0, 16, 2)
        with self.assertRaises(ValueError):
            sharp_maximal_decay(_grid_of("bump", spec), 1.0, [0.5, 0.25])


class TestPointQueries(unittest.TestCase):

    def setUp(self):
        self.spec = GridSpec.cube(-2.0, 2.0, 32, 2)
        self.grid = _grid_of("gaussian", self.spec)

    def test_point_matches_grid_at_cell_center(self):
        center = self.spec.centers()[10, 20]
        radii = radius_lattice(self.spec, 1.5)
        on_grid = maximal_grid(self.grid, radii)[10, 20]
        self.assertAlmostEqual(maximal_function(self.grid, center, radii), float(on_grid), delta=1e-9)
        sharp_grid = sharp_maximal_grid(self.grid, 0.5)[10, 20]
        self.assertAlmostEqual(sharp_maximal_function(self.grid, center, 0.5), float(sharp_grid),
                               delta=1e-9)

    def test_point_bound(self):
        x = np.array([0.3, -0.7])
        self.assertLessEqual(sharp_maximal_function(self.grid, x, 1.0),
                             2.0 * maximal_function(self.grid, x))

    def test_point_outside_grid(self):
        with self.assertRaises(OutOfBounds):
            maximal_function(self.grid, [3.0, 0.0])


if __name__ == "__main__":
    unittest.main()
