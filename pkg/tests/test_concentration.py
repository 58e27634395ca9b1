#!/usr/bin/env python3
"""
Tests for trajectory ensembles, the concentration residual and the stability audit
"""

import unittest

import numpy as np

from flowlab.concentration import (NormGrid, TrajectoryEnsemble, check_exponents, concentration_residual,
                                   curve_ensemble, ensemble_density_bound, partition_variation, phi_delta,
                                   phi_delta_violations, stability_bound_audit, trajectory_ensemble)
from flowlab.errors import ExponentMismatch, NonpositiveDelta, WindowMismatch
from flowlab.field_catalog import constant_field, get_field, get_pair
from flowlab.flow_engine import TimeWindow
from flowlab.measure_lab import MeasureSource, sample_reference_measure
from flowlab.reporting import ResidualKind
from flowlab.residuals import scaling_exponent
from flowlab.streams import block_generator

WINDOW = TimeWindow(0.0, 1.0)
NODES = np.linspace(0.0, 1.0, 17)
COARSE = NormGrid(resolution=24)


def small_ensemble(n=400, seed=5):
    return sample_reference_measure(MeasureSource.uniform_box([(-1.0, 1.0)] * 3), n, seed)


class TestTrajectoryEnsemble(unittest.TestCase):

    def test_states_at_interpolates(self):
        ens = small_ensemble(10)
        traj = curve_ensemble(lambda x, tau: x + tau, ens, WINDOW, [0.5])
        np.testing.assert_allclose(traj.states_at(0.25), ens.points + 0.25)
        np.testing.assert_allclose(traj.states_at(1.0), ens.points + 1.0)
        with self.assertRaises(ValueError):
            traj.states_at(1.5)

    def test_nodes_must_cover_window(self):
        with self.assertRaises(WindowMismatch):
            TrajectoryEnsemble(np.array([0.0, 0.5]), np.zeros((2, 2, 3)), np.ones(2), 0, WINDOW)

    def test_outside_fraction(self):
        ens = small_ensemble(10)
        traj = curve_ensemble(lambda x, tau: x + 20.0 * tau, ens, WINDOW)
        self.assertEqual(traj.outside_fraction(NormGrid()), 1.0)

    def test_density_bound_follows_norm_box(self):
        ens = sample_reference_measure(MeasureSource.uniform_box([(20.0, 22.0)] * 3), 20000, seed=6)
        traj = curve_ensemble(lambda x, tau: x, ens, WINDOW)
        far = NormGrid(low=18.0, high=24.0, resolution=6)
        self.assertAlmostEqual(ensemble_density_bound(traj, grid=far), 1.0, delta=0.15)
        self.assertEqual(ensemble_density_bound(traj), 0.0)


class TestConcentration(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.rotation = get_field("rotation")
        cls.traj = trajectory_ensemble(cls.rotation, small_ensemble(), WINDOW, NODES, tol=1e-10)
        smooth = [cls.rotation, get_pair("graph_foliation(f=sin x cos y)").component(1),
                  get_pair("commuting_linear").component(2)]
        cls.smooth = [(f, trajectory_ensemble(f, small_ensemble(), WINDOW, NODES, tol=1e-10))
                      for f in smooth]

    def test_bound_holds_on_integral_curves(self):
        for f, traj in self.smooth:
            self.assertEqual(len(traj), 400)
            for s, t in ((0.0, 0.5), (0.25, 0.3125), (0.5, 1.0)):
                with self.subTest(field=f.name, s=s, t=t):
                    result = concentration_residual(traj, f, s, t, 4.0, 4.0, 2.0, grid=COARSE)
                    self.assertGreater(result.lhs, 0.0)
                    self.assertLessEqual(result.lhs, result.omega_bound)
                    self.assertLess(result.ratio, 1.0)

    def test_report(self):
        result = concentration_residual(self.traj, self.rotation, 0.0, 0.5, 4.0, 4.0, 2.0, grid=COARSE)
        report = result.to_report(5, len(self.traj))
        self.assertIs(report.kind, ResidualKind.CONCENTRATION)
        self.assertEqual(report.extra["outside_fraction"], 0.0)

    def test_partition_sums_shrink(self):
        rows = partition_variation(self.traj, self.rotation, 0.0, 1.0, [0, 1, 2, 3], 4.0, 4.0, 2.0,
                                   grid=COARSE)
        sums = [row.lhs_sum for row in rows]
        self.assertTrue(all(a > b for a, b in zip(sums, sums[1:])), sums)
        self.assertAlmostEqual(rows[3].mesh, 0.125)
        for row in rows:
            self.assertLessEqual(row.lhs_sum, row.omega_sum)

    def test_straight_lines_violate_at_first_order(self):
        rotation = self.rotation
        lengths = [0.005, 0.01, 0.03, 0.1, 0.3, 0.5]
        straight = curve_ensemble(lambda x, tau: x + tau * rotation.eval(x, 0.0), small_ensemble(),
                                  WINDOW, [0.5 + t for t in lengths] + [0.5])
        values = [concentration_residual(straight, rotation, 0.5, 0.5 + t, 4.0, 4.0, 2.0, grid=COARSE).lhs
                  for t in lengths]
        fit = scaling_exponent(deltas=lengths, values=values)
        self.assertTrue(0.8 <= fit.slope <= 1.2, fit)

    def test_constant_field_has_no_residual(self):
        shift = constant_field([1.0, -0.5, 0.25])
        traj = curve_ensemble(lambda x, tau: x + tau * np.array([1.0, -0.5, 0.25]),
                              small_ensemble(50), WINDOW, NODES)
        result = concentration_residual(traj, shift, 0.0, 1.0, 4.0, 4.0, 2.0, grid=COARSE)
        self.assertLessEqual(result.lhs, 1e-12)
        self.assertEqual(result.norm_jacobian, 0.0)

    def test_exponent_mismatch(self):
        with self.assertRaises(ExponentMismatch):
            check_exponents(2.0, 2.0, 2.0)
        with self.assertRaises(ExponentMismatch):
            check_exponents(1.0, 0.5, 1.0 / 3.0)
        check_exponents(2.0, 2.0, 1.0)
        with self.assertRaises(ExponentMismatch):
            concentration_residual(self.traj, self.rotation, 0.0, 0.5, 3.0, 3.0, 2.0)


class TestPhiDelta(unittest.TestCase):

    def test_value(self):
        self.assertEqual(float(phi_delta(np.zeros(3), 0.1)), 0.0)
        self.assertAlmostEqual(float(phi_delta([3.0, 4.0], 5.0)), np.log(2.0))

    def test_growth_inequality(self):
        rng = block_generator(3, 0, tag="phi")
        xs = rng.normal(size=(10000, 3)) * 10.0 ** rng.uniform(-3, 1, (10000, 1))
        ys = rng.normal(size=(10000, 3)) * 10.0 ** rng.uniform(-3, 1, (10000, 1))
        deltas = 10.0 ** rng.uniform(-6, 0, 10000)
        self.assertEqual(phi_delta_violations(xs, ys, deltas), 0)

    def test_nonpositive_delta(self):
        with self.assertRaises(NonpositiveDelta):
            phi_delta([1.0, 0.0], 0.0)


class TestStability(unittest.TestCase):

    def setUp(self):
        self.v1 = constant_field([1.0, 0.0, 0.0])
        self.v2 = constant_field([1.0, 0.1, 0.0])
        ens = small_ensemble(200)
        self.first = trajectory_ensemble(self.v1, ens, WINDOW, NODES)
        self.second = trajectory_ensemble(self.v2, ens, WINDOW, NODES)

    def test_bound_holds(self):
        audit = stability_bound_audit(self.first, self.second, NODES, 0.01, 4.0, 4.0, 2.0,
                                      self.v1, self.v2, grid=COARSE)
        self.assertAlmostEqual(audit.terms["initial"], 0.0)
        self.assertAlmostEqual(audit.terms["jacobian"], 0.0)
        self.assertGreater(audit.lhs, 0.0)
        self.assertLessEqual(audit.ratio, 1.0 + 1e-9)
        report = audit.to_report(5, 200, {"delta": 0.01})
        self.assertEqual(report.extra["ratio"], audit.ratio)

    def test_constant_perturbation_grows_logarithmically(self):
        delta = 0.01
        mass = float(np.sum(self.first.weights))
        lhs = []
        for end in (0.25, 0.5, 1.0):
            audit = stability_bound_audit(self.first, self.second, NODES[NODES <= end], delta, 4.0, 4.0, 2.0,
                                          self.v1, self.v2, grid=COARSE)
            # every pair drifts apart at speed |c| = 0.1
            expected = np.sqrt(mass) * np.log(1.0 + 0.1 * end / delta)
            self.assertAlmostEqual(audit.lhs, expected, places=6)
            self.assertEqual(audit.terms["omega"], 0.0)
            lhs.append(audit.lhs)
        growth = np.diff(lhs)
        self.assertLess(growth[1], 2.0 * growth[0])

    def test_explicit_coupling(self):
        reverse = np.arange(199, -1, -1)
        audit = stability_bound_audit(self.first, self.second, NODES, 0.01, 4.0, 4.0, 2.0,
                                      self.v1, self.v2, coupling=reverse, grid=COARSE)
        self.assertGreater(audit.terms["initial"], 0.0)

    def test_rejections(self):
        args = (4.0, 4.0, 2.0, self.v1, self.v2)
        with self.assertRaises(NonpositiveDelta):
            stability_bound_audit(self.first, self.second, NODES, 0.0, *args)
        with self.assertRaises(WindowMismatch):
            stability_bound_audit(self.first, self.second, [0.5, 0.25], 0.01, *args)
        with self.assertRaises(WindowMismatch):
            stability_bound_audit(self.first, self.second, [0.0, 2.0], 0.01, *args)
        with self.assertRaises(WindowMismatch):
            stability_bound_audit(self.first, self.second, NODES, 0.01, *args, coupling=[0, 1])
        other = curve_ensemble(lambda x, tau: x, small_ensemble(200), TimeWindow(0.0, 2.0))
        with self.assertRaises(WindowMismatch):
            stability_bound_audit(self.first, other, NODES, 0.01, *args)


if __name__ == "__main__":
    unittest.main()
