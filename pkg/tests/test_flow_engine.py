#!/usr/bin/env python3
"""
Tests for trajectories, flow maps and closed-form flow oracles
"""

import os
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from flowlab.errors import InvalidRadii, StartOnSingularSet
from flowlab.field_catalog import ROTATION_Z, SIN_COS, get_audit_function, get_field, get_pair, pair_oracle
from flowlab.flow_engine import (ANALYTIC, FlowQuery, TimeWindow, analytic_flow_graph_foliation,
                                 analytic_flow_helix, analytic_flow_linear, apply_flow,
                                 batch_result_to_trajectories, chain_rule_residual,
                                 escape_time_bound, escape_time_for_field, flow_points,
                                 helix_flow_with_crossings, integrate_ensemble,
                                 integrate_trajectory, principal_arctan_ratio, write_trajectory_csv)
from flowlab.reporting import ResidualKind


class TestHelixOracle(unittest.TestCase):

    def test_principal_branch_is_not_arctan2(self):
        self.assertAlmostEqual(float(principal_arctan_ratio(np.array(-1.0), np.array(-1.0))), np.pi / 4)

    def test_crossing_constant(self):
        moved, crossed = helix_flow_with_crossings(1, np.array([[-1.0, -1.0, 0.0]]), 2.0)
        np.testing.assert_allclose(moved[0], [1.0, -1.0, np.pi / 2], atol=1e-14)
        self.assertTrue(crossed[0])

    def test_crossing_from_the_right(self):
        # starting at x > 0 the jump has the opposite sign
        moved = analytic_flow_helix(1, np.array([1.0, -1.0, np.pi / 2]), -2.0)
        np.testing.assert_allclose(moved, [-1.0, -1.0, 0.0], atol=1e-14)

    def test_value_on_the_plane(self):
        moved = analytic_flow_helix(1, np.array([-1.0, -1.0, 0.0]), 1.0)
        np.testing.assert_allclose(moved, [0.0, -1.0, np.pi / 4], atol=1e-14)

    def test_second_component_never_crosses(self):
        moved, crossed = helix_flow_with_crossings(2, np.array([[1.0, 1.0, 0.0]]), 1.0)
        np.testing.assert_allclose(moved[0], [1.0, 2.0, np.arctan(2.0) - np.pi / 4])
        self.assertFalse(crossed[0])

    def test_start_on_plane(self):
        with self.assertRaises(StartOnSingularSet):
            analytic_flow_helix(1, np.array([0.0, 1.0, 0.0]), 1.0)

    def test_numeric_flow_agrees(self):
        pair = get_pair("helix")
        pts = np.array([[-1.0, -1.0, 0.0], [-0.3, 0.8, 0.5], [1.5, -0.4, -1.0]])
        for which in (1, 2):
            for t in (0.5, 2.0, -1.7):
                numeric = flow_points(pair.component(which), pts, t, tol=1e-10)
                np.testing.assert_allclose(numeric.points, analytic_flow_helix(which, pts, t),
                                           atol=1e-6)


    def test_numeric_flow_agrees_on_seeded_points(self):
        rng = np.random.default_rng(2024)
        n = 1000
        x = rng.choice([-1.0, 1.0], n) * rng.uniform(0.05, 2.0, n)
        y = rng.choice([-1.0, 1.0], n) * rng.uniform(0.2, 2.0, n)
        pts = np.column_stack([x, y, rng.uniform(-1.0, 1.0, n)])
        durations = np.repeat([-2.2, -0.6, 0.8, 2.4], n // 4)
        pair = get_pair("helix")
        crossed = 0
        for which in (1, 2):
            for t in np.unique(durations):
                rows = pts[durations == t]
                numeric = flow_points(pair.component(which), rows, t, tol=1e-8)
                self.assertEqual(numeric.lost, 0)
                error = np.max(np.abs(numeric.points - analytic_flow_helix(which, rows, t)))
                self.assertLessEqual(error, 1e-5, (which, t))
                crossed += int(numeric.crossed.sum())
        self.assertGreater(crossed, 100)

    def test_level_sets_are_conserved_between_crossings(self):
        starts = {"helix.V1": [-1.0, 0.7, 0.3], "helix.V2": [0.5, -1.0, 0.0]}
        for name, x0 in starts.items():
            traj = integrate_trajectory(get_field(name), x0, TimeWindow(0.0, 2.5), tol=1e-10)
            levels = []
            for seg in traj.segments():
                states = traj.states[seg]
                states = states[np.abs(states[:, 0]) > 1e-3]
                c = states[:, 2] - principal_arctan_ratio(states[:, 0], states[:, 1])
                self.assertLessEqual(float(np.ptp(c)), 1e-6, name)
                levels.append(c[0])
            if name == "helix.V1":
                # left to right with y > 0 drops the level by pi
                self.assertEqual(len(levels), 2)
                self.assertAlmostEqual(levels[1] - levels[0], -np.pi, delta=1e-5)
            else:
                self.assertEqual(len(levels), 1)

    def test_paths_are_continuous_across_crossings(self):
        rng = np.random.default_rng(7)
        field = get_field("helix.V1")
        for _ in range(20):
            x0 = np.array([-rng.uniform(0.2, 2.0), rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0),
                           rng.uniform(-1.0, 1.0)])
            traj = integrate_trajectory(field, x0, TimeWindow(0.0, 3.0), tol=1e-8)
            self.assertEqual(len(traj.crossings), 1)
            crossing = traj.crossings[0]
            self.assertAlmostEqual(crossing.time, -x0[0], delta=1e-6)
            np.testing.assert_allclose(crossing.point, analytic_flow_helix(1, x0, crossing.time), atol=1e-6)
            i = int(np.flatnonzero(traj.crossing_flags())[0])
            self.assertLessEqual(float(np.linalg.norm(traj.states[i + 1] - traj.states[i])), 1e-6)


class TestGroupProperty(unittest.TestCase):

    def test_composed_flows_match(self):
        rng = np.random.default_rng(11)
        foliation = get_pair("graph_foliation(f=sin x cos y)")
        fields = [get_field("rotation"), get_field("saddle"), foliation.component(1), foliation.component(2)]
        for field in fields:
            pts = rng.uniform(-1.0, 1.0, (200, field.dim))
            for s, t in ((0.4, 0.7), (1.0, -0.3), (-0.5, -0.5)):
                whole = flow_points(field, pts, s + t, tol=1e-10)
                first = flow_points(field, pts, s, tol=1e-10)
                composed = flow_points(field, first.points, t, tol=1e-10)
                np.testing.assert_allclose(composed.points, whole.points, atol=1e-7,
                                           err_msg=f"{field.name} s={s} t={t}")


class TestOtherOracles(unittest.TestCase):

    def test_graph_foliation_increment_is_difference_of_f(self):
        pts = np.array([[0.3, -1.2, 0.5], [2.0, 0.7, -1.0]])
        moved = analytic_flow_graph_foliation(SIN_COS, 1, pts, 1.3)
        expected_z = pts[:, 2] + SIN_COS(moved[:, :2]) - SIN_COS(pts[:, :2])
        np.testing.assert_allclose(moved[:, 2], expected_z, atol=1e-9)
        np.testing.assert_allclose(moved[:, 0], pts[:, 0] + 1.3)

    def test_graph_foliation_matches_numeric(self):
        pair = get_pair("graph_foliation(f=sin x cos y)")
        pts = np.array([[0.3, -1.2, 0.5], [-2.0, 0.7, -1.0]])
        for which in (1, 2):
            numeric = flow_points(pair.component(which), pts, 0.8, tol=1e-10)
            exact = flow_points(pair.component(which), pts, 0.8, method=ANALYTIC,
                                oracle=pair_oracle(pair, which))
            np.testing.assert_allclose(numeric.points, exact.points, atol=1e-7)

    def test_linear_quarter_turn(self):
        moved = analytic_flow_linear(ROTATION_Z, np.array([1.0, 0.0, 2.0]), np.pi / 2)
        np.testing.assert_allclose(moved, [0.0, 1.0, 2.0], atol=1e-14)

    def test_linear_per_row_times(self):
        pts = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        moved = analytic_flow_linear(np.eye(3), pts, np.array([0.0, 1.0]))
        np.testing.assert_allclose(moved, [[1.0, 0.0, 0.0], [np.e, 0.0, 0.0]])

    def test_analytic_without_oracle(self):
        with self.assertRaises(ValueError):
            flow_points(get_field("rotation"), np.zeros((1, 3)), 1.0, method=ANALYTIC)

    def test_apply_flow_query(self):
        query = FlowQuery(get_field("dilation"), 1.0, start=np.array([[1.0, 2.0, 3.0]]), tol=1e-10)
        result = apply_flow(query)
        np.testing.assert_allclose(result.points, [[np.e, 2 * np.e, 3 * np.e]], rtol=1e-8)
        self.assertEqual(result.lost, 0)

    def test_zero_duration_is_identity(self):
        pts = np.array([[0.5, 0.5, 0.5]])
        result = flow_points(get_field("rotation"), pts, 0.0)
        np.testing.assert_array_equal(result.points, pts)


class TestTrajectories(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_full_turn_returns_home(self):
        traj = integrate_trajectory(get_field("rotation"), [1.0, 0.0, 0.5], TimeWindow(0.0, 2 * np.pi),
                                    tol=1e-10)
        np.testing.assert_allclose(traj.states[-1], [1.0, 0.0, 0.5], atol=1e-7)
        self.assertEqual(traj.times[0], 0.0)

    def test_start_inside_window(self):
        traj = integrate_trajectory(get_field("dilation"), [1.0, 1.0, 1.0], TimeWindow(-1.0, 1.0),
                                    tol=1e-10, t0=0.0)
        self.assertTrue(np.all(np.diff(traj.times) > 0))
        self.assertEqual(traj.times[0], -1.0)
        self.assertEqual(traj.times[-1], 1.0)
        np.testing.assert_allclose(traj.state_at(-1.0), np.full(3, np.exp(-1.0)), rtol=1e-8)
        np.testing.assert_allclose(traj.state_at(0.0), np.ones(3))

    def test_start_on_singular_set(self):
        with self.assertRaises(StartOnSingularSet):
            integrate_trajectory(get_field("helix.V1"), [0.0, 1.0, 0.0], TimeWindow(0.0, 1.0))

    def test_crossings_split_segments(self):
        traj = integrate_trajectory(get_field("helix.V1"), [-1.0, 1.0, 0.0], TimeWindow(0.0, 2.0))
        self.assertEqual(len(traj.crossings), 1)
        self.assertEqual(len(traj.segments()), 2)
        self.assertEqual(int(traj.crossing_flags().sum()), 1)

    def test_chain_rule_along_rotation(self):
        f = get_audit_function("quadratic", 3)
        field = get_field("rotation")
        traj = integrate_trajectory(field, [1.0, 0.0, 0.0], TimeWindow(0.0, 1.0), tol=1e-10,
                                    t_eval=np.linspace(0.0, 1.0, 201))
        report = chain_rule_residual(f, traj, field)
        self.assertEqual(report.kind, ResidualKind.CHAIN_RULE)
        self.assertLess(report.value, 1e-3)
        wrong = chain_rule_residual(f, traj, get_field("dilation"))
        self.assertGreater(wrong.value, 0.5)

    def test_ensemble_and_trajectories(self):
        pts = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        batch = integrate_ensemble(get_field("rotation"), pts, TimeWindow(0.0, np.pi),
                                   t_eval=[np.pi / 2], tol=1e-10)
        trajs = batch_result_to_trajectories(batch, "rotation", 1e-10)
        self.assertEqual(len(trajs), 2)
        np.testing.assert_allclose(trajs[1].states[0], [-2.0, 0.0, 0.0], atol=1e-7)
        np.testing.assert_allclose(trajs[0].states[-1], [-1.0, 0.0, 0.0], atol=1e-7)

    def test_trajectory_csv(self):
        traj = integrate_trajectory(get_field("helix.V1"), [-1.0, 1.0, 0.0], TimeWindow(0.0, 2.0))
        path = write_trajectory_csv(traj, Path(self.temp_dir) / "traj.csv", "config_hash=abc")
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], "# config_hash=abc")
        self.assertEqual(lines[1], "t,x_1,x_2,x_3,crossing_flag")
        self.assertEqual(len(lines), 2 + len(traj.times))
        self.assertEqual(sum(int(line.rsplit(",", 1)[1]) for line in lines[2:]), 1)


class TestEscapeTime(unittest.TestCase):

    def test_bound(self):
        self.assertAlmostEqual(escape_time_bound(1.0, 2.0, 1.0), 0.9)
        self.assertAlmostEqual(escape_time_bound(1.0, 2.0, 1.0, T_bar=0.5), 0.45)

    def test_invalid_radii(self):
        with self.assertRaises(InvalidRadii):
            escape_time_bound(2.0, 1.0, 1.0)
        with self.assertRaises(InvalidRadii):
            escape_time_bound(1.0, 2.0, 0.0)

    def test_paths_stay_inside(self):
        field = get_field("dilation")
        T = escape_time_for_field(field, np.zeros(3), 1.0, 2.0, seed=4)
        # |x(t)| = |x0| e^t, sup |V| on B_2 is 2
        self.assertLess(T, 0.5)
        self.assertLess(np.exp(T), 2.0)


if __name__ == "__main__":
    unittest.main()
