import math
import time
import unittest

import numpy as np
from numpy.testing import assert_allclose

from force_aggregator.conflict import (DISTANCE_RAMP, HEADING_RAMP, SPEED_RAMP, ConflictConfig,
                                       DirectionParams, RampParams, angular_difference,
                                       combine_aspects, common_interval, direction_conflict,
                                       distance_conflict, position_at, ramp_conflict,
                                       report_conflict, report_conflict_matrix, speed_conflict,
                                       track_conflict, track_conflict_matrix,
                                       track_direction_conflict, type_conflict)
from force_aggregator.domain import ClassificationTree, Position, Report, Track


def report(x=0.0, y=0.0, t=0.0, classification="mbt", orientation=0.0):
    return Report("obs-1", None, Position(x, y), t, classification, orientation)


def straight_track(track_id, x0, y0, vx, vy, times, classification="mbt"):
    tree = ClassificationTree.default()
    reports = [report(x0 + vx * t, y0 + vy * t, t, classification, math.atan2(vy, vx))
               for t in times]
    return Track.from_reports(track_id, reports, tree)


class TestRampAndCombination(unittest.TestCase):
    def test_ramp_knees(self):
        self.assertEqual(ramp_conflict(0.0, SPEED_RAMP), 0.0)
        self.assertAlmostEqual(ramp_conflict(22.0, SPEED_RAMP), 0.01, delta=1e-12)
        self.assertAlmostEqual(ramp_conflict(25.0, SPEED_RAMP), 1.0, delta=1e-12)
        self.assertAlmostEqual(ramp_conflict(23.5, SPEED_RAMP), 0.505, delta=1e-12)
        self.assertEqual(ramp_conflict(400.0, SPEED_RAMP), 1.0)
        self.assertEqual(ramp_conflict(-3.0, SPEED_RAMP), 0.0)

    def test_ramp_is_continuous_and_monotone(self):
        for params in (SPEED_RAMP, DISTANCE_RAMP, HEADING_RAMP):
            xs = np.linspace(0.0, params.x2 * 1.5, 2001)
            values = np.array([ramp_conflict(x, params) for x in xs])
            self.assertTrue(np.all(np.diff(values) >= 0.0))
            self.assertTrue(np.all((values >= 0.0) & (values <= 1.0)))
            # 膝点两侧的取值一致
            if params.x1 > 0:
                self.assertAlmostEqual(ramp_conflict(params.x1 - 1e-12, params), params.p, delta=1e-9)

    def test_ramp_params_validation(self):
        with self.assertRaises(ValueError):
            RampParams(1.5, 1.0, 2.0)
        with self.assertRaises(ValueError):
            RampParams(0.1, 3.0, 2.0)
        with self.assertRaises(ValueError):
            DirectionParams(delta_d0=0.0)

    def test_combine_aspects(self):
        self.assertEqual(combine_aspects([]), 0.0)
        self.assertEqual(combine_aspects([0.0, 0.0]), 0.0)
        self.assertEqual(combine_aspects([1.0, 0.3]), 1.0)
        self.assertAlmostEqual(combine_aspects([0.5, 0.5]), 0.75)

    def test_algebraic_identities_on_random_inputs(self):
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        for a, b, c in rng.random((1000, 3)):
            self.assertAlmostEqual(combine_aspects([a, b]), combine_aspects([b, a]), delta=1e-12)
            self.assertAlmostEqual(combine_aspects([combine_aspects([a, b]), c]),
                                   combine_aspects([a, combine_aspects([b, c])]), delta=1e-12)
            self.assertAlmostEqual(combine_aspects([a, 0.0]), a, delta=1e-12)
            self.assertEqual(combine_aspects([a, 1.0]), 1.0)
            self.assertGreaterEqual(combine_aspects([a, b, c]) + 1e-12, max(a, b, c))
        self.assertLess(time.perf_counter() - start, 1.0)

    def test_angular_difference(self):
        self.assertAlmostEqual(angular_difference(0.1, 2 * math.pi - 0.1), 0.2)
        self.assertAlmostEqual(angular_difference(0.0, math.pi), math.pi)
        self.assertEqual(angular_difference(1.0, 1.0), 0.0)


class TestReportConflicts(unittest.TestCase):
    def setUp(self):
        self.tree = ClassificationTree.default()
        self.config = ConflictConfig()

    def test_speed_conflict(self):
        self.assertEqual(speed_conflict(report(t=0.0), report(t=10.0)), 0.0)
        self.assertEqual(speed_conflict(report(t=0.0), report(x=250.0, t=10.0)), 1.0)
        self.assertAlmostEqual(speed_conflict(report(t=0.0), report(x=100.0, t=10.0)),
                               10 * 0.01 / 22, delta=1e-12)

    def test_simultaneous_reports(self):
        self.assertEqual(speed_conflict(report(t=5.0), report(x=0.5, t=5.0)), 0.0)
        self.assertEqual(speed_conflict(report(t=5.0), report(x=30.0, t=5.0)), 1.0)

    def test_type_conflict(self):
        self.assertEqual(type_conflict("mbt", "unknown", self.tree), 0.0)
        self.assertEqual(type_conflict("mbt", "mbt", self.tree), 0.0)
        self.assertEqual(type_conflict("mbt", "apc_tracked", self.tree), 1.0)
        self.assertEqual(type_conflict("apc_tracked", "mbt", self.tree), 1.0)

    def test_direction_conflict(self):
        params = DirectionParams()
        self.assertEqual(direction_conflict(report(orientation=0.0),
                                            report(t=1.0, orientation=math.pi / 8), params), 0.0)
        self.assertAlmostEqual(direction_conflict(report(orientation=0.0),
                                                  report(orientation=math.pi), params), 1.0)
        self.assertAlmostEqual(direction_conflict(report(orientation=0.0),
                                                  report(orientation=math.pi / 2), params), 0.5)
        self.assertEqual(direction_conflict(report(orientation=0.0),
                                            report(t=9.0, orientation=math.pi), params), 0.0)

    def test_report_conflict(self):
        a = report(t=0.0)
        self.assertEqual(report_conflict(a, report(t=10.0), self.config, self.tree), 0.0)
        self.assertEqual(report_conflict(a, report(t=10.0, classification="apc_tracked"),
                                         self.config, self.tree), 1.0)
        # 速度 10 m/s，5 秒内航向相差 pi/2
        b = report(x=50.0, t=5.0, orientation=math.pi / 2)
        expected = 1 - (1 - 10 * 0.01 / 22) * (1 - 10 * (math.pi / 2) / (math.pi * 15))
        self.assertAlmostEqual(report_conflict(a, b, self.config, self.tree), expected, delta=1e-12)

    def test_report_conflict_matrix_symmetric(self):
        rng = np.random.default_rng(3)
        classes = ["mbt", "tracked", "unknown", "apc_tracked"]
        reports = [report(*rng.uniform(0, 500, 2), float(rng.integers(0, 30)),
                          classes[i % 4], rng.uniform(0, 2 * math.pi)) for i in range(12)]
        matrix = report_conflict_matrix(reports, self.config, self.tree)
        assert_allclose(matrix, matrix.T)
        assert_allclose(np.diag(matrix), 0.0)
        self.assertTrue(np.all((matrix >= 0.0) & (matrix <= 1.0)))
        for i in range(12):
            for j in range(12):
                if i != j:
                    self.assertEqual(report_conflict(reports[i], reports[j], self.config, self.tree),
                                     report_conflict(reports[j], reports[i], self.config, self.tree))


class TestTrackConflicts(unittest.TestCase):
    def setUp(self):
        self.config = ConflictConfig()

    def test_position_at(self):
        track = straight_track("T1", 0.0, 0.0, 10.0, 0.0, [0.0, 10.0])
        self.assertEqual(position_at(track, 4.0), Position(40.0, 0.0))
        self.assertEqual(position_at(track, 5.0), Position(50.0, 0.0))
        self.assertEqual(position_at(track, 10.0), Position(100.0, 0.0))
        with self.assertRaises(ValueError):
            position_at(track, 11.0)

    def test_position_at_duplicate_times(self):
        tree = ClassificationTree.default()
        track = Track.from_reports("T1", [report(0.0, 0.0, 0.0), report(0.4, 0.0, 5.0),
                                          report(0.0, 0.0, 5.0), report(10.0, 0.0, 10.0)], tree)
        self.assertEqual(position_at(track, 0.0), Position(0.0, 0.0))
        self.assertEqual(position_at(track, 10.0), Position(10.0, 0.0))

    def test_common_interval(self):
        a = straight_track("A", 0, 0, 1, 0, range(2, 15))
        b = straight_track("B", 0, 10, 1, 0, range(3, 16))
        self.assertEqual(common_interval(a, b), (3, 14))
        self.assertEqual(common_interval(a, a), (2, 14))
        c = straight_track("C", 0, 0, 1, 0, range(0, 6))
        d = straight_track("D", 0, 0, 1, 0, range(6, 11))
        self.assertIsNone(common_interval(c, d))

    def test_distance_conflict(self):
        a = straight_track("A", 0, 0, 5, 0, range(0, 20, 2))
        self.assertEqual(distance_conflict(a, a), 0.0)
        far = straight_track("B", 0, 1000, 5, 0, range(1, 20, 2))
        self.assertAlmostEqual(distance_conflict(a, far), 1.0, delta=1e-12)
        near = straight_track("C", 0, 200, 5, 0, range(0, 20, 2))
        self.assertAlmostEqual(distance_conflict(a, near), 200 * 0.01 / 300, delta=1e-12)

    def test_distance_conflict_without_overlap(self):
        a = straight_track("A", 0, 0, 5, 0, [0, 2, 4])
        b = straight_track("B", -10, 600, 5, 0, [6, 8])
        expected = ramp_conflict(600.0, DISTANCE_RAMP)
        self.assertAlmostEqual(distance_conflict(a, b), expected, delta=1e-12)
        self.assertEqual(track_direction_conflict(a, b), 0.0)

    def test_track_direction_conflict(self):
        east = straight_track("A", 0, 0, 5, 0, range(0, 11))
        west = straight_track("B", 50, 100, -5, 0, range(0, 11))
        north = straight_track("C", 0, 100, 0, 5, range(0, 11))
        self.assertAlmostEqual(track_direction_conflict(east, east), 0.0)
        self.assertAlmostEqual(track_direction_conflict(east, west), 1.0)
        self.assertAlmostEqual(track_direction_conflict(east, north), 0.5)
        parked = straight_track("D", 0, 100, 0, 0, range(0, 11))
        self.assertEqual(track_direction_conflict(east, parked), 0.0)

    def test_track_conflict_combines_aspects(self):
        a = straight_track("A", 0, 0, 5, 0, range(0, 11))
        b = straight_track("B", 0, 100, 5, 0, range(0, 11))
        self.assertAlmostEqual(track_conflict(a, b, self.config), 100 * 0.01 / 300, delta=1e-12)
        opposite = straight_track("C", 5000, 5000, -5, 0, range(0, 11))
        self.assertEqual(track_conflict(a, opposite, self.config), 1.0)

    def test_track_conflict_matrix(self):
        tracks = [straight_track(f"T{i}", 0, 150 * i, 5, 0, range(0, 11)) for i in range(4)]
        matrix = track_conflict_matrix(tracks, self.config)
        assert_allclose(matrix, matrix.T)
        assert_allclose(np.diag(matrix), 0.0)
        self.assertAlmostEqual(matrix[0, 1], 150 * 0.01 / 300, delta=1e-12)
        self.assertAlmostEqual(matrix[0, 3], ramp_conflict(450.0, DISTANCE_RAMP), delta=1e-12)


if __name__ == "__main__":
    unittest.main()
