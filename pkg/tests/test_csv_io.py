import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math
import tempfile
import unittest

import numpy as np

from app.core.exceptions import TickDataError
from app.io.csv_files import (
    read_ground_truth,
    read_ticks,
    read_trajectory,
    write_ground_truth,
    write_ticks,
    write_trajectory,
)
from app.services.filter_engine import PROBE, TICK, Posterior, TrajectoryPoint
from app.services.model_core import ChainPath, Tick, VolatilityChain


class TestTickFiles(unittest.TestCase):
    """Test cases for tick CSV files."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "ticks.csv")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write(text)

    def test_empty_body_is_valid(self):
        self.write("time,log_price\n")
        ticks, from_price = read_ticks(self.path)
        self.assertEqual(ticks, [])
        self.assertFalse(from_price)

    def test_price_column_is_logged(self):
        self.write("time,price\n0,100\n0.5,101.5\n")
        ticks, from_price = read_ticks(self.path)
        self.assertTrue(from_price)
        self.assertAlmostEqual(ticks[0].logprice, math.log(100.0), delta=1e-15)
        self.assertAlmostEqual(ticks[1].logprice, math.log(101.5))

    def test_non_monotone_times_name_the_row(self):
        self.write("time,log_price\n0,0\n0.5,0.1\n0.5,0.2\n")
        with self.assertRaises(TickDataError) as ctx:
            read_ticks(self.path)
        self.assertIn("row 3", str(ctx.exception))

    def test_nan_and_inf_rejected(self):
        for value in ("nan", "inf", "abc"):
            self.write(f"time,log_price\n0,0\n0.5,{value}\n")
            with self.assertRaises(TickDataError) as ctx:
                read_ticks(self.path)
            self.assertIn("row 2", str(ctx.exception))

    def test_bad_header(self):
        self.write("t,x\n0,0\n")
        with self.assertRaises(TickDataError):
            read_ticks(self.path)

    def test_non_positive_price(self):
        self.write("time,price\n0,1\n1,0\n")
        with self.assertRaises(TickDataError):
            read_ticks(self.path)

    def test_write_then_read(self):
        ticks = [Tick(0.0, 0.0), Tick(0.1234567890123, -0.3), Tick(2.0, 1.0 / 3.0)]
        write_ticks(self.path, ticks)
        self.assertEqual(read_ticks(self.path)[0], ticks)

    def test_seventeen_digit_values_read_back_exactly(self):
        self.write("time,log_price\n0,-0.29999999999999999\n0.10000000000000001,0.33333333333333331\n")
        ticks, _ = read_ticks(self.path)
        self.assertEqual(ticks, [Tick(0.0, -0.3), Tick(0.1, 1.0 / 3.0)])

    def test_awkward_values_survive_write_and_read(self):
        rng = np.random.default_rng(3)
        times = np.cumsum(rng.exponential(0.01, size=200))
        values = rng.normal(0.0, 0.3, size=200)
        ticks = [Tick(float(t), float(x)) for t, x in zip(times, values)]
        write_ticks(self.path, ticks)
        self.assertEqual(read_ticks(self.path)[0], ticks)


class TestTrajectoryFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "trajectory.csv")

    def tearDown(self):
        self.tmp.cleanup()

    def test_header_and_round_trip(self):
        trajectory = [
            TrajectoryPoint(0.0, Posterior(np.array([0.5, 0.5])), TICK),
            TrajectoryPoint(0.05, Posterior(np.array([0.6123456789012345, 0.3876543210987655])), PROBE),
            TrajectoryPoint(0.1, Posterior(np.array([1.0 / 3.0, 2.0 / 3.0])), TICK),
        ]
        write_trajectory(self.path, trajectory, 2)
        with open(self.path, encoding="utf-8") as handle:
            self.assertEqual(handle.readline().strip(), "time,kind,pi_1,pi_2")
        loaded = read_trajectory(self.path)
        self.assertEqual([p.kind for p in loaded], [TICK, PROBE, TICK])
        for a, b in zip(trajectory, loaded):
            self.assertEqual(a.time, b.time)
            np.testing.assert_allclose(a.posterior.pi, b.posterior.pi, rtol=1e-15)

    def test_unknown_kind(self):
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write("time,kind,pi_1\n0,jump,1\n")
        with self.assertRaises(TickDataError):
            read_trajectory(self.path)


class TestGroundTruthFiles(unittest.TestCase):
    def test_ticks_and_jumps(self):
        chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.5, 0.5])
        path = ChainPath(jump_times=[0.7], states=[0, 1], horizon=2.0)
        ticks = [Tick(0.0, 0.0), Tick(0.5, 0.01), Tick(1.2, 0.05)]
        with tempfile.TemporaryDirectory() as folder:
            target = os.path.join(folder, "truth.csv")
            write_ground_truth(target, ticks, [0, 0, 1], chain, path)
            with open(target, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
            self.assertEqual(lines[0], "time,kind,state,volatility")
            self.assertEqual(lines[3], "0.69999999999999996,jump,1,0.40000000000000002")
            np.testing.assert_array_equal(read_ground_truth(target), [0, 0, 1])


if __name__ == '__main__':
    unittest.main()
