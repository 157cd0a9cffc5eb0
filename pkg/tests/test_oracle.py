import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import unittest

import numpy as np

from app.core.exceptions import ConfigError, WeightCollapseError
from app.services.filter_engine import PROBE, TICK, FilterService, init, propagate
from app.services.model_core import MarketModel, Tick, VolatilityChain, transition_matrix
from app.services.oracle import ParticleCloud, pf_run, systematic_resample
from app.services.policies import CoxPolicy
from app.services.structure_tables import GridSpec, build_table, default_z_range
from app.services.validation import compare_trajectories, total_variation

TICKS = [Tick(0.0, 0.0), Tick(0.2, 0.02), Tick(0.45, -0.03), Tick(0.6, -0.02), Tick(1.3, 0.28), Tick(1.5, 0.18)]


class TestParticleOracle(unittest.TestCase):
    """Test cases for the particle reference filter."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.5, 0.5])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.4])
        cls.policy = CoxPolicy([5.0, 15.0])

    def test_reproducible_and_thread_independent(self):
        first = pf_run(self.chain, self.model, self.policy, TICKS, 10000, seed=3, threads=1)
        second = pf_run(self.chain, self.model, self.policy, TICKS, 10000, seed=3, threads=3)
        self.assertEqual(len(first), len(TICKS))
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.posterior.pi, b.posterior.pi)

    def test_agrees_with_filter(self):
        z_min, z_max = default_z_range(self.model, 1.0)
        grid = GridSpec(t_max=1.0, n_t=41, z_min=z_min, z_max=z_max, n_z=201, n_paths=5000, seed=1)
        table = build_table(self.chain, self.model, self.policy, grid)
        filtered = FilterService(self.chain, self.model, self.policy, table).filter_ticks(TICKS, ticks_only=True)
        reference = pf_run(self.chain, self.model, self.policy, TICKS, 20000, seed=8)
        distances = compare_trajectories(filtered, reference)
        self.assertEqual(len(distances), len(TICKS))
        self.assertLess(np.mean(distances), 0.05)

        state = init(self.chain, table, self.policy)
        probe = pf_run(self.chain, self.model, self.policy, [Tick(0.0, 0.0), Tick(0.9, 0.0)], 20000, seed=8, probe_times=[0.8])
        probe_point = [point for point in probe if point.kind == PROBE][0]
        self.assertEqual(probe_point.time, 0.8)
        self.assertLess(total_variation(probe_point.posterior.pi, propagate(state, 0.8).pi), 0.03)

    def test_identical_states_give_prior_law(self):
        model = MarketModel(drift=[0.0, 0.0], vol=[0.2, 0.2])
        trajectory = pf_run(self.chain, model, CoxPolicy([5.0, 5.0]), TICKS, 20000, seed=4)
        for point in trajectory:
            self.assertEqual(point.kind, TICK)
            expected = transition_matrix(self.chain, point.time).T @ self.chain.initial_law
            np.testing.assert_allclose(point.posterior.pi, expected, atol=0.02)

    def test_too_few_particles(self):
        with self.assertRaises(ConfigError):
            pf_run(self.chain, self.model, self.policy, TICKS, 10, seed=0)

    def test_weight_collapse(self):
        with self.assertRaises(WeightCollapseError):
            pf_run(self.chain, self.model, self.policy, [Tick(0.0, 0.0), Tick(200.0, 0.0)], 200, seed=0)

    def test_no_ticks_returns_prior(self):
        trajectory = pf_run(self.chain, self.model, self.policy, [], 1000, seed=0)
        self.assertEqual(len(trajectory), 1)
        self.assertAlmostEqual(trajectory[0].posterior.pi.sum(), 1.0)


class TestResampling(unittest.TestCase):
    def test_systematic_resample_counts(self):
        weights = np.array([0.5, 0.25, 0.125, 0.125])
        index = systematic_resample(weights, np.random.default_rng(0))
        counts = np.bincount(index, minlength=4)
        # Each count is within one of N·w.
        self.assertTrue(np.all(np.abs(counts - 4 * weights) <= 1))
        self.assertEqual(counts.sum(), 4)

    def test_effective_sample_size(self):
        cloud = ParticleCloud.from_states(np.array([0, 1, 1, 0]), 0.5)
        self.assertAlmostEqual(cloud.ess(), 4.0)
        cloud.log_weights = np.array([0.0, -np.inf, -np.inf, -np.inf])
        self.assertAlmostEqual(cloud.ess(), 1.0)


if __name__ == '__main__':
    unittest.main()
