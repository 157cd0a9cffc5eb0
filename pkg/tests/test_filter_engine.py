import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import time
import unittest
from unittest.mock import patch

import numpy as np

from app.core.config import settings
from app.core.exceptions import (
    ConservationError,
    DegenerateLikelihoodError,
    HorizonExceededError,
    InvalidModelError,
    TickDataError,
)
from app.services.filter_engine import (
    PROBE,
    TICK,
    FilterService,
    Posterior,
    _correction_terms,
    init,
    posterior_mean,
    propagate,
    run,
    tick_update,
)
from app.services.model_core import MarketModel, Tick, VolatilityChain, transition_matrix
from app.services.policies import CoxPolicy, FixedGridPolicy, PoissonPolicy
from app.services.simulator import simulate
from app.services.structure_tables import GridSpec, build_table, default_z_range

TIMES = [0.0, 0.2, 0.45, 0.6, 1.3, 1.5]
INCREMENTS = [0.02, -0.05, 0.01, 0.3, -0.1]


def make_ticks(times=TIMES, increments=INCREMENTS, x0=0.0):
    prices = x0 + np.concatenate(([0.0], np.cumsum(increments)))
    return [Tick(time=t, logprice=float(x)) for t, x in zip(times, prices)]


def make_table(chain, model, policy, t_max=1.0, n_t=21, n_z=201, n_paths=2000):
    z_min, z_max = default_z_range(model, t_max)
    grid = GridSpec(t_max=t_max, n_t=n_t, z_min=z_min, z_max=z_max, n_z=n_z, n_paths=n_paths, seed=5)
    return build_table(chain, model, policy, grid)


class TestCoxFilter(unittest.TestCase):
    """Test cases for the filter under state-dependent arrivals."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.5, 0.5])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.4])
        cls.policy = CoxPolicy([5.0, 15.0])
        cls.table = make_table(cls.chain, cls.model, cls.policy)

    def service(self, fallback=True):
        return FilterService(self.chain, self.model, self.policy, self.table, rk4_step=1e-3, fallback=fallback)

    def test_tick_update_is_bayes_rule(self):
        state = init(self.chain, self.table, self.policy)
        tick = Tick(time=0.3, logprice=0.04)
        posterior = tick_update(state, tick)
        weights = np.array([5.0, 15.0]) * (self.chain.initial_law @ self.table.q_matrix(0.3, 0.04))
        np.testing.assert_allclose(posterior.pi, weights / weights.sum(), rtol=1e-12)
        self.assertEqual(state.anchor, posterior)
        self.assertEqual(state.last_tick, tick)

    def test_trajectory_entries_are_probability_vectors(self):
        trajectory = self.service().filter_ticks(make_ticks(), probe_every=0.05)
        for point in trajectory:
            self.assertAlmostEqual(point.posterior.pi.sum(), 1.0, delta=1e-9)
            self.assertTrue(np.all(point.posterior.pi >= 0))
        self.assertEqual([p.time for p in trajectory if p.kind == TICK], TIMES)
        times = [p.time for p in trajectory]
        self.assertEqual(times, sorted(times))

    def test_probes_do_not_change_tick_posteriors(self):
        ticks = make_ticks()
        fast = self.service().filter_ticks(ticks, ticks_only=True)
        slow = self.service().filter_ticks(ticks, probe_every=0.05)
        self.assertEqual(len(fast), len(ticks))
        self.assertTrue(any(point.kind == PROBE for point in slow))
        slow_ticks = [point for point in slow if point.kind == TICK]
        for a, b in zip(fast, slow_ticks):
            self.assertEqual(a.time, b.time)
            self.assertLessEqual(np.max(np.abs(a.posterior.pi - b.posterior.pi)), 1e-8)

    def test_large_move_favours_high_volatility(self):
        posterior = self.service().filter_ticks(make_ticks([0.0, 0.1], [0.5]), ticks_only=True)[-1].posterior
        self.assertGreater(posterior.pi[1], 0.9)

    def test_silence_favours_low_intensity(self):
        state = init(self.chain, self.table, self.policy)
        later = propagate(state, 0.8)
        # Without arrivals the state with fewer ticks becomes more likely.
        self.assertGreater(later.pi[0], 0.5)
        self.assertEqual(state.clock, 0.8)

    def test_propagation_beyond_horizon(self):
        state = init(self.chain, self.table, self.policy)
        with self.assertRaises(HorizonExceededError):
            propagate(state, 1.2)

    def test_correction_terms_conserve_mass(self):
        state = init(self.chain, self.table, self.policy)
        tick_update(state, Tick(0.2, 0.03))
        gaps = np.linspace(0.0, 0.95, 96)
        transitions = np.stack([transition_matrix(self.chain, gap) for gap in gaps])
        d, d_bar = _correction_terms(state, gaps, transitions)
        self.assertTrue(np.all(d_bar > 0))
        self.assertTrue(np.all(d <= 0))
        residual = np.abs(d.sum(axis=1) + d_bar)
        self.assertTrue(np.all(residual <= 1e-10 * np.abs(d_bar)), f"largest residual {residual.max()}")
        self.assertEqual(state.warnings, [])

    def test_broken_conservation_raises(self):
        state = init(self.chain, self.table, self.policy)
        with patch.object(settings, "CONSERVATION_TOL", -1.0):
            with self.assertRaises(ConservationError):
                propagate(state, 0.3)

    def test_reporting_times_after_the_last_tick_are_propagated(self):
        ticks = make_ticks([0.0, 0.2], [0.01])
        state = init(self.chain, self.table, self.policy)
        trajectory = run(state, ticks, np.array([0.1, 0.5, 0.9]))
        self.assertEqual([(p.time, p.kind) for p in trajectory], [(0.0, TICK), (0.1, PROBE), (0.2, TICK), (0.5, PROBE), (0.9, PROBE)])
        reference = init(self.chain, self.table, self.policy)
        run(reference, ticks)
        np.testing.assert_allclose(trajectory[-1].posterior.pi, propagate(reference, 0.9).pi, atol=1e-10)

    def test_reporting_time_past_the_horizon_after_the_last_tick(self):
        state = init(self.chain, self.table, self.policy)
        with self.assertRaises(HorizonExceededError):
            run(state, make_ticks([0.0, 0.2], [0.01]), [1.2])

    def test_reporting_times_may_be_an_array(self):
        state = init(self.chain, self.table, self.policy)
        trajectory = run(state, make_ticks(), np.arange(0.05, 1.5, 0.05))
        self.assertEqual(sum(p.kind == TICK for p in trajectory), len(TIMES))
        self.assertGreater(sum(p.kind == PROBE for p in trajectory), 20)

    def test_degenerate_likelihood_falls_back_to_prior(self):
        service = self.service()
        ticks = make_ticks([0.0, 0.2], [50.0])
        trajectory = service.filter_ticks(ticks, ticks_only=True)
        expected = transition_matrix(self.chain, 0.2).T @ self.chain.initial_law
        np.testing.assert_allclose(trajectory[-1].posterior.pi, expected, atol=1e-12)
        self.assertEqual(len(service.last_warnings), 1)

    def test_degenerate_likelihood_without_fallback(self):
        with self.assertRaises(DegenerateLikelihoodError):
            self.service(fallback=False).filter_ticks(make_ticks([0.0, 0.2], [50.0]), ticks_only=True)

    def test_non_increasing_ticks(self):
        ticks = [Tick(0.0, 0.0), Tick(0.3, 0.01), Tick(0.3, 0.02)]
        with self.assertRaises(TickDataError) as ctx:
            self.service().filter_ticks(ticks)
        self.assertIn("row 3", str(ctx.exception))

    def test_empty_tick_list_returns_prior(self):
        trajectory = self.service().filter_ticks([])
        self.assertEqual(len(trajectory), 1)
        np.testing.assert_array_equal(trajectory[0].posterior.pi, self.chain.initial_law)

    def test_policy_must_match_table(self):
        with self.assertRaises(InvalidModelError):
            init(self.chain, self.table, CoxPolicy([5.0, 16.0]))

    def test_posterior_mean(self):
        self.assertAlmostEqual(posterior_mean(Posterior(np.array([0.25, 0.75])), self.chain), 0.325)


class TestUninformativeData(unittest.TestCase):
    """States identical to the observer leave the prior dynamics untouched."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [1.0, -1.0]], initial_law=[0.8, 0.2])
        cls.model = MarketModel(drift=[0.01, 0.01], vol=[0.25, 0.25])
        cls.policy = CoxPolicy([5.0, 5.0])
        cls.table = make_table(cls.chain, cls.model, cls.policy, n_t=101, n_z=101, n_paths=300)

    def test_trajectory_follows_forward_equation(self):
        service = FilterService(self.chain, self.model, self.policy, self.table, rk4_step=1e-3)
        trajectory = service.filter_ticks(make_ticks(), probe_every=0.05)
        for point in trajectory:
            expected = transition_matrix(self.chain, point.time).T @ self.chain.initial_law
            np.testing.assert_allclose(point.posterior.pi, expected, atol=1e-6, err_msg=f"{point.kind} at {point.time}")


class TestConstantIntensity(unittest.TestCase):
    """Equal Cox intensities reduce the inter-tick equation to the forward equation."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.8, 0.2])
        cls.model = MarketModel(drift=[0.03, -0.02], vol=[0.1, 0.4])
        cls.policy = CoxPolicy([8.0, 8.0])
        cls.table = make_table(cls.chain, cls.model, cls.policy, t_max=1.2, n_t=13, n_z=41, n_paths=300)

    def test_propagation_matches_transition_matrix(self):
        state = init(self.chain, self.table, self.policy, rk4_step=1e-3)
        for gap in (0.1, 0.25, 0.5, 0.77, 1.0):
            expected = transition_matrix(self.chain, gap).T @ self.chain.initial_law
            np.testing.assert_allclose(propagate(state, gap).pi, expected, atol=1e-4, err_msg=f"gap {gap}")

    def test_propagation_after_a_tick(self):
        state = init(self.chain, self.table, self.policy, rk4_step=1e-3)
        anchor = tick_update(state, Tick(0.3, 0.05))
        expected = transition_matrix(self.chain, 1.0).T @ anchor.pi
        np.testing.assert_allclose(propagate(state, 1.3).pi, expected, atol=1e-4)


class TestStepHalving(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.5, 0.5])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.4])
        cls.policy = CoxPolicy([2.0, 6.0])
        cls.table = make_table(cls.chain, cls.model, cls.policy, n_z=101, n_paths=2000)

    def test_halving_the_step_changes_little(self):
        results = []
        for step in (2e-3, 1e-3):
            state = init(self.chain, self.table, self.policy, rk4_step=step)
            tick_update(state, Tick(0.1, -0.02))
            results.append([propagate(state, t).pi for t in (0.35, 0.6, 1.05)])
        np.testing.assert_allclose(results[0], results[1], atol=1e-6)


class TestLongCoxRun(unittest.TestCase):
    """Three states, 500 ticks and probes every 0.05."""

    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(
            states=[0.1, 0.2, 0.4],
            intensity=[[-0.4, 0.3, 0.1], [0.2, -0.4, 0.2], [0.1, 0.3, -0.4]],
            initial_law=[1 / 3, 1 / 3, 1 / 3],
        )
        cls.model = MarketModel(drift=[0.0, 0.0, 0.0], vol=[0.1, 0.2, 0.4])
        cls.policy = CoxPolicy([5.0, 10.0, 20.0])
        cls.table = make_table(cls.chain, cls.model, cls.policy, t_max=3.0, n_t=61, n_z=81, n_paths=1000)
        ticks = simulate(cls.chain, cls.model, cls.policy, T=150.0, seed=21).ticks
        cls.ticks = ticks[:501]

    def test_every_posterior_stays_on_the_simplex(self):
        self.assertEqual(len(self.ticks), 501)
        service = FilterService(self.chain, self.model, self.policy, self.table)
        started = time.perf_counter()
        trajectory = service.filter_ticks(self.ticks, probe_every=0.05)
        elapsed = time.perf_counter() - started
        self.assertGreater(sum(p.kind == PROBE for p in trajectory), 100)
        for point in trajectory:
            self.assertTrue(np.all(point.posterior.pi >= 0))
            self.assertLessEqual(abs(point.posterior.pi.sum() - 1.0), 1e-9)
        self.assertLess(elapsed, 10.0)


class TestPoissonFilter(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.1, 0.4], intensity=[[-0.5, 0.5], [0.5, -0.5]], initial_law=[0.9, 0.1])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.1, 0.4])
        cls.policy = PoissonPolicy(5.0)
        cls.table = make_table(cls.chain, cls.model, cls.policy, n_z=101, n_paths=500)

    def test_ode_matches_closed_form(self):
        closed, ode = init(self.chain, self.table, self.policy), init(self.chain, self.table, self.policy, rk4_step=1e-3)
        for state in (closed, ode):
            tick_update(state, Tick(0.2, 0.03))
        a = propagate(closed, 0.7)
        b = propagate(ode, 0.7, method="ode")
        np.testing.assert_allclose(a.pi, b.pi, atol=1e-9)

    def test_propagation_ignores_table_horizon(self):
        state = init(self.chain, self.table, self.policy)
        expected = transition_matrix(self.chain, 3.0).T @ self.chain.initial_law
        np.testing.assert_allclose(propagate(state, 3.0).pi, expected, atol=1e-14)

    def test_unknown_method(self):
        with self.assertRaises(ValueError):
            propagate(init(self.chain, self.table, self.policy), 0.5, method="euler")


class TestFixedGridFilter(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.chain = VolatilityChain(states=[0.15, 0.35], intensity=[[-0.3, 0.3], [0.6, -0.6]], initial_law=[0.67, 0.33])
        cls.model = MarketModel(drift=[0.0, 0.0], vol=[0.15, 0.35])
        cls.policy = FixedGridPolicy(0.1)
        cls.table = make_table(cls.chain, cls.model, cls.policy, t_max=0.5, n_z=101, n_paths=500)
        cls.ticks = make_ticks([0.1 * k for k in range(6)], [0.01, -0.02, 0.05, 0.0, -0.08])

    def test_probes_do_not_change_tick_posteriors(self):
        service = FilterService(self.chain, self.model, self.policy, self.table)
        fast = [p for p in service.filter_ticks(self.ticks, ticks_only=True) if p.kind == TICK]
        slow = [p for p in service.filter_ticks(self.ticks, probe_every=0.025) if p.kind == TICK]
        for a, b in zip(fast, slow):
            self.assertLessEqual(np.max(np.abs(a.posterior.pi - b.posterior.pi)), 1e-8)

    def test_gap_mismatch_warns(self):
        state = init(self.chain, self.table, self.policy)
        run(state, [Tick(0.0, 0.0), Tick(0.13, 0.01)])
        self.assertEqual(len(state.warnings), 1)
        self.assertIn("grid step", state.warnings[0])


if __name__ == '__main__':
    unittest.main()
