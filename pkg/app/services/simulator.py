"""Exact simulation of chain paths, observation times and log prices."""
from dataclasses import dataclass
from typing import List
import logging

import numpy as np

from ..core.exceptions import InvalidPathError
from ..core.seeding import ARRIVAL_STREAM, INCREMENT_STREAM, PATH_STREAM, derive_seed
from .model_core import ChainPath, MarketModel, Tick, VolatilityChain
from .policies import ObservationPolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimOutput:
    """Ground-truth path together with the ticks observed along it."""
    path: ChainPath
    ticks: List[Tick]
    true_states_at_ticks: np.ndarray


@dataclass(frozen=True)
class SegmentBatch:
    """Many independent chain pieces on [0, duration], padded to a common jump count.

    ``starts[n, k]`` is the start of the k-th piece of path n (``inf`` for
    padding) and ``states[n, k]`` its state.
    """
    starts: np.ndarray
    states: np.ndarray
    duration: float

    @property
    def ends(self) -> np.ndarray:
        return np.concatenate((self.starts[:, 1:], np.full((self.starts.shape[0], 1), np.inf)), axis=1)

    def _lengths(self, times: np.ndarray) -> np.ndarray:
        # (paths, pieces, times): time spent in each piece up to each t.
        upto = np.minimum(times[None, None, :], self.ends[:, :, None])
        return np.clip(upto - self.starts[:, :, None], 0.0, None)

    def integrate(self, per_state: np.ndarray, times) -> np.ndarray:
        """``∫_0^t per_state[θ_u] du`` for every path and every t, shape (paths, times)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        coefficients = np.asarray(per_state, dtype=float)[self.states]
        return np.einsum("nk,nkt->nt", coefficients, self._lengths(times))

    def state_at(self, times) -> np.ndarray:
        """State of every path at every t, shape (paths, times)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        index = (self.starts[:, :, None] <= times[None, None, :]).sum(axis=1) - 1
        return np.take_along_axis(self.states, index, axis=1)

    def jumped_by(self, times) -> np.ndarray:
        """Whether each path has left its start state by t, shape (paths, times)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.starts.shape[1] < 2:
            return np.zeros((self.starts.shape[0], times.shape[0]), dtype=bool)
        return self.starts[:, 1, None] <= times[None, :]

    @property
    def final_states(self) -> np.ndarray:
        return self.state_at([self.duration])[:, 0]


def simulate_segments(
    chain: VolatilityChain,
    start_states: np.ndarray,
    duration: float,
    rng: np.random.Generator,
) -> SegmentBatch:
    """Simulate one chain piece per start state over [0, duration], exactly and vectorized."""
    current = np.array(start_states, dtype=int)
    count = current.shape[0]
    rates = chain.exit_rates
    cumulative = np.cumsum(chain.jump_probabilities(), axis=1)
    cumulative[rates > 0, -1] = 1.0

    now = np.zeros(count)
    starts = [np.zeros(count)]
    states = [current.copy()]
    active = rates[current] > 0

    while active.any():
        index = np.flatnonzero(active)
        holding = rng.exponential(size=index.shape[0]) / rates[current[index]]
        arrival = now[index] + holding
        jumped = arrival < duration
        movers = index[jumped]

        draws = rng.uniform(size=movers.shape[0])
        current[movers] = np.minimum((draws[:, None] >= cumulative[current[movers]]).sum(axis=1), chain.size - 1)
        now[movers] = arrival[jumped]

        piece_start = np.full(count, np.inf)
        piece_start[movers] = now[movers]
        starts.append(piece_start)
        states.append(current.copy())

        active[index[~jumped]] = False
        active[movers] = rates[current[movers]] > 0

    return SegmentBatch(starts=np.stack(starts, axis=1), states=np.stack(states, axis=1), duration=float(duration))


def simulate_chain(chain: VolatilityChain, T: float, seed: int) -> ChainPath:
    """Exact CTMC path on [0, T] started from a draw of the initial law."""
    if not T > 0:
        raise InvalidPathError(f"horizon must be positive, got {T}")
    rng = np.random.default_rng(seed)
    state = int(rng.choice(chain.size, p=chain.initial_law))
    rates = chain.exit_rates
    probs = chain.jump_probabilities()

    jump_times, states = [], [state]
    now = 0.0
    while rates[state] > 0:
        now += rng.exponential(1.0 / rates[state])
        if now >= T:
            break
        state = int(rng.choice(chain.size, p=probs[state]))
        jump_times.append(now)
        states.append(state)
    return ChainPath(jump_times=np.array(jump_times, dtype=float), states=np.array(states, dtype=int), horizon=float(T))


def simulate_arrivals(path: ChainPath, policy: ObservationPolicy, seed: int) -> np.ndarray:
    """Observation times in (0, T] under the given policy."""
    rng = np.random.default_rng(seed)
    return policy.sample_arrivals(path, rng)


def simulate_ticks(path: ChainPath, model: MarketModel, arrivals, seed: int) -> List[Tick]:
    """Log prices at the arrival times, with exact Gaussian increments given the path."""
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.size and (arrivals[0] <= 0 or arrivals[-1] > path.horizon or np.any(np.diff(arrivals) <= 0)):
        raise InvalidPathError("arrivals must be strictly increasing inside (0, horizon]")
    rng = np.random.default_rng(seed)
    times = np.concatenate(([0.0], arrivals))
    means = np.diff(path.cumulative_integral(model.mean_rate, times))
    variances = np.diff(path.cumulative_integral(model.variance_rate, times))
    increments = rng.normal(means, np.sqrt(variances))
    logprices = model.x0 + np.concatenate(([0.0], np.cumsum(increments)))
    return [Tick(time=float(t), logprice=float(x)) for t, x in zip(times, logprices)]


def simulate(
    chain: VolatilityChain,
    model: MarketModel,
    policy: ObservationPolicy,
    T: float,
    seed: int,
) -> SimOutput:
    """Path, arrivals and prices from independent streams derived from one seed."""
    model.check_chain(chain)
    policy.check(chain.size)
    path = simulate_chain(chain, T, derive_seed(seed, PATH_STREAM))
    arrivals = simulate_arrivals(path, policy, derive_seed(seed, ARRIVAL_STREAM))
    ticks = simulate_ticks(path, model, arrivals, derive_seed(seed, INCREMENT_STREAM))
    truth = path.state_at([tick.time for tick in ticks])
    logger.info(f"Simulated {len(path.jump_times)} chain jumps and {len(ticks) - 1} arrivals on [0, {T}]")
    return SimOutput(path=path, ticks=ticks, true_states_at_ticks=truth)
