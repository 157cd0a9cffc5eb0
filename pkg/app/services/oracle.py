"""Sequential Monte-Carlo reference filter.

Each particle carries an exactly simulated chain piece since the last
tick. At a tick its weight is multiplied by the Gaussian likelihood of the
observed increment and by the arrival factor of the policy; probes between
ticks weight particles by their probability of seeing no arrival yet.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence
import logging
import math

import numpy as np

from ..core.config import settings
from ..core.exceptions import ConfigError, TickDataError, WeightCollapseError
from ..core.seeding import ORACLE_STREAM, RESAMPLE_STREAM, derive_rng
from .filter_engine import PROBE, TICK, Posterior, TrajectoryPoint
from .model_core import MarketModel, Tick, VolatilityChain
from .policies import ObservationPolicy
from .simulator import simulate_segments

logger = logging.getLogger(__name__)


@dataclass
class ParticleCloud:
    """Particle states, log weights and segment stats accumulated since the last tick."""
    states: np.ndarray
    log_weights: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    hazard: np.ndarray
    ess_fraction: float

    @classmethod
    def from_states(cls, states: np.ndarray, ess_fraction: float) -> "ParticleCloud":
        count = states.shape[0]
        return cls(
            states=states,
            log_weights=np.zeros(count),
            mean=np.zeros(count),
            var=np.zeros(count),
            hazard=np.zeros(count),
            ess_fraction=ess_fraction,
        )

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def normalized(self, extra_log: Optional[np.ndarray] = None) -> np.ndarray:
        log_w = self.log_weights if extra_log is None else self.log_weights + extra_log
        top = np.max(log_w)
        if not np.isfinite(top):
            raise WeightCollapseError("all particle weights are zero")
        w = np.exp(log_w - top)
        return w / math.fsum(w)

    def histogram(self, size: int, extra_log: Optional[np.ndarray] = None) -> Posterior:
        w = self.normalized(extra_log)
        # Exact sums keep the histogram independent of particle order.
        return Posterior(np.array([math.fsum(w[self.states == s]) for s in range(size)]))

    def ess(self) -> float:
        w = self.normalized()
        return 1.0 / math.fsum(w * w)

    def reset_segment(self) -> None:
        self.mean[:] = 0.0
        self.var[:] = 0.0
        self.hazard[:] = 0.0


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling (low variance)."""
    n = len(weights)
    cumsum = np.cumsum(weights)
    u = rng.uniform(0, 1.0 / n) + np.arange(n) / n
    return np.clip(np.searchsorted(cumsum, u), 0, n - 1)


def _advance_block(chain, model, survival, states, duration, seed, key):
    rng = derive_rng(seed, ORACLE_STREAM, *key)
    pieces = simulate_segments(chain, states, duration, rng)
    end = [duration]
    return (
        pieces.final_states,
        pieces.integrate(model.mean_rate, end)[:, 0],
        pieces.integrate(model.variance_rate, end)[:, 0],
        pieces.integrate(survival, end)[:, 0],
    )


def _advance(cloud, chain, model, survival, duration, seed, interval, piece, pool, block):
    bounds = range(0, cloud.size, block)
    jobs = [(start, cloud.states[start:start + block]) for start in bounds]
    results = pool.map(
        lambda job: _advance_block(chain, model, survival, job[1], duration, seed, (interval, piece, job[0] // block)),
        jobs,
    )
    for (start, _), (states, mean, var, hazard) in zip(jobs, results):
        stop = start + states.shape[0]
        cloud.states[start:stop] = states
        cloud.mean[start:stop] += mean
        cloud.var[start:stop] += var
        cloud.hazard[start:stop] += hazard


def pf_run(
    chain: VolatilityChain,
    model: MarketModel,
    policy: ObservationPolicy,
    ticks: Sequence[Tick],
    N: int,
    seed: int,
    probe_times: Optional[Iterable[float]] = None,
    threads: int = 1,
    ess_fraction: Optional[float] = None,
) -> List[TrajectoryPoint]:
    """
    Particle posterior at every tick (and at probe times between ticks).

    Raises:
        WeightCollapseError: If every particle weight vanishes at a tick
    """
    if N < settings.MIN_PARTICLES:
        raise ConfigError(f"particle oracle needs at least {settings.MIN_PARTICLES} particles, got {N}")
    model.check_chain(chain)
    policy.check(chain.size)
    ess_fraction = settings.ESS_FRACTION if ess_fraction is None else ess_fraction
    size = chain.size
    survival = policy.survival_rates(size)
    block = settings.PARTICLE_BLOCK_SIZE

    ticks = list(ticks)
    for row, (before, after) in enumerate(zip(ticks, ticks[1:]), start=2):
        if not after.time > before.time:
            raise TickDataError(f"tick times must be strictly increasing ({after.time} after {before.time})", row=row)
    probes = [] if probe_times is None else sorted(set(float(p) for p in probe_times))

    init_rng = derive_rng(seed, ORACLE_STREAM, 0)
    cloud = ParticleCloud.from_states(init_rng.choice(size, size=N, p=chain.initial_law), ess_fraction)
    last = Tick(time=0.0, logprice=model.x0)
    trajectory: List[TrajectoryPoint] = []
    if not ticks:
        return [TrajectoryPoint(0.0, cloud.histogram(size), TICK)]
    if ticks[0].time == last.time:
        last = ticks[0]
        trajectory.append(TrajectoryPoint(last.time, cloud.histogram(size), TICK))
        ticks = ticks[1:]

    cursor = 0
    resamples = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for interval, tick in enumerate(ticks, start=1):
            now = last.time
            piece = 0
            while cursor < len(probes) and probes[cursor] < tick.time:
                probe = probes[cursor]
                cursor += 1
                if probe <= now:
                    continue
                _advance(cloud, chain, model, survival, probe - now, seed, interval, piece, pool, block)
                piece += 1
                now = probe
                trajectory.append(TrajectoryPoint(probe, cloud.histogram(size, -cloud.hazard), PROBE))
            _advance(cloud, chain, model, survival, tick.time - now, seed, interval, piece, pool, block)

            increment = tick.logprice - last.logprice
            with np.errstate(divide="ignore"):
                log_density = -0.5 * (increment - cloud.mean) ** 2 / cloud.var - 0.5 * np.log(2.0 * np.pi * cloud.var)
                log_arrival = np.log(policy.tick_likelihood(cloud.states, cloud.hazard, size))
            cloud.log_weights = cloud.log_weights + log_density + log_arrival
            try:
                posterior = cloud.histogram(size)
            except WeightCollapseError as e:
                raise WeightCollapseError(
                    f"particle weights collapsed at tick {interval} (t={tick.time}, increment {increment}, "
                    f"best log-likelihood {np.max(log_density + log_arrival)!r})"
                ) from e
            trajectory.append(TrajectoryPoint(tick.time, posterior, TICK))

            if cloud.ess() < cloud.ess_fraction * cloud.size:
                index = systematic_resample(cloud.normalized(), derive_rng(seed, RESAMPLE_STREAM, interval))
                cloud.states = cloud.states[index]
                cloud.log_weights = np.zeros(cloud.size)
                resamples += 1
            cloud.reset_segment()
            last = tick

        now, piece = last.time, 0
        for probe in probes[cursor:]:
            if probe <= now:
                continue
            _advance(cloud, chain, model, survival, probe - now, seed, len(ticks) + 1, piece, pool, block)
            piece += 1
            now = probe
            trajectory.append(TrajectoryPoint(probe, cloud.histogram(size, -cloud.hazard), PROBE))

    logger.info(f"Particle oracle: {len(ticks)} ticks, {N} particles, {resamples} resampling steps")
    return trajectory
