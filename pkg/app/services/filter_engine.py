"""On-line filter for the hidden volatility state.

At a tick the posterior is updated by a Bayes-type recursion over the
structure table. Between ticks it follows a deterministic Kolmogorov-type
equation: the plain forward equation when arrivals are uninformative
(Poisson, fixed grid), and the forward equation plus the no-arrival
correction terms for Cox arrivals.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence
import logging
import math

import numpy as np

from ..core.config import settings
from ..core.exceptions import (
    ConservationError,
    DegenerateLikelihoodError,
    HorizonExceededError,
    InvalidModelError,
    TickDataError,
)
from .model_core import MarketModel, Tick, VolatilityChain, transition_ladder, transition_matrix
from .policies import ObservationPolicy
from .structure_tables import StructureTable

logger = logging.getLogger(__name__)

TICK = "tick"
PROBE = "probe"


@dataclass(frozen=True)
class Posterior:
    """Probability vector over chain states."""
    pi: np.ndarray

    def __post_init__(self):
        pi = np.clip(np.asarray(self.pi, dtype=float), 0.0, None)
        total = pi.sum()
        if not (math.isfinite(total) and total > 0):
            raise DegenerateLikelihoodError("posterior has no mass")
        pi = pi / total
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)


@dataclass(frozen=True)
class TrajectoryPoint:
    time: float
    posterior: Posterior
    kind: str


@dataclass
class FilterState:
    """Single-owner running state of one filter."""
    posterior: Posterior
    anchor: Posterior
    last_tick: Tick
    table: StructureTable
    policy: ObservationPolicy
    chain: VolatilityChain
    clock: float
    rk4_step: float = field(default_factory=lambda: settings.DEFAULT_RK4_STEP)
    fallback: bool = True
    warnings: List[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)


def posterior_mean(posterior: Posterior, chain: VolatilityChain) -> float:
    """Posterior estimate of the volatility parameter, Σ π_i a_i."""
    return float(np.dot(posterior.pi, chain.states))


def init(
    chain: VolatilityChain,
    table: StructureTable,
    policy: ObservationPolicy,
    rk4_step: Optional[float] = None,
    fallback: bool = True,
) -> FilterState:
    """Filter state at time 0 with the prior as posterior."""
    if table.size != chain.size or not (
        np.array_equal(table.chain.states, chain.states)
        and np.array_equal(table.chain.intensity, chain.intensity)
    ):
        raise InvalidModelError("structure table was built for a different chain")
    if table.policy.fingerprint() != policy.fingerprint():
        raise InvalidModelError(f"structure table was built for policy {table.policy!r}, not {policy!r}")
    rk4_step = settings.DEFAULT_RK4_STEP if rk4_step is None else float(rk4_step)
    if not rk4_step > 0:
        raise InvalidModelError(f"RK4 step must be positive, got {rk4_step}")
    prior = Posterior(chain.initial_law)
    return FilterState(
        posterior=prior,
        anchor=prior,
        last_tick=Tick(time=0.0, logprice=table.model.x0),
        table=table,
        policy=policy,
        chain=chain,
        clock=0.0,
        rk4_step=rk4_step,
        fallback=fallback,
    )


def _arrival_atom_correction(state: FilterState, gap: float, increment: float) -> np.ndarray:
    # Correction for an atom of Φ_k at the next arrival. It vanishes for
    # continuous Φ_k (Cox, Poisson) and cancels exactly for the fixed grid;
    # a policy with a surviving atom needs this term implemented.
    correction = np.zeros(state.chain.size)
    assert state.policy.next_arrival_atom == 0.0 or state.policy.fixed_gap() is not None, (
        f"policy {state.policy.kind} has an arrival atom without a correction"
    )
    return correction


def tick_update(state: FilterState, tick: Tick) -> Posterior:
    """Bayes update of the posterior at a new tick; moves the anchor to the tick."""
    gap = tick.time - state.last_tick.time
    if not gap > 0:
        raise TickDataError(f"tick at {tick.time} does not follow the last tick at {state.last_tick.time}")
    increment = tick.logprice - state.last_tick.logprice

    step = state.policy.fixed_gap()
    if step is not None:
        if abs(gap - step) > 1e-6 * step:
            state.warn(f"tick gap {gap} differs from the grid step {step}; using the grid step")
        gap_used = step
    else:
        gap_used = gap

    q = state.table.q_matrix(gap_used, increment)
    weights = state.policy.tick_rates(state.chain.size) * (state.anchor.pi @ q)
    weights = weights + _arrival_atom_correction(state, gap_used, increment)
    total = weights.sum()

    if math.isfinite(total) and total > 0:
        posterior = Posterior(weights / total)
    elif state.fallback:
        state.warn(
            f"degenerate likelihood at t={tick.time} (gap {gap}, increment {increment}); "
            f"propagating the prior instead"
        )
        posterior = Posterior(transition_matrix(state.chain, gap).T @ state.anchor.pi)
    else:
        raise DegenerateLikelihoodError(f"all likelihoods vanish at t={tick.time} (increment {increment})")

    state.posterior = posterior
    state.anchor = posterior
    state.last_tick = tick
    state.clock = tick.time
    return posterior


def _correction_terms(state: FilterState, gaps: np.ndarray, transitions: np.ndarray):
    """D_i and D̄ at every gap after the last tick, shapes (G, M) and (G,).

    From the first gap whose tail mass is not positive onwards both terms
    are zero.
    """
    table = state.table
    rates = table.survival
    anchor = state.anchor.pi
    qbars = table.qbar_matrices(gaps, transitions)
    ending = np.einsum("j,gji->gi", anchor, qbars)  # Σ_j q̄_ji π_j(τ_k)
    denominators = table.tail_masses(anchor, gaps, qbars)

    degenerate = ~(denominators > 0)
    live = np.ones(len(gaps), dtype=bool)
    if degenerate.any():
        first = int(np.argmax(degenerate))
        live[first:] = False
        state.warn(
            f"no-arrival correction dropped after t={state.last_tick.time + gaps[first]}: "
            f"tail mass {denominators[first]!r} is not positive"
        )
    safe = np.where(live, denominators, 1.0)
    d = np.where(live[:, None], -rates[None, :] * ending / safe[:, None], 0.0)
    d_bar = np.where(live, (ending @ rates) / safe, 0.0)

    residual = np.abs(d.sum(axis=1) + d_bar)
    negligible = (np.abs(d_bar) < 1e-14) & (np.abs(d).sum(axis=1) < 1e-14)
    broken = (residual > settings.CONSERVATION_TOL * np.abs(d_bar)) & ~negligible
    if broken.any():
        at = int(np.argmax(broken))
        raise ConservationError(f"Σ D_i + D̄ = {residual[at]!r} at gap {gaps[at]}")
    return d, d_bar


def _rk4_grid(start: float, end: float, step: float):
    """Number of RK4 steps from start to end and their common length."""
    steps = max(1, math.ceil((end - start) / step - 1e-9))
    return steps, (end - start) / steps


def _rk4(field_fn, steps: int, h: float, pi: np.ndarray) -> np.ndarray:
    # field_fn takes the half-step index of the stage, 0..2*steps
    for m in range(steps):
        k1 = field_fn(2 * m, pi)
        k2 = field_fn(2 * m + 1, pi + 0.5 * h * k1)
        k3 = field_fn(2 * m + 1, pi + 0.5 * h * k2)
        k4 = field_fn(2 * m + 2, pi + h * k3)
        pi = pi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return pi


def propagate(state: FilterState, t: float, method: Optional[str] = None) -> Posterior:
    """
    Posterior at time t between ticks, given no arrival since the last tick.

    Args:
        state: Filter state; its posterior and clock move to t
        t: Target time, not before the state's clock
        method: "kolmogorov" for the closed-form forward solution (default
            for Poisson and fixed-grid policies) or "ode" to integrate the
            inter-tick equation by RK4 (always used for Cox arrivals)
    """
    if t < state.clock:
        raise ValueError(f"cannot propagate backwards from {state.clock} to {t}")
    gap = t - state.last_tick.time
    if t == state.clock:
        return state.posterior

    generator_t = state.chain.intensity.T
    tol_scale = max(1.0, float(np.abs(state.chain.intensity).max()))
    anchor_time = state.last_tick.time

    if state.policy.kolmogorov_between_ticks:
        method = method or "kolmogorov"
        if method == "kolmogorov":
            pi = transition_matrix(state.chain, gap).T @ state.anchor.pi
        elif method == "ode":
            rate = getattr(state.policy, "rate", 0.0)
            steps, h = _rk4_grid(state.clock, t, state.rk4_step)
            pulled = None
            if rate:
                ladder = transition_ladder(state.chain, state.clock - anchor_time, 0.5 * h, 2 * steps + 1)
                pulled = ladder.transpose(0, 2, 1) @ state.anchor.pi

            def field_fn(stage, pi):
                return generator_t @ pi if pulled is None else generator_t @ pi - rate * (pulled[stage] - pi)

            pi = _rk4(field_fn, steps, h, state.posterior.pi.copy())
        else:
            raise ValueError(f"unknown propagation method '{method}'")
    else:
        if method not in (None, "ode"):
            raise ValueError(f"arrivals of policy '{state.policy.kind}' need the ode method, got '{method}'")
        if gap >= state.table.grid.t_max:
            raise HorizonExceededError(f"gap {gap} since the last tick exceeds the table horizon {state.table.grid.t_max}")
        steps, h = _rk4_grid(state.clock, t, state.rk4_step)
        start = state.clock - anchor_time
        gaps = np.minimum(start + 0.5 * h * np.arange(2 * steps + 1), gap)
        transitions = transition_ladder(state.chain, start, 0.5 * h, len(gaps))
        d, d_bar = _correction_terms(state, gaps, transitions)

        def field_fn(stage, pi):
            value = generator_t @ pi + d_bar[stage] * pi + d[stage]
            total = value.sum()
            if abs(total) > settings.CONSERVATION_TOL * tol_scale * max(1.0, np.abs(value).max()):
                raise ConservationError(f"inter-tick vector field sums to {total!r} at t={anchor_time + gaps[stage]}")
            return value

        pi = _rk4(field_fn, steps, h, state.posterior.pi.copy())

    posterior = Posterior(pi)
    drift = abs(np.clip(pi, 0.0, None).sum() - 1.0)
    if drift > 1e-6:
        logger.debug(f"renormalized posterior drifting by {drift} at t={t}")
    state.posterior = posterior
    state.clock = t
    return posterior


def run(
    state: FilterState,
    ticks: Sequence[Tick],
    probe_times: Optional[Iterable[float]] = None,
) -> List[TrajectoryPoint]:
    """
    Filter a tick stream, optionally reporting the posterior at probe times.

    Without probes only the tick recursion runs. Probes after the clock are
    filled by ``propagate``, including those past the last tick; tick
    posteriors are the same either way.
    """
    ticks = list(ticks)
    for row, (before, after) in enumerate(zip(ticks, ticks[1:]), start=2):
        if not after.time > before.time:
            raise TickDataError(f"tick times must be strictly increasing ({after.time} after {before.time})", row=row)
    probes = [] if probe_times is None else sorted(set(float(p) for p in probe_times))

    trajectory: List[TrajectoryPoint] = []
    if ticks and ticks[0].time == state.last_tick.time:
        state.last_tick = ticks[0]
        trajectory.append(TrajectoryPoint(ticks[0].time, state.posterior, TICK))
        ticks = ticks[1:]
    elif not ticks:
        trajectory.append(TrajectoryPoint(state.clock, state.posterior, TICK))

    cursor = 0
    for tick in ticks:
        while cursor < len(probes) and probes[cursor] < tick.time:
            _emit_probe(state, probes[cursor], trajectory)
            cursor += 1
        trajectory.append(TrajectoryPoint(tick.time, tick_update(state, tick), TICK))
    for probe in probes[cursor:]:
        _emit_probe(state, probe, trajectory)
    return trajectory


def _emit_probe(state: FilterState, time: float, trajectory: List[TrajectoryPoint]) -> None:
    if time > state.clock:
        trajectory.append(TrajectoryPoint(time, propagate(state, time), PROBE))


class FilterService:
    """Service for filtering tick streams against one model and structure table."""

    def __init__(
        self,
        chain: VolatilityChain,
        model: MarketModel,
        policy: ObservationPolicy,
        table: StructureTable,
        rk4_step: Optional[float] = None,
        fallback: bool = True,
    ):
        model.check_chain(chain)
        self.chain = chain
        self.model = model
        self.policy = policy
        self.table = table
        self.rk4_step = rk4_step
        self.fallback = fallback
        self.last_warnings: List[str] = []

    def filter_ticks(
        self,
        ticks: Sequence[Tick],
        probe_every: Optional[float] = None,
        ticks_only: bool = False,
    ) -> List[TrajectoryPoint]:
        """
        Run a fresh filter over ``ticks``.

        Args:
            ticks: Observed ticks, the first one usually (0, x0)
            probe_every: Spacing of probe times between ticks
            ticks_only: Skip probes even when ``probe_every`` is set

        Returns:
            The posterior trajectory
        """
        state = init(self.chain, self.table, self.policy, rk4_step=self.rk4_step, fallback=self.fallback)
        probes = None
        if probe_every and not ticks_only and ticks:
            end = ticks[-1].time
            probes = probe_every * np.arange(1, math.floor(end / probe_every + 1e-9) + 1)
        trajectory = run(state, ticks, probes)
        logger.info(
            f"Filtered {len(ticks)} ticks into {len(trajectory)} posteriors with {len(state.warnings)} warnings"
        )
        self.last_warnings = list(state.warnings)
        return trajectory
