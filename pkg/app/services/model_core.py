"""Domain types for the hidden volatility chain and the price model.

The hidden state is a finite-state continuous-time Markov chain. Given a
path of the chain, the log price increment over an interval is Gaussian
with mean ``∫(r - v²/2)du`` and variance ``∫v² du``.
"""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional
import hashlib
import logging
import math

import numpy as np
from scipy.linalg import expm
from scipy.stats import norm

from ..core.config import settings
from ..core.exceptions import (
    InvalidModelError,
    InvalidPathError,
    InvalidStatsError,
    VolFloorError,
)

if TYPE_CHECKING:
    from .policies import ObservationPolicy

logger = logging.getLogger(__name__)


def _frozen_array(values, name: str, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise InvalidModelError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidModelError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class VolatilityChain:
    """Hidden chain: state values, intensity matrix and initial law."""
    states: np.ndarray
    intensity: np.ndarray
    initial_law: np.ndarray

    def __post_init__(self):
        states = _frozen_array(self.states, "states", 1)
        intensity = _frozen_array(self.intensity, "intensity", 2)
        initial_law = _frozen_array(self.initial_law, "initial_law", 1)
        size = states.shape[0]
        tol = settings.STOCHASTIC_TOL

        if size < 1:
            raise InvalidModelError("chain needs at least one state")
        if intensity.shape != (size, size):
            raise InvalidModelError(f"intensity must be {size}x{size}, got {intensity.shape}")
        if initial_law.shape != (size,):
            raise InvalidModelError(f"initial_law must have length {size}, got {initial_law.shape[0]}")

        off_diagonal = intensity[~np.eye(size, dtype=bool)]
        if np.any(off_diagonal < 0):
            raise InvalidModelError("off-diagonal intensities must be non-negative")
        for row, total in enumerate(intensity.sum(axis=1), start=1):
            if abs(total) > tol:
                raise InvalidModelError(f"intensity row {row} sums to {total!r}, expected 0")
        if np.any(initial_law < 0):
            raise InvalidModelError("initial_law entries must be non-negative")
        if abs(initial_law.sum() - 1.0) > tol:
            raise InvalidModelError(f"initial_law sums to {initial_law.sum()!r}, expected 1")

        object.__setattr__(self, "states", states)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "initial_law", initial_law)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        """Holding-time rates -λ(a_i, a_i)."""
        return -np.diag(self.intensity)

    def jump_probabilities(self) -> np.ndarray:
        """Embedded jump chain; rows of absorbing states are zero."""
        rates = self.exit_rates
        jumps = np.where(np.eye(self.size, dtype=bool), 0.0, self.intensity)
        with np.errstate(divide="ignore", invalid="ignore"):
            probs = np.where(rates[:, None] > 0, jumps / rates[:, None], 0.0)
        return probs


@dataclass(frozen=True)
class MarketModel:
    """Per-state drift and volatility of the log price, plus its start value."""
    drift: np.ndarray
    vol: np.ndarray
    x0: float = 0.0
    vol_floor: float = field(default_factory=lambda: settings.VOL_FLOOR)

    def __post_init__(self):
        drift = _frozen_array(self.drift, "drift", 1)
        vol = _frozen_array(self.vol, "vol", 1)
        if drift.shape != vol.shape:
            raise InvalidModelError(f"drift has {drift.shape[0]} entries but vol has {vol.shape[0]}")
        if not self.vol_floor > 0:
            raise InvalidModelError("vol_floor must be strictly positive")
        for index, value in enumerate(vol, start=1):
            if value < self.vol_floor:
                raise VolFloorError(f"vol {index} = {value!r} is below the floor {self.vol_floor!r}")
        if not math.isfinite(self.x0):
            raise InvalidModelError("x0 must be finite")

        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "vol", vol)
        object.__setattr__(self, "x0", float(self.x0))

    @property
    def size(self) -> int:
        return self.vol.shape[0]

    @property
    def mean_rate(self) -> np.ndarray:
        """Per-state drift of the log price, r_i - v_i²/2."""
        return self.drift - 0.5 * self.vol ** 2

    @property
    def variance_rate(self) -> np.ndarray:
        return self.vol ** 2

    def check_chain(self, chain: VolatilityChain) -> None:
        if self.size != chain.size:
            raise InvalidModelError(f"market model has {self.size} states but chain has {chain.size}")


@dataclass(frozen=True)
class PathSegmentStats:
    """Conditional mean, variance and survival weight over one segment."""
    m: float
    s2: float
    w: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.s2) and self.s2 > 0):
            raise InvalidStatsError(f"s2 must be positive and finite, got {self.s2!r}")
        if not (0 < self.w <= 1):
            raise InvalidStatsError(f"w must lie in (0, 1], got {self.w!r}")

    def compose(self, other: "PathSegmentStats") -> "PathSegmentStats":
        """Stats of the concatenation of two adjacent segments."""
        return PathSegmentStats(m=self.m + other.m, s2=self.s2 + other.s2, w=self.w * other.w)


@dataclass(frozen=True)
class Tick:
    """Observation time and log price."""
    time: float
    logprice: float


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant chain realization on [0, horizon]."""
    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        jump_times = np.asarray(self.jump_times, dtype=float)
        states = np.asarray(self.states, dtype=int)
        if states.shape[0] != jump_times.shape[0] + 1:
            raise InvalidPathError("a path needs exactly one more state than jumps")
        if jump_times.size and (np.any(np.diff(jump_times) <= 0) or jump_times[0] <= 0 or jump_times[-1] >= self.horizon):
            raise InvalidPathError("jump times must be strictly increasing inside (0, horizon)")
        if states.size > 1 and np.any(states[1:] == states[:-1]):
            raise InvalidPathError("consecutive path states must differ")
        jump_times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "jump_times", jump_times)
        object.__setattr__(self, "states", states)

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate(([0.0], self.jump_times, [self.horizon]))

    def state_at(self, times) -> np.ndarray:
        """State index at each time (right-continuous)."""
        index = np.searchsorted(self.jump_times, np.asarray(times, dtype=float), side="right")
        return self.states[index]

    def cumulative_integral(self, values: np.ndarray, times) -> np.ndarray:
        """``∫_0^t values[θ_u] du`` for each t in ``times``."""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0) or np.any(times > self.horizon):
            raise InvalidPathError(f"times must lie in [0, {self.horizon}]")
        bounds = self.boundaries
        rates = np.asarray(values, dtype=float)[self.states]
        at_bounds = np.concatenate(([0.0], np.cumsum(rates * np.diff(bounds))))
        index = np.clip(np.searchsorted(bounds, times, side="right") - 1, 0, self.states.shape[0] - 1)
        return at_bounds[index] + rates[index] * (times - bounds[index])

    def segments(self, start: float, end: float):
        """Yield (state, length) for every piece of the path inside [start, end]."""
        if start < 0 or end > self.horizon or end < start:
            raise InvalidPathError(f"[{start}, {end}] is not covered by a path on [0, {self.horizon}]")
        bounds = self.boundaries
        for index, state in enumerate(self.states):
            low = max(bounds[index], start)
            high = min(bounds[index + 1], end)
            if high > low:
                yield int(state), high - low


def transition_matrix(chain: VolatilityChain, t: float) -> np.ndarray:
    """P(t) = exp(tΛ), rows clamped and renormalized to the simplex."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if not np.all(np.isfinite(chain.intensity)):
        raise InvalidModelError("intensity matrix has non-finite entries")
    probs = expm(chain.intensity * t)
    if not np.all(np.isfinite(probs)):
        raise InvalidModelError(f"matrix exponential is not finite at t={t}")
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum(axis=1, keepdims=True)


def transition_ladder(chain: VolatilityChain, start: float, step: float, count: int) -> np.ndarray:
    """P(start + m·step) for m = 0..count-1, shape (count, M, M).

    Two matrix exponentials; the later rungs are repeated products with
    P(step).
    """
    if count < 1:
        return np.zeros((0, chain.size, chain.size))
    ladder = np.empty((count, chain.size, chain.size))
    ladder[0] = transition_matrix(chain, start)
    if count > 1:
        move = transition_matrix(chain, step)
        for m in range(1, count):
            rung = np.clip(ladder[m - 1] @ move, 0.0, None)
            ladder[m] = rung / rung.sum(axis=1, keepdims=True)
    return ladder


def gaussian_density(y, m, s2):
    """Normal density with mean ``m`` and variance ``s2``, broadcasting."""
    return norm.pdf(np.asarray(y, dtype=float), loc=m, scale=np.sqrt(s2))


def log_increment_density(stats: PathSegmentStats, y: float) -> float:
    """Density of the log increment given segment stats."""
    if not stats.s2 > 0:
        raise InvalidStatsError(f"s2 must be positive, got {stats.s2!r}")
    return float(gaussian_density(y, stats.m, stats.s2))


def segment_stats(
    path: ChainPath,
    model: MarketModel,
    policy: Optional["ObservationPolicy"] = None,
    start: float = 0.0,
    end: Optional[float] = None,
) -> PathSegmentStats:
    """Exact segment-wise sums of the conditional mean, variance and survival weight."""
    end = path.horizon if end is None else end
    if end <= start:
        raise InvalidPathError(f"empty interval [{start}, {end}]")
    survival = policy.survival_rates(model.size) if policy is not None else np.zeros(model.size)
    mean_rate = model.mean_rate
    variance_rate = model.variance_rate

    m = s2 = hazard = 0.0
    covered = 0.0
    for state, length in path.segments(start, end):
        m += mean_rate[state] * length
        s2 += variance_rate[state] * length
        hazard += survival[state] * length
        covered += length
    if not math.isclose(covered, end - start, rel_tol=1e-12, abs_tol=1e-12):
        raise InvalidPathError(f"path covers {covered} of [{start}, {end}]")
    return PathSegmentStats(m=m, s2=s2, w=math.exp(-hazard))


def model_fingerprint(chain: VolatilityChain, model: MarketModel, policy: "ObservationPolicy") -> str:
    """Hash of everything a structure table depends on."""
    digest = hashlib.sha256()
    for array in (chain.states, chain.intensity, chain.initial_law, model.drift, model.vol):
        digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
    digest.update(policy.fingerprint().encode("utf-8"))
    return digest.hexdigest()
