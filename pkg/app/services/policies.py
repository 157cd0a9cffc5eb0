from typing import Any, Dict, Optional, Type
import logging
from abc import ABC, abstractmethod

import numpy as np

from ..core.exceptions import InvalidModelError, PolicyError
from .model_core import ChainPath

logger = logging.getLogger(__name__)


class ObservationPolicy(ABC):
    """Abstract base class for the mechanisms that produce observation times."""

    kind: str = ""

    @abstractmethod
    def check(self, size: int) -> None:
        """
        Validate the policy against a chain with ``size`` states.

        Raises:
            InvalidModelError: If the parameters do not fit the chain
        """
        pass

    @abstractmethod
    def survival_rates(self, size: int) -> np.ndarray:
        """
        Rates n_i entering the survival weight exp(-∫n) of the structure functions.

        Zero for policies whose arrivals carry no information about the chain.
        """
        pass

    @abstractmethod
    def tick_rates(self, size: int) -> np.ndarray:
        """Per-state factor multiplying the tick likelihood of the end state."""
        pass

    @abstractmethod
    def sample_arrivals(self, path: ChainPath, rng: np.random.Generator) -> np.ndarray:
        """
        Draw observation times in (0, path.horizon].

        Args:
            path: The hidden chain realization
            rng: Random generator for the arrival stream

        Returns:
            Strictly increasing array of times
        """
        pass

    @abstractmethod
    def params(self) -> Dict[str, Any]:
        """Policy parameters keyed as in the ``policy`` config section."""
        pass

    # Mass Φ_k puts on the next arrival time.
    next_arrival_atom: float = 0.0

    # Between ticks the posterior obeys the forward Kolmogorov equation.
    kolmogorov_between_ticks: bool = True

    def fixed_gap(self) -> Optional[float]:
        return None

    def tick_likelihood(self, end_states: np.ndarray, hazard: np.ndarray, size: int) -> np.ndarray:
        """Arrival factor φ of the tick likelihood for particles ending in ``end_states``.

        ``hazard`` is ∫n(θ_u)du over the gap, computed with ``survival_rates``.
        """
        return np.ones_like(hazard)

    def fingerprint(self) -> str:
        items = ",".join(f"{key}={_format_param(value)}" for key, value in sorted(self.params().items()))
        return f"{self.kind}({items})"

    def __repr__(self) -> str:
        return self.fingerprint()


def _format_param(value: Any) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(repr(float(v)) for v in value) + "]"
    return repr(float(value))


class CoxPolicy(ObservationPolicy):
    """Doubly stochastic arrivals with state-dependent intensity n_i."""

    kind = "cox"
    kolmogorov_between_ticks = False

    def __init__(self, intensity):
        self.intensity = np.array(intensity, dtype=float)
        self.intensity.setflags(write=False)
        if self.intensity.ndim != 1 or self.intensity.size == 0:
            raise InvalidModelError("cox intensity must be a non-empty vector")
        if not np.all(np.isfinite(self.intensity)) or np.any(self.intensity <= 0):
            raise InvalidModelError("cox intensities must be finite and strictly positive")

    def check(self, size: int) -> None:
        if self.intensity.shape[0] != size:
            raise InvalidModelError(f"cox policy has {self.intensity.shape[0]} intensities but chain has {size} states")

    def survival_rates(self, size: int) -> np.ndarray:
        self.check(size)
        return self.intensity

    def tick_rates(self, size: int) -> np.ndarray:
        self.check(size)
        return self.intensity

    def tick_likelihood(self, end_states: np.ndarray, hazard: np.ndarray, size: int) -> np.ndarray:
        return self.tick_rates(size)[end_states] * np.exp(-hazard)

    def sample_arrivals(self, path: ChainPath, rng: np.random.Generator) -> np.ndarray:
        # Thinning of a homogeneous process with the largest intensity.
        bound = float(self.intensity.max())
        count = rng.poisson(bound * path.horizon)
        candidates = np.sort(rng.uniform(0.0, path.horizon, size=count))
        accept = rng.uniform(size=count) * bound < self.intensity[path.state_at(candidates)]
        return _strictly_increasing(candidates[accept])

    def params(self) -> Dict[str, Any]:
        return {"intensity": self.intensity.tolist()}


class PoissonPolicy(ObservationPolicy):
    """Arrivals independent of the chain with constant rate λ."""

    kind = "poisson"

    def __init__(self, rate: float):
        self.rate = float(rate)
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise InvalidModelError("poisson rate must be finite and strictly positive")

    def check(self, size: int) -> None:
        return None

    def survival_rates(self, size: int) -> np.ndarray:
        return np.zeros(size)

    def tick_rates(self, size: int) -> np.ndarray:
        return np.ones(size)

    def sample_arrivals(self, path: ChainPath, rng: np.random.Generator) -> np.ndarray:
        times = []
        now = rng.exponential(1.0 / self.rate)
        while now <= path.horizon:
            times.append(now)
            now += rng.exponential(1.0 / self.rate)
        return _strictly_increasing(np.array(times, dtype=float))

    def params(self) -> Dict[str, Any]:
        return {"rate": self.rate}


class FixedGridPolicy(ObservationPolicy):
    """Observations at the deterministic times kh."""

    kind = "fixed_grid"
    next_arrival_atom = 1.0

    def __init__(self, step: float):
        self.step = float(step)
        if not (np.isfinite(self.step) and self.step > 0):
            raise InvalidModelError("fixed_grid step must be finite and strictly positive")

    def check(self, size: int) -> None:
        return None

    def fixed_gap(self) -> Optional[float]:
        return self.step

    def survival_rates(self, size: int) -> np.ndarray:
        return np.zeros(size)

    def tick_rates(self, size: int) -> np.ndarray:
        return np.ones(size)

    def sample_arrivals(self, path: ChainPath, rng: np.random.Generator) -> np.ndarray:
        count = int(np.floor(path.horizon / self.step + 1e-9))
        return np.arange(1, count + 1, dtype=float) * self.step

    def params(self) -> Dict[str, Any]:
        return {"step": self.step}


def _strictly_increasing(times: np.ndarray) -> np.ndarray:
    # Coincident draws have probability zero but are dropped if they occur.
    if times.size < 2:
        return times
    keep = np.concatenate(([True], np.diff(times) > 0))
    return times[keep]


class PolicyFactory:
    """Factory for creating observation policy instances."""

    _policies: Dict[str, Type[ObservationPolicy]] = {}

    @classmethod
    def register_policy(cls, kind: str, policy_class: Type[ObservationPolicy]):
        """
        Register a policy with the factory.

        Args:
            kind: The policy tag used in configs and table files
            policy_class: The policy class
        """
        cls._policies[kind] = policy_class

    @classmethod
    def get_policy(cls, kind: str, **params) -> ObservationPolicy:
        """
        Get a policy instance.

        Args:
            kind: The policy tag
            **params: Arguments passed to the policy constructor

        Returns:
            An instance of the requested policy

        Raises:
            PolicyError: If the requested policy is not registered
        """
        if kind not in cls._policies:
            available = ", ".join(sorted(cls._policies))
            raise PolicyError(f"Policy '{kind}' not found. Available policies: {available}")
        try:
            return cls._policies[kind](**params)
        except TypeError as e:
            raise PolicyError(f"Invalid parameters for policy '{kind}': {e}") from e

    @classmethod
    def available(cls):
        return sorted(cls._policies)


PolicyFactory.register_policy(CoxPolicy.kind, CoxPolicy)
PolicyFactory.register_policy(PoissonPolicy.kind, PoissonPolicy)
PolicyFactory.register_policy(FixedGridPolicy.kind, FixedGridPolicy)
