from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np

from .filter_engine import TICK, TrajectoryPoint, posterior_mean
from .model_core import VolatilityChain

logger = logging.getLogger(__name__)


def total_variation(p, q) -> float:
    """½ Σ |p_i - q_i|."""
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


@dataclass(frozen=True)
class ValidationReport:
    """Filter-versus-oracle agreement over matching trajectory entries."""
    count: int
    mean_tv: float
    max_tv: float
    tracking_power: Optional[float] = None
    mean_volatility_error: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "points": self.count,
            "mean_tv": self.mean_tv,
            "max_tv": self.max_tv,
            "tracking_power": self.tracking_power,
            "mean_volatility_error": self.mean_volatility_error,
        }


def compare_trajectories(
    filtered: Sequence[TrajectoryPoint],
    reference: Sequence[TrajectoryPoint],
    kind: Optional[str] = TICK,
) -> List[float]:
    """TV distance between entries of the same time and kind."""
    reference_by_key = {(round(point.time, 12), point.kind): point for point in reference}
    distances = []
    for point in filtered:
        if kind is not None and point.kind != kind:
            continue
        match = reference_by_key.get((round(point.time, 12), point.kind))
        if match is not None:
            distances.append(total_variation(point.posterior.pi, match.posterior.pi))
    return distances


def tracking_power(trajectory: Sequence[TrajectoryPoint], true_states: Sequence[int]) -> float:
    """Mean posterior mass on the true state over tick entries, in order."""
    tick_points = [point for point in trajectory if point.kind == TICK]
    if len(tick_points) != len(true_states):
        raise ValueError(f"{len(tick_points)} tick posteriors but {len(true_states)} true states")
    if not tick_points:
        return float("nan")
    return float(np.mean([point.posterior.pi[state] for point, state in zip(tick_points, true_states)]))


def validation_report(
    filtered: Sequence[TrajectoryPoint],
    reference: Sequence[TrajectoryPoint],
    chain: Optional[VolatilityChain] = None,
    true_states: Optional[Sequence[int]] = None,
) -> ValidationReport:
    distances = compare_trajectories(filtered, reference)
    power = tracking_power(filtered, true_states) if true_states is not None else None
    vol_error = None
    if chain is not None and true_states is not None:
        ticks = [point for point in filtered if point.kind == TICK]
        vol_error = float(np.mean([
            abs(posterior_mean(point.posterior, chain) - chain.states[state])
            for point, state in zip(ticks, true_states)
        ])) if ticks else None
    report = ValidationReport(
        count=len(distances),
        mean_tv=float(np.mean(distances)) if distances else float("nan"),
        max_tv=float(np.max(distances)) if distances else float("nan"),
        tracking_power=power,
        mean_volatility_error=vol_error,
    )
    logger.info(f"Validation over {report.count} ticks: mean TV {report.mean_tv:.4g}, max TV {report.max_tv:.4g}")
    return report
