"""CSV files for ticks, filter trajectories and simulated ground truth."""
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd

from ..core.exceptions import TickDataError
from ..services.filter_engine import PROBE, TICK, Posterior, TrajectoryPoint
from ..services.model_core import ChainPath, Tick, VolatilityChain

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _read_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise TickDataError(f"{path} is empty, expected a header") from e
    except FileNotFoundError as e:
        raise TickDataError(f"{path} does not exist") from e


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    # float(), not pd.to_numeric, so that written values read back bit for bit
    raw = frame[column].fillna("").str.strip()
    values = np.empty(len(raw))
    for row, text in enumerate(raw, start=1):
        try:
            values[row - 1] = float(text)
        except ValueError:
            values[row - 1] = np.nan
        if not math.isfinite(values[row - 1]):
            raise TickDataError(f"{column} value {frame[column].iloc[row - 1]!r} is not a finite number", row=row)
    return values


def read_ticks(path: str) -> Tuple[List[Tick], bool]:
    """
    Read a tick file with header ``time,log_price`` or ``time,price``.

    Returns:
        The ticks and whether raw prices were converted to log prices

    Raises:
        TickDataError: On a bad header, non-numeric or non-finite values,
            non-positive prices or times that do not strictly increase
    """
    frame = _read_frame(path)
    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    if columns not in (["time", "log_price"], ["time", "price"]):
        raise TickDataError(f"expected header 'time,log_price' or 'time,price', got {','.join(columns)!r}")
    times = _numeric_column(frame, "time")
    from_price = columns[1] == "price"
    values = _numeric_column(frame, columns[1])
    if from_price:
        bad = np.flatnonzero(values <= 0)
        if bad.size:
            raise TickDataError(f"price {values[bad[0]]!r} must be positive", row=int(bad[0]) + 1)
        values = np.log(values)
        logger.warning(f"{path} holds prices; converted to log prices")
    if times.size and times[0] < 0:
        raise TickDataError(f"tick time {times[0]!r} is negative", row=1)
    steps = np.flatnonzero(np.diff(times) <= 0)
    if steps.size:
        row = int(steps[0]) + 2
        raise TickDataError(f"tick times must be strictly increasing ({times[row - 1]!r} after {times[row - 2]!r})", row=row)
    return [Tick(time=float(t), logprice=float(x)) for t, x in zip(times, values)], from_price


def write_ticks(path: str, ticks: Sequence[Tick]) -> None:
    frame = pd.DataFrame(
        {"time": [tick.time for tick in ticks], "log_price": [tick.logprice for tick in ticks]},
        columns=["time", "log_price"],
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def trajectory_frame(trajectory: Sequence[TrajectoryPoint], size: int) -> pd.DataFrame:
    columns = ["time", "kind"] + [f"pi_{i}" for i in range(1, size + 1)]
    rows = [[point.time, point.kind, *point.posterior.pi.tolist()] for point in trajectory]
    return pd.DataFrame(rows, columns=columns)


def write_trajectory(path: str, trajectory: Sequence[TrajectoryPoint], size: int) -> None:
    """Write ``time,kind,pi_1..pi_M`` rows with round-trip float precision."""
    trajectory_frame(trajectory, size).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(trajectory)} posteriors to {path}")


def read_trajectory(path: str) -> List[TrajectoryPoint]:
    frame = _read_frame(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    columns = list(frame.columns)
    size = len(columns) - 2
    if size < 1 or columns != ["time", "kind"] + [f"pi_{i}" for i in range(1, size + 1)]:
        raise TickDataError(f"expected header 'time,kind,pi_1,...', got {','.join(columns)!r}")
    times = _numeric_column(frame, "time")
    probabilities = np.column_stack([_numeric_column(frame, f"pi_{i}") for i in range(1, size + 1)])
    trajectory = []
    for row, (time, kind, pi) in enumerate(zip(times, frame["kind"].str.strip(), probabilities), start=1):
        if kind not in (TICK, PROBE):
            raise TickDataError(f"unknown entry kind {kind!r}", row=row)
        trajectory.append(TrajectoryPoint(float(time), Posterior(pi), kind))
    return trajectory


def write_ground_truth(
    path: str,
    ticks: Sequence[Tick],
    states: Sequence[int],
    chain: VolatilityChain,
    chain_path: Optional[ChainPath] = None,
) -> None:
    """
    Hidden state at every tick time, plus one ``jump`` row per chain jump.

    States are 0-based indices; ``volatility`` is the state value.
    """
    times = [tick.time for tick in ticks]
    kinds = ["tick"] * len(times)
    states = [int(s) for s in states]
    if chain_path is not None:
        times += chain_path.jump_times.tolist()
        kinds += ["jump"] * len(chain_path.jump_times)
        states += [int(s) for s in chain_path.states[1:]]
    frame = pd.DataFrame({"time": times, "kind": kinds, "state": np.asarray(states, dtype=int)})
    frame["volatility"] = chain.states[frame["state"].to_numpy()]
    # Stable sort keeps a tick ahead of a jump at the same time.
    frame = frame.sort_values("time", kind="mergesort").reset_index(drop=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_ground_truth(path: str) -> np.ndarray:
    """True state indices at the tick rows, in file order."""
    frame = _read_frame(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    if "state" not in frame.columns:
        raise TickDataError(f"{path} has no 'state' column")
    if "kind" in frame.columns:
        frame = frame[frame["kind"].str.strip() == "tick"].reset_index(drop=True)
    return _numeric_column(frame, "state").astype(int)
