import os
import sys
import logging
from typing import Any, Dict, List

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from tqdm import tqdm

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))

from app.core.config import settings
from app.core.seeding import derive_seed
from app.io.config_file import RunSetup, load_config
from app.services.filter_engine import TICK, FilterService
from app.services.model_core import transition_matrix
from app.services.simulator import simulate
from app.services.structure_tables import build_table
from app.services.validation import tracking_power

logger = logging.getLogger('filter_evaluation')

CONFIGS = [
    os.path.join("data", "examples", "two_state_cox.conf"),
    os.path.join("data", "examples", "three_state_poisson.conf"),
]
REPLICATIONS = 50
EVALUATION_STREAM = 100

OUTPUT_DIR = os.path.join("data", "evaluation", "results")
os.makedirs(OUTPUT_DIR, exist_ok=True)


def prior_power(setup: RunSetup, times: np.ndarray, true_states: np.ndarray) -> float:
    """
    Mean mass on the true state of the unconditioned law P(t)ᵀπ0

    Args:
        setup: The run setup
        times: Tick times
        true_states: True state index at every tick

    Returns:
        float: Tracking power of a filter that ignores the data
    """
    prior = setup.chain.initial_law
    masses = [(transition_matrix(setup.chain, t).T @ prior)[s] for t, s in zip(times, true_states)]
    return float(np.mean(masses)) if masses else float("nan")


def evaluate_config(path: str) -> Dict[str, Any]:
    """
    Replicate simulate-then-filter runs for one configuration

    Args:
        path: Path of the run configuration

    Returns:
        dict: Summary statistics and per-replication details
    """
    setup = load_config(path)
    name = os.path.splitext(os.path.basename(path))[0]
    logger.info(f"Evaluating {name}: {setup.chain.size} states, policy {setup.policy!r}")

    table = build_table(setup.chain, setup.model, setup.policy, setup.grid, threads=setup.threads, progress=True)
    service = FilterService(setup.chain, setup.model, setup.policy, table, rk4_step=setup.config.filter.rk4_step)

    rows: List[Dict[str, Any]] = []
    for replication in tqdm(range(REPLICATIONS), desc=f"Replicating {name}"):
        seed = derive_seed(setup.seed, EVALUATION_STREAM, replication)
        result = simulate(setup.chain, setup.model, setup.policy, setup.config.simulate.horizon, seed)
        trajectory = service.filter_ticks(result.ticks, ticks_only=True)
        times = np.array([point.time for point in trajectory if point.kind == TICK])
        rows.append({
            "replication": replication,
            "seed": seed,
            "ticks": len(result.ticks),
            "jumps": len(result.path.jump_times),
            "tracking_power": tracking_power(trajectory, result.true_states_at_ticks),
            "prior_power": prior_power(setup, times, result.true_states_at_ticks),
            "warnings": len(service.last_warnings),
        })

    details = pd.DataFrame(rows)
    details.to_csv(os.path.join(OUTPUT_DIR, f"replications_{name}.csv"), index=False)
    plot_tracking_power(details, name)

    return {
        "config": name,
        "policy": setup.policy.kind,
        "states": setup.chain.size,
        "replications": REPLICATIONS,
        "mean_tracking_power": details["tracking_power"].mean(),
        "std_tracking_power": details["tracking_power"].std(),
        "mean_prior_power": details["prior_power"].mean(),
        "mean_ticks": details["ticks"].mean(),
        "total_warnings": int(details["warnings"].sum()),
    }


def plot_tracking_power(details: pd.DataFrame, name: str) -> None:
    """
    Histogram of tracking power against the data-free baseline

    Args:
        details: Per-replication results
        name: Configuration name for the title
    """
    plt.figure(figsize=(8, 6))
    bins = np.linspace(0, 1, 21)
    plt.hist(details["tracking_power"], bins=bins, alpha=0.7, label="Filter", color="blue")
    plt.hist(details["prior_power"], bins=bins, alpha=0.7, label="Prior only", color="gray")
    plt.xlabel("Mean posterior mass on the true state")
    plt.ylabel("Replications")
    plt.title(f"Tracking power - {name}")
    plt.legend()

    plt.tight_layout()
    plt.savefig(os.path.join(OUTPUT_DIR, f"tracking_power_{name}.png"))
    plt.close()


def main() -> None:
    """Main function to run the evaluation process"""
    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)
    logger.info(f"Starting evaluation with {REPLICATIONS} replications per config")

    summary_df = pd.DataFrame([evaluate_config(path) for path in CONFIGS])
    summary_df.to_csv(os.path.join(OUTPUT_DIR, "summary_results.csv"), index=False)

    logger.info(f"Evaluation complete! Results saved in: {OUTPUT_DIR}")
    logger.info("\n" + summary_df.to_string())


if __name__ == "__main__":
    main()
