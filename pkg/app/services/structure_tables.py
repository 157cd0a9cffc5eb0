"""Off-line Monte-Carlo tables of the structure functions.

For a start state j and an end state i the table holds, on a uniform grid
of gap lengths t and log increments z,

    q_ji(t, z) = E[1{θ_t = a_i} · w · ρ_{0,t}(z) | θ_0 = a_j]
    q̄_ji(t)    = E[1{θ_t = a_i} · w | θ_0 = a_j]

with w = exp(-∫_0^t n(θ_u)du) for Cox arrivals and w = 1 otherwise. The
products with p_ji are stored rather than the conditional expectations
r = q/p so that rare end states never divide by zero.

Estimation conditions on whether the chain has jumped by t: the no-jump
term is known in closed form and only paths with a jump are averaged.
Conditional means are combined with the exact p_ji(t).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, partial
from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.stats import norm
from tqdm import tqdm

from ..core.config import settings
from ..core.exceptions import (
    ConfigError,
    DegenerateDenominatorError,
    HorizonExceededError,
    PolicyError,
    TableTooLargeError,
)
from ..core.seeding import TABLE_STREAM, derive_rng
from .model_core import (
    MarketModel,
    VolatilityChain,
    gaussian_density,
    model_fingerprint,
    transition_matrix,
)
from .policies import ObservationPolicy
from .simulator import simulate_segments

logger = logging.getLogger(__name__)

# Jumped-path ratios whose corner values spread wider than this factor are
# interpolated directly.
RATIO_SPREAD = 8.0
_TINY = 1e-280


@dataclass(frozen=True)
class GridSpec:
    t_max: float
    n_t: int
    z_min: float
    z_max: float
    n_z: int
    n_paths: int
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ConfigError(f"grid t_max must be positive, got {self.t_max}")
        if self.n_t < 2:
            raise ConfigError(f"grid n_t must be at least 2, got {self.n_t}")
        if not (math.isfinite(self.z_min) and math.isfinite(self.z_max) and self.z_min < self.z_max):
            raise ConfigError(f"grid needs z_min < z_max, got [{self.z_min}, {self.z_max}]")
        if self.n_z < 2:
            raise ConfigError(f"grid n_z must be at least 2, got {self.n_z}")
        if self.n_paths < 1:
            raise ConfigError(f"grid n_paths must be at least 1, got {self.n_paths}")

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_t)

    @property
    def z_grid(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z)

    @property
    def t_step(self) -> float:
        return self.t_max / (self.n_t - 1)

    def cells(self, size: int) -> int:
        return self.n_t * self.n_z * size * size


def default_z_range(model: MarketModel, t_max: float, sigmas: Optional[float] = None) -> Tuple[float, float]:
    """Worst-case mean at t_max widened by ``sigmas`` worst-case standard deviations."""
    sigmas = settings.Z_RANGE_SIGMAS if sigmas is None else sigmas
    spread = sigmas * float(model.vol.max()) * math.sqrt(t_max)
    low = min(float(model.mean_rate.min()) * t_max, 0.0)
    high = max(float(model.mean_rate.max()) * t_max, 0.0)
    return low - spread, high + spread


@dataclass(frozen=True)
class StructureTable:
    """Estimated q, q̄ and exact p on the grid, with interpolation between nodes.

    Off the nodes a query splits q into the no-jump term, evaluated in closed
    form at the queried point, and the jumped-path term. The jumped-path
    mean is interpolated as a ratio to a reference likelihood whose rates
    average the start and end states, or bilinearly where that ratio is
    unusable. Grid nodes return the stored values.
    """
    q: np.ndarray
    qbar: np.ndarray
    p: np.ndarray
    q_stderr: np.ndarray
    qbar_stderr: np.ndarray
    grid: GridSpec
    chain: VolatilityChain
    model: MarketModel
    policy: ObservationPolicy

    @property
    def policy_kind(self) -> str:
        return self.policy.kind

    @property
    def size(self) -> int:
        return self.chain.size

    @cached_property
    def model_hash(self) -> str:
        return model_fingerprint(self.chain, self.model, self.policy)

    @cached_property
    def t_grid(self) -> np.ndarray:
        return self.grid.t_grid

    @cached_property
    def z_grid(self) -> np.ndarray:
        return self.grid.z_grid

    @cached_property
    def survival(self) -> np.ndarray:
        return self.policy.survival_rates(self.size)

    @cached_property
    def stay_rates(self) -> np.ndarray:
        """λ_jj: P(no jump by t) = exp(λ_jj t)."""
        return np.diag(self.chain.intensity).copy()

    def _pair(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return 0.5 * (values[:, None] + values[None, :])

    def frozen_likelihood(self, t, z) -> np.ndarray:
        """g_j(t, z): survival-weighted density of a path that never leaves j, shape (M, ...)."""
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = (self.size,) + (1,) * max(t.ndim, z.ndim)
        mean = self.model.mean_rate.reshape(shape) * t
        var = self.model.variance_rate.reshape(shape) * t
        with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
            density = gaussian_density(z, mean, var)
        return np.exp(-self.survival.reshape(shape) * t) * density

    def reference(self, t, z, wide: bool = False) -> np.ndarray:
        """h_ji(t, z): frozen likelihood with rates averaged over j and i, shape (M, M, ...).

        On the diagonal it is g_j itself. ``wide`` takes the largest variance
        rate of the chain instead, which decays no faster in z than any path.
        """
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = (self.size, self.size) + (1,) * max(t.ndim, z.ndim)
        mean = self._pair(self.model.mean_rate).reshape(shape) * t
        if wide:
            variance = np.full((self.size, self.size), float(self.model.variance_rate.max()))
        else:
            variance = self._pair(self.model.variance_rate)
        var = variance.reshape(shape) * t
        with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
            density = gaussian_density(z, mean, var)
        return np.exp(-self._pair(self.survival).reshape(shape) * t) * density

    @cached_property
    def _jump_mass(self) -> np.ndarray:
        """p_ji(t) - δ_ji exp(λ_jj t) on the t grid, shape (M, M, n_t)."""
        diagonal = np.arange(self.size)
        stay = np.zeros_like(self.p)
        stay[diagonal, diagonal, :] = np.exp(np.outer(self.stay_rates, self.t_grid))
        return np.clip(self.p - stay, 0.0, None)

    @cached_property
    def _jumped(self) -> Tuple[np.ndarray, ...]:
        # Jumped-path means J, then ratio and validity to the pair reference and to the wide one.
        diagonal = np.arange(self.size)
        t, z = self.t_grid[1:], self.z_grid
        no_jump = np.zeros_like(self.q)
        frozen = self.frozen_likelihood(t[:, None], z[None, :])
        no_jump[diagonal, diagonal, 1:, :] = np.exp(np.outer(self.stay_rates, t))[:, :, None] * frozen
        mass = self._jump_mass[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            jumped = np.clip(np.where(mass > 0, (self.q - no_jump) / mass, 0.0), 0.0, None)
        # The first node is a point mass at z = 0.
        jumped[:, :, 0, :] = 0.0

        parts = [jumped]
        for wide in (False, True):
            reference = self.reference(t[:, None], z[None, :], wide=wide)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ratio = jumped[:, :, 1:, :] / reference
            valid = (reference > _TINY) & np.isfinite(ratio) & (mass[:, :, 1:] > 0)
            ratio = np.where(valid, ratio, 0.0)
            parts.append(np.concatenate((ratio[:, :, :1], ratio), axis=2))
            parts.append(np.concatenate((valid[:, :, :1], valid), axis=2))
        return tuple(parts)

    @cached_property
    def _jumped_bar(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        diagonal = np.arange(self.size)
        no_jump = np.zeros_like(self.qbar)
        no_jump[diagonal, diagonal, :] = np.exp(np.outer(self.stay_rates - self.survival, self.t_grid))
        mass = self._jump_mass
        with np.errstate(divide="ignore", invalid="ignore"):
            jumped = np.clip(np.where(mass > 0, (self.qbar - no_jump) / mass, 0.0), 0.0, None)
        # Survival of a path that jumps right away tends to 1.
        jumped[:, :, 0] = 1.0

        reference = np.exp(-self._pair(self.survival)[:, :, None] * self.t_grid[None, None, :])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratio = jumped / reference
        valid = (reference > _TINY) & np.isfinite(ratio) & (mass > 0)
        ratio = np.where(valid, ratio, 0.0)
        ratio[:, :, 0] = ratio[:, :, 1]
        valid[:, :, 0] = valid[:, :, 1]
        return jumped, ratio, valid

    def _check_horizon(self, dt) -> None:
        if np.any(np.asarray(dt) >= self.grid.t_max):
            raise HorizonExceededError(
                f"gap {np.max(dt)} is not inside the table horizon {self.grid.t_max}; rebuild with a larger t_max"
            )

    def _locate_t(self, dt: float) -> Tuple[int, float]:
        """Cell and weight of a gap 0 < dt < t_max; dt ≥ t_max is outside the horizon."""
        if not dt > 0:
            raise ValueError(f"gap must be positive, got {dt}")
        self._check_horizon(dt)
        k = min(int(dt / self.grid.t_step), self.grid.n_t - 2)
        return k, (dt - self.t_grid[k]) / self.grid.t_step

    def _locate_z(self, dz: float) -> Optional[Tuple[int, float]]:
        if not (self.grid.z_min <= dz <= self.grid.z_max):
            return None
        step = (self.grid.z_max - self.grid.z_min) / (self.grid.n_z - 1)
        l = min(int((dz - self.grid.z_min) / step), self.grid.n_z - 2)
        return l, (dz - self.z_grid[l]) / step

    def q_matrix(self, dt: float, dz: float) -> np.ndarray:
        """All q_ji(dt, dz) as an (M, M) matrix indexed [j, i]."""
        k, a = self._locate_t(dt)
        located = self._locate_z(dz)
        if located is None:
            return np.zeros((self.size, self.size))
        l, b = located
        weights = np.array([[(1 - a) * (1 - b), (1 - a) * b], [a * (1 - b), a * b]])

        jumped, ratio, valid, wide_ratio, wide_valid = self._jumped
        cell = (slice(None), slice(None), slice(k, k + 2), slice(l, l + 2))
        by_pair, pair_holds = _ratio_estimate(ratio[cell], valid[cell], weights, self.reference(dt, dz))
        by_wide, wide_holds = _ratio_estimate(wide_ratio[cell], wide_valid[cell], weights, self.reference(dt, dz, wide=True))
        direct = np.einsum("jitz,tz->ji", jumped[cell], weights)

        stay = np.exp(self.stay_rates * dt)
        mass = np.clip(transition_matrix(self.chain, dt) - np.diag(stay), 0.0, None)
        q = mass * np.where(pair_holds, by_pair, np.where(wide_holds, by_wide, direct))
        q[np.diag_indices(self.size)] += stay * self.frozen_likelihood(dt, dz)
        return np.clip(q, 0.0, None)

    def qbar_matrices(self, gaps, transitions: Optional[np.ndarray] = None) -> np.ndarray:
        """q̄(t) for every t in ``gaps`` (0 ≤ t < t_max), shape (G, M, M) indexed [g, j, i].

        ``transitions`` may carry the matching stack of P(t).
        """
        gaps = np.atleast_1d(np.asarray(gaps, dtype=float))
        if np.any(gaps < 0):
            raise ValueError(f"gaps must be non-negative, got {gaps.min()}")
        self._check_horizon(gaps)
        k = np.minimum((gaps / self.grid.t_step).astype(int), self.grid.n_t - 2)
        a = ((gaps - self.t_grid[k]) / self.grid.t_step)[:, None, None]

        jumped, ratio, valid = (np.moveaxis(array, 2, 0) for array in self._jumped_bar)
        reference = np.exp(-self._pair(self.survival)[None, :, :] * gaps[:, None, None])
        by_ratio = reference * ((1 - a) * ratio[k] + a * ratio[k + 1])
        direct = (1 - a) * jumped[k] + a * jumped[k + 1]
        usable = valid[k] & valid[k + 1] & (reference > _TINY)

        if transitions is None:
            transitions = np.stack([transition_matrix(self.chain, t) for t in gaps])
        diagonal = np.arange(self.size)
        stay = np.exp(gaps[:, None] * self.stay_rates[None, :])
        mass = transitions.copy()
        mass[:, diagonal, diagonal] -= stay
        qbar = np.clip(mass, 0.0, None) * np.where(usable, by_ratio, direct)
        qbar[:, diagonal, diagonal] += stay * np.exp(-gaps[:, None] * self.survival[None, :])
        return np.clip(qbar, 0.0, None)

    def qbar_matrix(self, dt: float) -> np.ndarray:
        """All q̄_ji(dt) as an (M, M) matrix indexed [j, i]."""
        if not dt > 0:
            raise ValueError(f"gap must be positive, got {dt}")
        return self.qbar_matrices([dt])[0]

    @cached_property
    def _tail_parts(self) -> Tuple[np.ndarray, np.ndarray, float]:
        n = self.survival
        positive = n[n > 0]
        if positive.size == 0:
            raise PolicyError(f"tail mass needs arrival intensities; policy '{self.policy_kind}' has none")
        n_min = float(positive.min())
        rate_weighted = np.einsum("i,jit->jt", n, self.qbar)  # Σ_i n_i q̄_ji at the nodes
        pieces = _piece_integral(rate_weighted[:, :-1], rate_weighted[:, 1:], self.grid.t_step)
        # from_node[j, k] = ∫_{t_k}^{t_max}
        from_node = np.concatenate((np.cumsum(pieces[:, ::-1], axis=1)[:, ::-1], np.zeros((self.size, 1))), axis=1)
        tail = rate_weighted[:, -1] / n_min
        return rate_weighted, from_node + tail[:, None], n_min

    def tail_masses(self, pi: np.ndarray, gaps, qbars: Optional[np.ndarray] = None) -> np.ndarray:
        """``tail_mass`` at every t in ``gaps``; ``qbars`` may carry ``qbar_matrices(gaps)``."""
        gaps = np.atleast_1d(np.asarray(gaps, dtype=float))
        self._check_horizon(gaps)
        qbars = self.qbar_matrices(gaps) if qbars is None else qbars
        rate_weighted, from_node, _ = self._tail_parts
        k = np.minimum((gaps / self.grid.t_step).astype(int) + 1, self.grid.n_t - 1)
        at_t = qbars @ self.survival
        per_start = _piece_integral(at_t, rate_weighted[:, k].T, (self.t_grid[k] - gaps)[:, None]) + from_node[:, k].T
        return per_start @ np.asarray(pi, dtype=float)

    def tail_mass(self, pi: np.ndarray, t: float, qbar_at_t: Optional[np.ndarray] = None) -> float:
        """∫_t^∞ Σ_{i,j} n_i q̄_ji(s) π_j ds: piecewise-exponential integral to t_max plus an exponential tail.

        ``qbar_at_t`` may carry an already evaluated ``qbar_matrix(t)``.
        """
        t = max(float(t), 0.0)
        qbars = None if qbar_at_t is None else np.asarray(qbar_at_t)[None, :, :]
        mass = float(self.tail_masses(pi, [t], qbars)[0])
        if not mass > 0:
            raise DegenerateDenominatorError(f"tail mass {mass!r} at t={t} is not positive")
        return mass

    def tail_budget(self) -> np.ndarray:
        """Bound on the mass of q_ji(t, ·) outside [z_min, z_max], shape (M, M, n_t)."""
        t = self.t_grid[1:]
        sd = float(self.model.vol.max()) * np.sqrt(t)
        low = float(self.model.mean_rate.min()) * t
        high = float(self.model.mean_rate.max()) * t
        outside = norm.cdf((self.grid.z_min - low) / sd) + norm.sf((self.grid.z_max - high) / sd)
        outside = np.concatenate(([0.0], outside))
        return self.qbar * outside[None, None, :]


def _ratio_estimate(corners: np.ndarray, valid: np.ndarray, weights: np.ndarray, reference: np.ndarray):
    """Reference times the bilinear corner ratio, and where that estimate holds."""
    low = corners.min(axis=(2, 3))
    high = corners.max(axis=(2, 3))
    holds = valid.all(axis=(2, 3)) & (low > 0) & (high <= RATIO_SPREAD * low) & (reference > _TINY)
    return reference * np.einsum("jitz,tz->ji", corners, weights), holds


def _piece_integral(left: np.ndarray, right: np.ndarray, width) -> np.ndarray:
    """Integral over one grid piece, exact for exponentials; trapezoid where a node is zero."""
    trapezoid = 0.5 * width * (left + right)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(right / left)
        exponential = width * (right - left) / log_ratio
    usable = (left > 0) & (right > 0) & (np.abs(log_ratio) > 1e-8) & np.isfinite(exponential)
    return np.where(usable, exponential, trapezoid)


def eval_q(table: StructureTable, j: int, i: int, dt: float, dz: float) -> float:
    """Interpolated q_ji(dt, dz); zero outside the z range."""
    return float(table.q_matrix(dt, dz)[j, i])


def eval_qbar(table: StructureTable, j: int, i: int, dt: float) -> float:
    return float(table.qbar_matrix(dt)[j, i])


def tail_mass(table: StructureTable, pi, t: float) -> float:
    return table.tail_mass(np.asarray(pi, dtype=float), t)


class _Accumulator:
    """Sums over jumped paths, per end state and grid node."""

    def __init__(self, size: int, n_t: int, n_z: int):
        self.count = np.zeros((size, n_t))
        self.w = np.zeros((size, n_t))
        self.w2 = np.zeros((size, n_t))
        self.wr = np.zeros((size, n_t, n_z))
        self.wr2 = np.zeros((size, n_t, n_z))

    def add(self, other: "_Accumulator") -> None:
        self.count += other.count
        self.w += other.w
        self.w2 += other.w2
        self.wr += other.wr
        self.wr2 += other.wr2


def _simulate_batch(
    chain: VolatilityChain,
    model: MarketModel,
    survival: np.ndarray,
    grid: GridSpec,
    start: int,
    batch: int,
    paths: int,
) -> _Accumulator:
    size = chain.size
    t_grid, z_grid = grid.t_grid, grid.z_grid
    acc = _Accumulator(size, grid.n_t, grid.n_z)
    rng = derive_rng(grid.seed, TABLE_STREAM, start, batch)
    pieces = simulate_segments(chain, np.full(paths, start), grid.t_max, rng)

    jumped = pieces.jumped_by(t_grid)
    if not jumped.any():
        return acc
    mean = pieces.integrate(model.mean_rate, t_grid)
    var = pieces.integrate(model.variance_rate, t_grid)
    weight = np.exp(-pieces.integrate(survival, t_grid))
    end = pieces.state_at(t_grid)
    labels = np.arange(size)

    for k in range(1, grid.n_t):
        chosen = jumped[:, k]
        if not chosen.any():
            continue
        onehot = (end[chosen, k][:, None] == labels[None, :]).astype(float)
        w = weight[chosen, k]
        wr = w[:, None] * gaussian_density(z_grid[None, :], mean[chosen, k][:, None], var[chosen, k][:, None])
        acc.count[:, k] += onehot.sum(axis=0)
        acc.w[:, k] += onehot.T @ w
        acc.w2[:, k] += onehot.T @ (w * w)
        acc.wr[:, k, :] += onehot.T @ wr
        acc.wr2[:, k, :] += onehot.T @ (wr * wr)
    return acc


def _conditional_means(acc: _Accumulator, fallback_r: np.ndarray, fallback_w: np.ndarray):
    """Means and standard errors over jumped paths, pooled when an end state saw no path."""
    total = acc.count.sum(axis=0)  # (n_t,)
    with np.errstate(divide="ignore", invalid="ignore"):
        pooled_w = np.where(total > 0, acc.w.sum(axis=0) / total, fallback_w)
        pooled_wr = np.where(total[:, None] > 0, acc.wr.sum(axis=0) / total[:, None], fallback_r)
        count = acc.count
        mean_w = np.where(count > 0, acc.w / count, pooled_w[None, :])
        mean_wr = np.where(count[..., None] > 0, acc.wr / count[..., None], pooled_wr[None, :, :])
        var_w = np.where(count > 1, (acc.w2 / count - mean_w ** 2) * count / (count - 1), 0.0)
        var_wr = np.where(count[..., None] > 1, (acc.wr2 / count[..., None] - mean_wr ** 2) * count[..., None] / (count[..., None] - 1), 0.0)
        se_w = np.sqrt(np.clip(var_w, 0.0, None) / np.maximum(count, 1))
        se_wr = np.sqrt(np.clip(var_wr, 0.0, None) / np.maximum(count, 1)[..., None])
    # A single path gives no spread estimate; report its own size as the error.
    se_w = np.where(count == 1, mean_w, se_w)
    se_wr = np.where(count[..., None] == 1, mean_wr, se_wr)
    return mean_w, se_w, mean_wr, se_wr


def build_table(
    chain: VolatilityChain,
    model: MarketModel,
    policy: ObservationPolicy,
    grid: GridSpec,
    threads: int = 1,
    batch_size: Optional[int] = None,
    progress: bool = False,
) -> StructureTable:
    """Estimate q, q̄ on the grid by simulating ``grid.n_paths`` paths from every start state."""
    model.check_chain(chain)
    policy.check(chain.size)
    size = chain.size
    if grid.cells(size) > settings.TABLE_MAX_CELLS:
        raise TableTooLargeError(
            f"table needs {grid.cells(size)} cells, above the cap of {settings.TABLE_MAX_CELLS}"
        )
    batch_size = batch_size or settings.TABLE_BATCH_SIZE
    survival = policy.survival_rates(size)
    t_grid, z_grid = grid.t_grid, grid.z_grid

    p = np.stack([transition_matrix(chain, t) for t in t_grid], axis=-1)  # (M, M, n_t)
    q = np.zeros((size, size, grid.n_t, grid.n_z))
    qbar = np.zeros((size, size, grid.n_t))
    q_stderr = np.zeros_like(q)
    qbar_stderr = np.zeros_like(qbar)

    batches = [(b, min(batch_size, grid.n_paths - b * batch_size)) for b in range(math.ceil(grid.n_paths / batch_size))]
    logger.info(f"Building {policy.kind} table: {size} states, {grid.n_t}x{grid.n_z} grid, {grid.n_paths} paths per state")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for j in range(size):
            acc = _Accumulator(size, grid.n_t, grid.n_z)
            chunks = range(0, len(batches), max(1, threads))
            for first in tqdm(chunks, desc=f"start state {j + 1}/{size}", disable=not progress):
                jobs = batches[first:first + max(1, threads)]
                run_batch = partial(_simulate_batch, chain, model, survival, grid, j)
                results = pool.map(lambda job: run_batch(*job), jobs)
                for result in results:
                    acc.add(result)

            with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
                frozen = np.exp(-survival[j] * t_grid[1:, None]) * gaussian_density(
                    z_grid[None, :], model.mean_rate[j] * t_grid[1:, None], model.variance_rate[j] * t_grid[1:, None]
                )
            frozen_w = np.exp(-survival[j] * t_grid)
            frozen_r = np.concatenate((np.zeros((1, grid.n_z)), frozen), axis=0)
            mean_w, se_w, mean_wr, se_wr = _conditional_means(acc, frozen_r, frozen_w)

            stay = np.exp(chain.intensity[j, j] * t_grid)  # P(no jump by t)
            for i in range(size):
                no_jump = stay if i == j else np.zeros_like(stay)
                jump_mass = np.clip(p[j, i] - no_jump, 0.0, None)
                qbar[j, i] = no_jump * frozen_w + jump_mass * mean_w[i]
                qbar_stderr[j, i] = jump_mass * se_w[i]
                q[j, i, 1:] = no_jump[1:, None] * frozen + jump_mass[1:, None] * mean_wr[i, 1:]
                q_stderr[j, i, 1:] = jump_mass[1:, None] * se_wr[i, 1:]
            qbar[j, :, 0] = np.eye(size)[j]
            qbar_stderr[j, :, 0] = 0.0

    logger.info(f"Built {policy.kind} table with horizon {grid.t_max}")
    return StructureTable(
        q=q, qbar=qbar, p=p, q_stderr=q_stderr, qbar_stderr=qbar_stderr,
        grid=grid, chain=chain, model=model, policy=policy,
    )
