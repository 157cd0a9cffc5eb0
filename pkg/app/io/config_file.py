"""Flat ``section.key = value`` run configuration files.

Lists are comma separated; the intensity matrix separates rows with ``;``.
Blank lines and lines starting with ``#`` are ignored.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging

from pydantic import ValidationError

from ..core.exceptions import ConfigError, InvalidModelError, PolicyError
from ..schemas.run_config import RunConfig
from ..services.model_core import MarketModel, VolatilityChain
from ..services.policies import ObservationPolicy, PolicyFactory
from ..services.structure_tables import GridSpec, default_z_range

logger = logging.getLogger(__name__)

SECTION_ORDER = ("model", "policy", "grid", "filter", "simulate", "oracle", "paths", "run")
_LIST_KEYS = {"model.states", "model.prior", "model.drift", "model.vol", "policy.intensity"}
_MATRIX_KEYS = {"model.intensity"}


@dataclass(frozen=True)
class RunSetup:
    """Validated configuration together with the domain objects it describes."""
    config: RunConfig
    chain: VolatilityChain
    model: MarketModel
    policy: ObservationPolicy
    grid: GridSpec

    @property
    def seed(self) -> int:
        return self.config.run.seed

    @property
    def threads(self) -> int:
        return self.config.run.threads


def _split_list(raw: str):
    return [item.strip() for item in raw.split(",") if item.strip()]


def _read_pairs(text: str) -> Tuple[Dict[str, Dict[str, object]], Dict[str, int]]:
    sections: Dict[str, Dict[str, object]] = {}
    lines: Dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {line!r}", line=number)
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"key {key!r} has no section", line=number)
        section, name = key.split(".", 1)
        if section not in SECTION_ORDER:
            raise ConfigError(f"unknown section {section!r} in key {key!r}", line=number)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", line=number)
        if key in _MATRIX_KEYS:
            value: object = [_split_list(row) for row in raw.split(";") if row.strip()]
        elif key in _LIST_KEYS:
            value = _split_list(raw)
        else:
            value = raw
        sections.setdefault(section, {})[name] = value
        lines[key] = number
    return sections, lines


def _validate(sections, lines) -> RunConfig:
    try:
        return RunConfig.model_validate(sections)
    except ValidationError as e:
        messages = []
        first_line = None
        for error in e.errors():
            loc = [str(part) for part in error["loc"] if not isinstance(part, int)]
            key = ".".join(loc[:2])
            line = lines.get(key)
            if line is None and loc:
                # Model-level validators report the section only.
                line = min((n for k, n in lines.items() if k.startswith(loc[0] + ".")), default=None)
            first_line = line if first_line is None else first_line
            if error["type"] == "missing":
                messages.append(f"missing mandatory key {key}")
            elif error["type"] == "extra_forbidden":
                messages.append(f"line {line}: unknown key {key}")
            else:
                prefix = f"line {line}: " if line is not None else ""
                messages.append(f"{prefix}{key}: {error['msg']}")
        raise ConfigError("; ".join(messages)) from e


def _build(config: RunConfig, lines: Dict[str, int]) -> RunSetup:
    errors = config.dimension_errors()
    if errors:
        key, message = errors[0]
        raise ConfigError(message, line=lines.get(key))

    section = config.model
    try:
        chain = VolatilityChain(states=section.states, intensity=section.intensity, initial_law=section.prior)
    except InvalidModelError as e:
        key = "model.prior" if "initial_law" in str(e) else "model.intensity"
        raise ConfigError(str(e), line=lines.get(key)) from e
    try:
        extra = {} if section.vol_floor is None else {"vol_floor": section.vol_floor}
        model = MarketModel(drift=section.drift, vol=section.vol, x0=section.x0, **extra)
    except InvalidModelError as e:
        raise ConfigError(str(e), line=lines.get("model.vol")) from e
    try:
        policy = PolicyFactory.get_policy(config.policy.kind, **config.policy.params())
        policy.check(chain.size)
    except (PolicyError, InvalidModelError) as e:
        key = next(iter(config.policy.params()))
        raise ConfigError(str(e), line=lines.get(f"policy.{key}")) from e

    grid = config.grid
    z_min, z_max = default_z_range(model, grid.t_max)
    grid_spec = GridSpec(
        t_max=grid.t_max,
        n_t=grid.n_t,
        z_min=z_min if grid.z_min is None else grid.z_min,
        z_max=z_max if grid.z_max is None else grid.z_max,
        n_z=grid.n_z,
        n_paths=grid.n_paths,
        seed=config.run.seed if grid.seed is None else grid.seed,
    )
    if config.run.threads < 1:
        raise ConfigError(f"run.threads must be at least 1, got {config.run.threads}", line=lines.get("run.threads"))
    if not config.filter.rk4_step > 0:
        raise ConfigError("filter.rk4_step must be positive", line=lines.get("filter.rk4_step"))
    return RunSetup(config=config, chain=chain, model=model, policy=policy, grid=grid_spec)


def parse_config(text: str) -> RunSetup:
    """
    Parse and validate a run configuration.

    Raises:
        ConfigError: On unknown or missing keys, malformed values, dimension
            mismatches and model invariant violations, with the offending line
    """
    sections, lines = _read_pairs(text)
    config = _validate(sections, lines)
    setup = _build(config, lines)
    logger.info(f"Loaded configuration: {setup.chain.size} states, policy {setup.policy!r}")
    return setup


def load_config(path: str) -> RunSetup:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def with_overrides(
    setup: RunSetup,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    rk4_step: Optional[float] = None,
) -> RunSetup:
    """Apply command-line overrides and rebuild the run setup."""
    config = setup.config
    run = config.run.model_copy(update={k: v for k, v in (("seed", seed), ("threads", threads)) if v is not None})
    filter_section = config.filter if rk4_step is None else config.filter.model_copy(update={"rk4_step": rk4_step})
    config = config.model_copy(update={"run": run, "filter": filter_section})
    return _build(config, {})


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return "; ".join(_format_value(row) for row in value)
        return ", ".join(_format_value(item) for item in value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Canonical text form; parsing it yields an identical configuration."""
    out = []
    for section in SECTION_ORDER:
        values = getattr(config, section).model_dump()
        for name, value in values.items():
            if value is None:
                continue
            out.append(f"{section}.{name} = {_format_value(value)}")
    return "\n".join(out) + "\n"
