from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.config import settings


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    """Hidden chain and price model."""
    states: List[float]
    intensity: List[List[float]]
    prior: List[float]
    drift: List[float]
    vol: List[float]
    x0: float = 0.0
    vol_floor: Optional[float] = None


class PolicySection(_Section):
    """Observation policy and its parameters."""
    kind: Literal["cox", "poisson", "fixed_grid"]
    intensity: Optional[List[float]] = None
    rate: Optional[float] = None
    step: Optional[float] = None

    @model_validator(mode="after")
    def _check_params(self):
        required = {"cox": "intensity", "poisson": "rate", "fixed_grid": "step"}[self.kind]
        if getattr(self, required) is None:
            raise ValueError(f"policy.{required} is required for policy.kind = {self.kind}")
        extra = [name for name in ("intensity", "rate", "step") if name != required and getattr(self, name) is not None]
        if extra:
            raise ValueError(f"policy.kind = {self.kind} does not take {', '.join('policy.' + e for e in extra)}")
        return self

    def params(self) -> dict:
        name = {"cox": "intensity", "poisson": "rate", "fixed_grid": "step"}[self.kind]
        return {name: getattr(self, name)}


class GridSection(_Section):
    """Structure table grid."""
    t_max: float = 3.0
    n_t: int = 121
    z_min: Optional[float] = None
    z_max: Optional[float] = None
    n_z: int = 401
    n_paths: int = 20000
    seed: Optional[int] = None


class FilterSection(_Section):
    rk4_step: float = Field(default_factory=lambda: settings.DEFAULT_RK4_STEP)
    probe_every: Optional[float] = None
    ticks_only: bool = False
    fallback: bool = True


class SimulateSection(_Section):
    horizon: float = 10.0


class OracleSection(_Section):
    particles: int = 20000
    ess_fraction: float = Field(default_factory=lambda: settings.ESS_FRACTION)


class PathsSection(_Section):
    table: Optional[str] = None
    ticks: Optional[str] = None
    truth: Optional[str] = None
    output: Optional[str] = None


class RunSection(_Section):
    seed: int = 0
    threads: int = 1


class RunConfig(_Section):
    """Validated run configuration."""
    model: ModelSection
    policy: PolicySection
    grid: GridSection = Field(default_factory=GridSection)
    filter: FilterSection = Field(default_factory=FilterSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    oracle: OracleSection = Field(default_factory=OracleSection)
    paths: PathsSection = Field(default_factory=PathsSection)
    run: RunSection = Field(default_factory=RunSection)

    def dimension_errors(self) -> List[Tuple[str, str]]:
        """(key, message) for every list whose length does not match the state count."""
        size = len(self.model.states)
        errors = []
        for key in ("prior", "drift", "vol"):
            length = len(getattr(self.model, key))
            if length != size:
                errors.append((f"model.{key}", f"model.{key} has {length} entries but model.states has {size}"))
        if len(self.model.intensity) != size:
            errors.append(("model.intensity", f"model.intensity has {len(self.model.intensity)} rows, expected {size}"))
        for row, values in enumerate(self.model.intensity, start=1):
            if len(values) != size:
                errors.append(("model.intensity", f"model.intensity row {row} has {len(values)} entries, expected {size}"))
        if self.policy.intensity is not None and len(self.policy.intensity) != size:
            errors.append(("policy.intensity", f"policy.intensity has {len(self.policy.intensity)} entries but model.states has {size}"))
        return errors
