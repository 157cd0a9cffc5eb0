from typing import Tuple, Type

from pydantic_settings import BaseSettings, PydanticBaseSettingsSource


class Settings(BaseSettings):
    """Application settings."""
    APP_NAME: str = "Volatility Filter"
    APP_VERSION: str = "0.1.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Model settings
    VOL_FLOOR: float = 1e-6
    STOCHASTIC_TOL: float = 1e-12

    # Structure table settings
    TABLE_MAX_CELLS: int = 50_000_000
    TABLE_BATCH_SIZE: int = 2048
    TABLE_FORMAT_VERSION: int = 1
    Z_RANGE_SIGMAS: float = 8.0

    # Directory the HTTP API may load tables from
    TABLE_DIR: str = "data/tables"

    # Filter settings
    DEFAULT_RK4_STEP: float = 1e-3
    SIMPLEX_TOL: float = 1e-9
    CONSERVATION_TOL: float = 1e-10

    # Particle oracle settings
    ESS_FRACTION: float = 0.5
    PARTICLE_BLOCK_SIZE: int = 4096
    MIN_PARTICLES: int = 100

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Init arguments only: no environment or dotenv lookup.
        return (init_settings,)


settings = Settings()
