from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIGS_DIR = PROJECT_ROOT / "configs"
RESULTS_DIR = PROJECT_ROOT / "results"

VERSION = "1.0.0"


class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = "a2lab"
    A2LAB_LOG_LEVEL: str = "INFO"

    # Workers (1 = serial; results never depend on this value)
    A2LAB_THREADS: int = 1

    # Enumeration caps
    A2LAB_ENUMERATION_CAP: int = 10_000_000
    A2LAB_CENSUS_CAP: int = 20
    # Above this many maximal grids per level, sampling switches to the flagged greedy approximation
    A2LAB_GRID_SAMPLE_CAP: int = 256

    # Tolerances
    A2LAB_SLACK_TOL: float = 1e-9
    A2LAB_IDENTITY_TOL: float = 1e-12
    A2LAB_ORTHO_TOL: float = 1e-10

    # Operator norms
    A2LAB_DENSE_MAX_DIM: int = 4096
    A2LAB_POWER_TOL: float = 1e-12
    A2LAB_POWER_MAX_ITER: int = 20_000

    # Monitoring
    A2LAB_SLOW_EXPERIMENT_SECONDS: float = 60.0

    model_config = SettingsConfigDict(
        env_file=(".env", "../.env"),
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()
