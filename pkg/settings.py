from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Get the absolute path to the directory containing this file
BASE_DIR = Path(__file__).resolve().parent
ENV_FILE = BASE_DIR / '.env'


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=str(ENV_FILE),
        env_file_encoding='utf-8',
        env_prefix='WILLMORE_',
        extra='ignore'
    )

    workers: int = Field(1, ge=1)
    log_level: str = "INFO"
    output_dir: str = "out"
    seed: int = 20240611

    # relative conformality tolerance, analytic vs detector supplied charts
    tau_conf_analytic: float = Field(1e-6, gt=0)
    tau_conf_detector: float = Field(1e-2, gt=0)
    # pole exclusion radius relative to the scene scale
    pole_exclusion: float = Field(1e-8, gt=0)
    # Im(omega) above which a torus conformal class counts as diverging
    degeneration_threshold: float = Field(10.0, gt=1)
    # truncated-tail Dirichlet energy allowed for catenoid models
    eps_geo: float = Field(1e-3, gt=0, lt=1)


@lru_cache()
def get_settings():
    """
    Caches the settings object so the .env file and environment are read once.
    """
    return Settings()
