from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # App
    APP_NAME: str = "pickcap"
    LOG_LEVEL: str = "INFO"
    NO_COLOR: bool = False

    # Reproducibility
    SEED: Optional[int] = None  # PICKNET_SEED overrides every seed flag / run file
    WORKERS: int = 1  # 1 = single-threaded, bit-reproducible

    # Artifacts
    OUTPUT_DIR: str = "runs"

    model_config = SettingsConfigDict(env_prefix="PICKNET_", env_file=".env", extra="ignore")


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def resolve_seed(seed: int) -> int:
    """Seed actually used for a run: the PICKNET_SEED override wins."""
    override = get_settings().SEED
    return seed if override is None else override
