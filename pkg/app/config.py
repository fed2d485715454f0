"""
Application configuration for the patchmatch toolkit.
Centralized process-level settings using Pydantic settings.
"""
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables
load_dotenv()


class Settings(BaseSettings):
    """
    Process settings with environment variable support.
    Run parameters live in schemas.config.RunConfig, not here.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
        populate_by_name=True,
    )

    # Application settings
    app_name: str = "patchmatch"
    app_version: str = "1.0.0"
    debug: bool = False

    # Geodesic cache directory
    cache_dir: Path = Field(
        Path(".patchmatch_cache"),
        validation_alias=AliasChoices("PATCHMATCH_CACHE", "CACHE_DIR"),
    )

    # Run registry
    database_url: Optional[str] = None

    # Batch mode
    max_workers: int = Field(1, ge=1, validation_alias=AliasChoices("PATCHMATCH_WORKERS", "MAX_WORKERS"))

    # Logging settings
    log_level: str = "INFO"
    log_dir: Path = Path("logs")

    @field_validator("log_level")
    @classmethod
    def upper_level(cls, v: str) -> str:
        return v.upper()

    @property
    def registry_url(self) -> str:
        """Database URL for the run registry, SQLite inside the cache by default"""
        if self.database_url:
            return self.database_url
        return f"sqlite:///{(self.cache_dir / 'runs.db').as_posix()}"


# Global settings instance
settings = Settings()
