"""
Application configuration using Pydantic Settings.

This module defines the process-wide settings loaded from environment variables
(prefix ``ENGAGE_``) or a ``.env`` file. Algorithm parameters live in the
pydantic models under ``app.schemas.config``; this module only covers how the
process runs.
"""

from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    All settings have defaults suitable for a local run and can be overridden
    via ``ENGAGE_<NAME>`` environment variables or a ``.env`` file.
    """

    # Application Metadata
    app_name: str = "Volunteer Engagement Predictor"
    app_version: str = "0.1.0"
    app_env: Literal["development", "staging", "production"] = "development"
    debug: bool = False

    # Scoring service
    host: str = "0.0.0.0"
    port: int = 8000
    model_path: str | None = None

    # Experiment runs
    jobs: int = Field(default=1, ge=1)  # ENGAGE_JOBS, default for --jobs
    default_seed: int = 42

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    log_file: str | None = None

    model_config = SettingsConfigDict(
        env_prefix="ENGAGE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",  # Ignore extra environment variables
        protected_namespaces=("settings_",),
    )


# Global settings instance, imported throughout the application
settings = Settings()
