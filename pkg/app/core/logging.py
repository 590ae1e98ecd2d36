"""
Logging configuration for the application.

Provides consistent formatting across the CLI, the pipeline services and the
scoring API. Logs go to stderr so that commands printing JSON results keep
stdout clean.
"""

import logging
import sys
from pathlib import Path

from app.core.config import settings


LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logging(level: str | None = None) -> None:
    """
    Configure application-wide logging.

    Sets up:
    - Log level from configuration (or the explicit ``level`` override)
    - Consistent formatting
    - Output to stderr, plus a log file when ``settings.log_file`` is set

    Args:
        level: Optional level name overriding ``settings.log_level``.
    """
    level_name = (level or settings.log_level).upper()

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        log_path = Path(settings.log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(
        level=getattr(logging, level_name),
        format=LOG_FORMAT,
        datefmt=DATE_FORMAT,
        handlers=handlers,
        force=True,
    )

    # Set log levels for third-party libraries
    logging.getLogger("uvicorn").setLevel(logging.INFO)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging configured: level={level_name}")
