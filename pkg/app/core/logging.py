"""Logging setup."""

import logging.config
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure console logging for the CLI and the API server.

    Args:
        level: Log level name, defaults to settings.LOG_LEVEL
    """
    level = (level or settings.LOG_LEVEL).upper()
    logging.config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {"generic": {"format": LOG_FORMAT, "datefmt": "%H:%M:%S"}},
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                    "formatter": "generic",
                }
            },
            "root": {"level": "WARNING", "handlers": ["console"]},
            "loggers": {
                "app": {"level": level, "handlers": [], "propagate": True},
                "uvicorn": {"level": level, "handlers": [], "propagate": True},
            },
        }
    )
