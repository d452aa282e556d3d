"""
Logging setup shared by the edge-state lab scripts.

Every module does::

    from logging_config import get_logger
    logger = get_logger(__name__)

The level comes from the EDGELAB_LOG_LEVEL environment variable (default
INFO). The command-line front end can override it with ``set_level``.
"""

import logging
import os
import sys
from typing import Optional

LOG_LEVEL_ENV = "EDGELAB_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ROOT_LOGGER_NAME = "edgelab"

_configured = False


def _level_from_env() -> int:
    """Reads the log level from the environment, falling back to INFO."""
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def _configure_root() -> logging.Logger:
    global _configured
    root = logging.getLogger(ROOT_LOGGER_NAME)
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.setLevel(_level_from_env())
        root.propagate = False
        _configured = True
    return root


def get_logger(name: str) -> logging.Logger:
    """Returns a logger below the shared ``edgelab`` root logger.

    Args:
        name: Usually ``__name__`` of the calling module.

    Returns:
        The configured child logger.
    """
    root = _configure_root()
    return root.getChild(name.rsplit(".", 1)[-1])


def set_level(level: Optional[str]) -> None:
    """Overrides the environment log level, e.g. from ``--log-level``."""
    if not level:
        return
    value = logging.getLevelName(level.upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    _configure_root().setLevel(value)
