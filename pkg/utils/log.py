"""Logging setup driven by the LORAFUSE_LOG environment variable."""
from __future__ import annotations

import logging
import os
import sys

ENV_VAR = "LORAFUSE_LOG"

LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def level_from_env(default: str = "info") -> int:
    """Resolve the log level from LORAFUSE_LOG (error | info | debug)."""
    raw = (os.environ.get(ENV_VAR) or default).strip().lower()
    level = LEVELS.get(raw)
    if level is None:
        logging.getLogger(__name__).warning("ignoring %s=%r; expected one of %s", ENV_VAR, raw, ", ".join(LEVELS))
        return LEVELS[default]
    return level


def configure_logging(level: int | None = None) -> None:
    """Install a single stderr handler on the root logger."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname).1s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level if level is not None else level_from_env())
