from __future__ import annotations

import os
import sys
from pathlib import Path

from loguru import logger

_FORMAT = "{time:HH:mm:ss} | {level: <7} | {extra[stage]: <9} | {message}"


def configure_logging(level: str | None = None, log_file: Path | None = None) -> None:
    logger.remove()
    logger.configure(extra={"stage": "-"})
    logger.add(sys.stderr, level=level or os.environ.get("QUEE_LOG_LEVEL", "INFO"), format=_FORMAT)
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, level="DEBUG", format=_FORMAT)


def stage_logger(stage: str):
    return logger.bind(stage=stage)
