"""Logging setup for one CLI run."""

import logging
import os
import sys
from typing import Optional

LOGGER_NAME = "scenekit"


def log_dir() -> str:
    return os.getenv('SCENEKIT_LOG_DIR', 'logs')


def setup_logger(command: str, directory: Optional[str] = None,
                 level: Optional[str] = None) -> logging.Logger:
    """File log at <log_dir>/scenekit_<command>_log.txt plus a console handler."""
    directory = directory or log_dir()
    os.makedirs(directory, exist_ok=True)
    log_filename = os.path.join(directory, f"scenekit_{command}_log.txt")
    level_name = (level or os.getenv('SCENEKIT_LOG_LEVEL', 'INFO')).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    # Disable verbose logging from external libraries
    logging.getLogger('trimesh').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)

    file_handler = logging.FileHandler(log_filename)
    file_handler.setLevel(log_level)
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)

    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    console_handler.setFormatter(logging.Formatter('%(levelname)s:%(name)s:%(message)s'))

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)
    logger.propagate = False
    return logger
