"""
Centralized logging configuration for locintent
"""
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from pythonjsonlogger import jsonlogger


CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def setup_logger(name: str = "locintent", log_level: Optional[str] = None) -> logging.Logger:
    """
    Set up and configure logger with file rotation

    The log file receives one JSON object per record; the console keeps
    the plain human-readable format.

    Args:
        name: Logger name
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR); defaults to LOG_LEVEL or INFO

    Returns:
        Configured logger instance
    """
    log_level = log_level or os.getenv("LOG_LEVEL", "INFO")
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)

    # Only add handlers to root logger if not already configured
    if not root_logger.handlers:
        log_dir = Path(os.getenv("LOCINTENT_LOG_DIR", "logs"))
        log_dir.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_dir / "locintent.log",
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=30,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))

        console_handler = logging.StreamHandler()
        console_handler.setLevel(getattr(logging, log_level.upper(), logging.INFO))
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))

        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    logger.propagate = True

    return logger


def get_logger(name: str = "locintent") -> logging.Logger:
    """
    Get a module logger; records propagate to the handlers set up by setup_logger

    Args:
        name: Logger name

    Returns:
        Logger instance
    """
    return logging.getLogger(name)
