import logging
import os
import sys
from logging.handlers import RotatingFileHandler

from settings import get_settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def get_logger(name="penalty_flow"):
    """
    Configure and return a logger instance with rotating file handler.

    Args:
        name (str): Name of the logger. Defaults to "penalty_flow"

    Returns:
        logging.Logger: Configured logger instance
    """
    settings = get_settings()

    # Create logs directory if it doesn't exist
    logs_dir = settings.log_dir
    if not os.path.exists(logs_dir):
        os.makedirs(logs_dir)

    logger = logging.getLogger(name)

    # Only add handlers if the logger doesn't already have them
    if not logger.handlers:
        logger.setLevel(settings.log_level)

        log_file = os.path.join(logs_dir, "penalty_flow.log")
        file_handler = RotatingFileHandler(
            log_file, maxBytes=10 * 1024 * 1024, backupCount=5  # 10MB
        )
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)

    return logger


def enable_console(level=logging.INFO):
    """Mirror every configured package logger to stderr (CLI --verbose)."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(level)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if not isinstance(logger, logging.Logger):
            continue
        if any(isinstance(h, RotatingFileHandler) for h in logger.handlers):
            if not any(type(h) is logging.StreamHandler for h in logger.handlers):
                logger.addHandler(handler)
            logger.setLevel(min(logger.level, level))
    return handler
