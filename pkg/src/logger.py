"""Centralized logging configuration"""

import logging
import logging.handlers
from pathlib import Path
from datetime import datetime

# image libraries that log every decoded chunk at DEBUG
NOISY_LOGGERS = ('PIL', 'matplotlib', 'tifffile')


def setup_logging(log_level: str = 'INFO', log_dir: str = 'logs') -> logging.Logger:
    """
    Setup centralized logging configuration

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        log_dir: Directory receiving the rotating log file

    Returns:
        logging.Logger: Configured root logger
    """
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger()
    logger.setLevel(getattr(logging, log_level.upper()))

    # Clear existing handlers
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%H:%M:%S'
    ))

    log_file = log_path / f"pid_digitize_{datetime.now().strftime('%Y%m%d')}.log"
    file_handler = logging.handlers.RotatingFileHandler(
        log_file, maxBytes=10*1024*1024, backupCount=5, encoding='utf-8'
    )
    file_handler.setLevel(getattr(logging, log_level.upper()))
    file_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    ))

    logger.addHandler(console_handler)
    logger.addHandler(file_handler)

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(logging.WARNING, logger.level))

    return logger


def log_run_header(logger: logging.Logger, command: str) -> None:
    """Banner opening each CLI run in the log"""
    logger.info("=" * 60)
    logger.info(f"P&ID Digitization: {command}")
    logger.info(f"Timestamp: {datetime.now()}")
    logger.info("=" * 60)
