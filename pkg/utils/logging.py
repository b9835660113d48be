import logging
from datetime import datetime
from pathlib import Path
from typing import Optional, Union
from config.constants import LOG_FORMAT, LOG_FILENAME_FORMAT, LOGGER_NAME


def configure_logging(
    log_dir: Optional[Union[str, Path]] = None,
    level: Union[int, str] = logging.INFO
) -> logging.Logger:
    """Configure and return the application logger with console and (optional) file handlers."""
    logger = logging.getLogger(LOGGER_NAME)

    # Return existing logger if already configured
    if logger.handlers:
        logger.setLevel(level)
        return logger

    logger.setLevel(level)

    formatter = logging.Formatter(LOG_FORMAT)

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # File handler
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        file_handler = logging.FileHandler(log_dir / LOG_FILENAME_FORMAT.format(timestamp=timestamp))
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # Prevent duplicate log propagation
    logger.propagate = False

    return logger


def get_logger(logger: Optional[logging.Logger] = None) -> logging.Logger:
    """Return the given logger or the shared application logger."""
    return logger if logger is not None else logging.getLogger(LOGGER_NAME)


def shutdown_logging() -> None:
    """Close and detach all handlers of the application logger."""
    logger = logging.getLogger(LOGGER_NAME)
    for handler in logger.handlers[:]:
        handler.close()
        logger.removeHandler(handler)
