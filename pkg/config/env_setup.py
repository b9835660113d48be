import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv
from config.constants import ENV_FILE, ENV_TEMPLATE, DEFAULT_OUTPUT_DIR, LOGGER_NAME


@dataclass(frozen=True)
class RuntimeEnvironment:
    output_dir: Path
    log_level: str
    jobs: int


def setup_environment(
    env_file: Path = ENV_FILE,
    logger: Optional[logging.Logger] = None
) -> RuntimeEnvironment:
    """
    Load the optional runtime environment file and resolve runtime settings.

    Args:
        env_file: Path to the .env file. A missing file is not an error.
        logger: Configured logger instance (falls back to the application logger)

    Returns:
        RuntimeEnvironment with output directory, log level and worker count

    Raises:
        RuntimeError: If a variable is present but malformed
    """
    if logger is None:
        logger = logging.getLogger(LOGGER_NAME)

    env_file = Path(env_file)
    if env_file.exists():
        if not load_dotenv(env_file, override=False):
            logger.warning(f"Environment file {env_file} is empty")
        else:
            logger.debug(f"Environment loaded from {env_file}")

    output_dir = Path(os.getenv('JFCBD_OUTPUT_DIR', str(DEFAULT_OUTPUT_DIR)))
    log_level = os.getenv('JFCBD_LOG_LEVEL', ENV_TEMPLATE['JFCBD_LOG_LEVEL']).upper()
    if not isinstance(logging.getLevelName(log_level), int):
        raise RuntimeError(f"Environment configuration error: unknown JFCBD_LOG_LEVEL '{log_level}'")

    raw_jobs = os.getenv('JFCBD_JOBS', ENV_TEMPLATE['JFCBD_JOBS'])
    try:
        jobs = int(raw_jobs)
    except ValueError:
        raise RuntimeError(f"Environment configuration error: JFCBD_JOBS must be an integer, got '{raw_jobs}'")
    if jobs < 1:
        raise RuntimeError("Environment configuration error: JFCBD_JOBS must be at least 1")

    return RuntimeEnvironment(output_dir=output_dir, log_level=log_level, jobs=jobs)


def write_env_template(env_file: Path = ENV_FILE, logger: Optional[logging.Logger] = None) -> bool:
    """Create the environment template file if missing. Returns True when a file was written."""
    if logger is None:
        logger = logging.getLogger(LOGGER_NAME)

    env_file = Path(env_file)
    if env_file.exists():
        return False
    try:
        env_file.parent.mkdir(parents=True, exist_ok=True)
        with open(env_file, 'w') as f:
            for key, value in ENV_TEMPLATE.items():
                if key.startswith('#'):
                    f.write(f"# {value}\n")
                else:
                    f.write(f"{key}={value}\n")
    except IOError as e:
        logger.error(f"Failed to create {env_file}: {e}")
        return False
    logger.info(f"Created environment template at {env_file.resolve()}")
    return True
