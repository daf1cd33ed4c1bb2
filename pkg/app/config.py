import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import structlog
from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from app.models.run import RunConfig
from app.utils.error_handling import ConfigurationError

# Environment variables carry this prefix so generic keys (MODE, SEED, ...)
# do not collide with unrelated variables.
ENV_PREFIX = "JOINTSEP_"


def config_keys() -> Dict[str, str]:
    """Map of upper-case config key to RunConfig field name."""
    keys = {}
    for name, field in RunConfig.model_fields.items():
        keys[(field.alias or name).upper()] = name
    return keys


def load_configurations(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build the run configuration.

    Layers, lowest first: model defaults, JOINTSEP_* environment variables
    (a .env file is loaded into the environment), the KEY=value config file,
    then explicit overrides such as CLI flags.

    Args:
        config_path: Optional KEY=value file
        overrides: Field name (or config key) to value; None values are ignored

    Returns:
        Validated RunConfig
    """
    load_dotenv()
    keys = config_keys()
    values: Dict[str, Any] = {}

    for key, name in keys.items():
        env_value = os.getenv(ENV_PREFIX + key)
        if env_value is not None:
            values[name] = env_value

    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {config_path}")
        for key, value in dotenv_values(str(path)).items():
            name = keys.get(key.upper())
            if name is None:
                raise ConfigurationError(f"Unknown config key '{key}' in {config_path}")
            if value is not None:
                values[name] = value

    for key, value in (overrides or {}).items():
        name = keys.get(key.upper(), key)
        if name not in RunConfig.model_fields:
            raise ConfigurationError(f"Unknown config override '{key}'")
        if value is not None:
            values[name] = value

    try:
        return RunConfig.model_validate({_field_input_name(name): value for name, value in values.items()})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}")


def _field_input_name(name: str) -> str:
    return RunConfig.model_fields[name].alias or name


def configure_logging(level: Optional[str] = None):
    log_level = (level or os.getenv(ENV_PREFIX + "LOG_LEVEL") or os.getenv("LOG_LEVEL", "INFO")).upper()

    # Configure structlog for structured logging
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # Configure standard logging; stdout is reserved for tables
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format="%(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(getattr(logging, log_level, logging.INFO))
