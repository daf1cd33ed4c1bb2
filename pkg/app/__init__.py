from typing import Any, Dict, Optional

import structlog

from app.config import configure_logging, load_configurations
from app.models.run import RunConfig

__version__ = "0.1.0"

logger = structlog.get_logger(__name__)


def create_app(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load the configuration and logging settings for a run."""
    config = load_configurations(config_path, overrides)
    configure_logging(config.log_level)
    logger.info("Configuration loaded", algorithm=config.algorithm.value, mode=config.mode.value, version=__version__)
    return config
