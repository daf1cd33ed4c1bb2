import hashlib
import hmac
import json
import platform
import time
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Callable, Dict

import numpy as np
import scipy
import structlog

from app.models.run import RunConfig
from app.utils.error_handling import performance_tracker
from app.utils.file_utils import read_key_values, write_key_values

logger = structlog.get_logger(__name__)

MANIFEST_FILE = "manifest.txt"
RUN_CONFIG_FILE = "run_config.txt"


def config_values(config: RunConfig) -> Dict[str, str]:
    """Config as upper-case KEY -> text, loadable again by load_configurations."""
    values = {}
    for key, value in config.model_dump(mode="json", by_alias=True).items():
        if isinstance(value, list):
            value = ",".join(str(item) for item in value)
        values[key.upper()] = "" if value is None else str(value)
    return values


def config_signature(config: RunConfig) -> str:
    """
    SHA-256 of the canonical JSON form of a configuration.
    """
    payload = json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def verify_manifest(directory: str, config: RunConfig) -> bool:
    """
    Check that a run directory was produced with this configuration.
    """
    manifest = read_key_values(Path(directory) / MANIFEST_FILE)
    recorded = manifest.get("CONFIG_SHA256") or ""
    is_valid = hmac.compare_digest(recorded, config_signature(config))
    if not is_valid:
        logger.warning("Manifest does not match configuration", directory=str(directory), recorded_prefix=recorded[:10])
    return is_valid


def records_manifest(command: str) -> Callable:
    """
    Decorator writing manifest.txt and run_config.txt into the output directory of a command.

    The wrapped function takes the RunConfig as its first argument. The
    manifest records the command, config hash, seed, library versions, total
    wall time and the per-stage timings collected by the performance tracker.
    """

    def decorator(f):
        @wraps(f)
        def decorated_function(config: RunConfig, *args, **kwargs):
            performance_tracker.reset()
            started = datetime.now(timezone.utc)
            start_time = time.perf_counter()
            result = f(config, *args, **kwargs)
            elapsed = time.perf_counter() - start_time

            from app import __version__

            output_dir = Path(config.output_dir)
            write_key_values(output_dir / RUN_CONFIG_FILE, config_values(config))
            manifest = {
                "COMMAND": command,
                "STARTED_AT": started.isoformat(),
                "ELAPSED_SECONDS": f"{elapsed:.6f}",
                "CONFIG_SHA256": config_signature(config),
                "CONFIG_FILE": RUN_CONFIG_FILE,
                "SEED": config.seed,
                "ALGORITHM": config.algorithm.value,
                "MODE": config.mode.value,
                "PACKAGE_VERSION": __version__,
                "PYTHON_VERSION": platform.python_version(),
                "NUMPY_VERSION": np.__version__,
                "SCIPY_VERSION": scipy.__version__,
            }
            for stage, seconds in performance_tracker.summary().items():
                manifest[f"STAGE_{stage.upper()}_SECONDS"] = f"{seconds:.6f}"
            write_key_values(output_dir / MANIFEST_FILE, manifest)
            logger.info("Run manifest written", command=command, directory=str(output_dir), elapsed=round(elapsed, 3))
            return result

        return decorated_function

    return decorator
