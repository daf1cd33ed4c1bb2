import time
import traceback
from functools import wraps
from typing import Any, Callable, Dict, List, Optional

import structlog

logger = structlog.get_logger(__name__)


class SeparationError(Exception):
    """Base exception for separation toolkit errors."""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context


class ConfigurationError(SeparationError):
    """Exception for invalid configuration values."""

    exit_code = 2


class GeometryError(ConfigurationError):
    """Exception for impossible room or placement geometry."""


class UsageError(SeparationError):
    """Exception for invalid calls: unknown tokens, mismatched shapes, missing inputs."""

    exit_code = 2


class NumericalError(SeparationError):
    """Exception for singular or otherwise failed numerical solves."""

    exit_code = 3

    def __init__(self, message: str, bin_index: Optional[int] = None, **context: Any):
        super().__init__(message, bin_index=bin_index, **context)
        self.bin_index = bin_index


class DegenerateInputError(NumericalError):
    """Exception for regressors without energy."""


class AudioIOError(SeparationError):
    """Exception for audio and artifact file errors."""

    exit_code = 4


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, SeparationError):
        return error.exit_code
    return 1


def handle_errors(func: Callable) -> Callable:
    """
    Decorator to log errors and wrap unexpected exceptions.

    Args:
        func: Function to wrap

    Returns:
        Wrapped function
    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SeparationError as e:
            logger.error("Separation error", error=str(e), error_type=type(e).__name__, function=func.__name__, context=e.context)
            raise
        except Exception as e:
            logger.error("Unexpected error", error=str(e), function=func.__name__, traceback=traceback.format_exc())
            raise SeparationError(f"Unexpected error in {func.__name__}: {str(e)}") from e

    return wrapper


class PerformanceTracker:
    """Collects wall-clock timings of processing stages for run manifests."""

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def record(self, stage: str, elapsed: float, success: bool = True):
        self.records.append({"stage": stage, "elapsed": elapsed, "success": success})

    def reset(self):
        self.records = []

    def summary(self) -> Dict[str, float]:
        """
        Total elapsed seconds per stage name.

        Returns:
            Mapping of stage name to accumulated seconds
        """
        totals: Dict[str, float] = {}
        for record in self.records:
            totals[record["stage"]] = totals.get(record["stage"], 0.0) + record["elapsed"]
        return totals


# Global performance tracker instance
performance_tracker = PerformanceTracker()


def log_performance_metrics(stage: str, execution_time: float, success: bool, error: str = None):
    """
    Log performance metrics for a processing stage.

    Args:
        stage: Stage or function name
        execution_time: Elapsed seconds
        success: Whether the stage completed
        error: Error message if it failed
    """
    performance_tracker.record(stage, execution_time, success)
    if success:
        logger.debug("Stage timing", stage=stage, elapsed=round(execution_time, 6))
    else:
        logger.warning("Stage failed", stage=stage, elapsed=round(execution_time, 6), error=error)


def monitor_stage_performance(func: Callable) -> Callable:
    """
    Decorator timing a stage and recording it in the performance tracker.

    Args:
        func: Stage function

    Returns:
        Wrapped function
    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
            log_performance_metrics(func.__name__, time.perf_counter() - start_time, True)
            return result
        except Exception as e:
            log_performance_metrics(func.__name__, time.perf_counter() - start_time, False, str(e))
            raise

    return wrapper
