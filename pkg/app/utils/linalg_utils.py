import numpy as np
import structlog
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from app.models.separation import SolverSettings
from app.utils.error_handling import NumericalError

logger = structlog.get_logger(__name__)

# Loading escalation on singular solves: x1, x10, x100.
SOLVE_ATTEMPTS = 3
LOADING_ESCALATION = 10.0


def stack_history(X: np.ndarray, taps: int, delay: int = 0) -> np.ndarray:
    """
    Stack delayed frames into a tap-major regressor.

    Entry ``[f, t, l * C + c]`` holds ``X[f, t - delay - l, c]``; frames
    before the start of the signal are zeros.

    Args:
        X: (bins, frames, channels) bin-major signal
        taps: Number of stacked frames
        delay: Delay of the newest stacked frame

    Returns:
        (bins, frames, taps * channels) regressor
    """
    n_bins, n_frames, n_channels = X.shape
    stacked = np.zeros((n_bins, n_frames, taps * n_channels), dtype=np.complex128)
    for tap in range(taps):
        shift = delay + tap
        if shift >= n_frames:
            break
        block = slice(tap * n_channels, (tap + 1) * n_channels)
        if shift == 0:
            stacked[:, :, block] = X
        else:
            stacked[:, shift:, block] = X[:, :-shift, :]
    return stacked


def loading_level(V: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """Diagonal loading per matrix: diag_load * mean diagonal + floor."""
    size = V.shape[-1]
    mean_diagonal = np.real(np.trace(V, axis1=-2, axis2=-1)) / size
    return settings.diag_load * np.maximum(mean_diagonal, 0.0) + settings.loading_floor


def load_diagonal(V: np.ndarray, settings: SolverSettings, boost: float = 1.0) -> np.ndarray:
    eye = np.eye(V.shape[-1])
    return V + boost * loading_level(V, settings)[..., None, None] * eye


def first_singular_bin(matrices: np.ndarray) -> int:
    """Index along the leading (bin) axis of the first matrix that cannot be solved."""
    batch_shape = matrices.shape[:-2]
    flat = matrices.reshape((-1,) + matrices.shape[-2:])
    for index, matrix in enumerate(flat):
        try:
            np.linalg.solve(matrix, np.eye(matrix.shape[-1]))
        except np.linalg.LinAlgError:
            return int(np.unravel_index(index, batch_shape)[0]) if batch_shape else 0
    return -1


def solve_loaded(V: np.ndarray, B: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """
    Solve ``(V + loading * I) X = B`` over the leading batch axes.

    A singular system is retried with the loading multiplied by 10, up to
    ``SOLVE_ATTEMPTS`` attempts.

    Args:
        V: (..., K, K) Hermitian matrices, unloaded
        B: (..., K, P) right-hand sides
        settings: Loading parameters

    Returns:
        (..., K, P) solutions

    Raises:
        NumericalError: still singular after the last attempt
    """
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(SOLVE_ATTEMPTS),
            retry=retry_if_exception_type(np.linalg.LinAlgError),
            reraise=True,
        ):
            with attempt:
                boost = LOADING_ESCALATION ** (attempt.retry_state.attempt_number - 1)
                if boost > 1.0:
                    logger.warning("Singular system, escalating diagonal loading", boost=boost)
                return np.linalg.solve(load_diagonal(V, settings, boost), B)
    except np.linalg.LinAlgError:
        bin_index = first_singular_bin(load_diagonal(V, settings))
        raise NumericalError("Singular system after diagonal loading", bin_index=bin_index)
