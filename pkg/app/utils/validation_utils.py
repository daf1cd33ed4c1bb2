from typing import Iterable, Optional, Sequence, Union

import numpy as np
import structlog
from scipy import signal

from app.models.scenario import RoomSpec
from app.models.separation import Algorithm
from app.models.signal import StftConfig, WindowType
from app.utils.error_handling import ConfigurationError, GeometryError, UsageError

logger = structlog.get_logger(__name__)


def window_pair(cfg: StftConfig) -> tuple:
    """
    Analysis and synthesis windows for a configuration.

    Args:
        cfg: STFT configuration

    Returns:
        Tuple of (analysis, synthesis) arrays of length frame_size
    """
    if cfg.window == WindowType.SQRT_HANN:
        window = np.sqrt(signal.get_window("hann", cfg.frame_size))
    elif cfg.window == WindowType.HANN:
        window = signal.get_window("hann", cfg.frame_size)
    else:
        window = signal.get_window("boxcar", cfg.frame_size)
    return window, window


def validate_stft_config(cfg: StftConfig) -> None:
    """
    Validate an STFT configuration.

    Args:
        cfg: STFT configuration

    Raises:
        ConfigurationError: frame size not a power of two, hop not dividing
            the frame size, or a window pair that is not constant-overlap-add
    """
    if cfg.frame_size & (cfg.frame_size - 1):
        raise ConfigurationError("Frame size must be a power of two", frame_size=cfg.frame_size)
    if cfg.hop > cfg.frame_size or cfg.frame_size % cfg.hop:
        raise ConfigurationError("Hop must divide the frame size", frame_size=cfg.frame_size, hop=cfg.hop)

    analysis, synthesis = window_pair(cfg)
    if not signal.check_COLA(analysis * synthesis, cfg.frame_size, cfg.overlap):
        raise ConfigurationError(
            "Window pair is not constant-overlap-add",
            window=cfg.window.value,
            frame_size=cfg.frame_size,
            hop=cfg.hop,
        )


def validate_point_in_room(point: Sequence[float], room: RoomSpec, label: str = "point") -> np.ndarray:
    """
    Validate that a point lies strictly inside the room.

    Args:
        point: (x, y, z) in meters
        room: Room geometry
        label: Name used in the error message

    Returns:
        The point as a float array
    """
    position = np.asarray(point, dtype=float)
    if position.shape != (3,):
        raise GeometryError(f"{label} must have three coordinates", position=list(np.ravel(position)))
    if np.any(position <= 0.0) or np.any(position >= room.dimensions):
        raise GeometryError(f"{label} is outside the room", position=position.tolist(), room=room.dimensions.tolist())
    return position


def parse_algorithm(token: Union[str, Algorithm]) -> Algorithm:
    """
    Parse an algorithm token case-insensitively.

    Args:
        token: Algorithm name such as "DRAEC-BSS"

    Returns:
        Algorithm member

    Raises:
        UsageError: unknown token
    """
    if isinstance(token, Algorithm):
        return token
    try:
        return Algorithm(str(token).strip().upper())
    except ValueError:
        known = ", ".join(item.value for item in Algorithm)
        raise UsageError(f"Unknown algorithm '{token}' (expected one of {known})")


def validate_frame_alignment(x_frames: int, r_frames: Optional[int]) -> None:
    if r_frames is not None and r_frames != x_frames:
        raise UsageError("Microphone and far-end spectrograms are not frame-aligned", x_frames=x_frames, r_frames=r_frames)


def validate_equal_lengths(lengths: Iterable[int], what: str = "signals") -> None:
    values = set(int(length) for length in lengths)
    if len(values) > 1:
        raise UsageError(f"Mismatched lengths of {what}", lengths=sorted(values))
