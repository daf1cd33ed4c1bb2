import os
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import soundfile as sf
import structlog
from dotenv import dotenv_values, set_key

from app.models.separation import DemixState
from app.utils.error_handling import AudioIOError

logger = structlog.get_logger(__name__)

PathLike = Union[str, os.PathLike]

# Header of the demix container: bins, M, L1*R, L2*M, has_W.
DEMIX_HEADER_FIELDS = ("bins", "channels", "aec_size", "dr_size", "has_joint")


def read_audio(path: PathLike) -> Tuple[np.ndarray, int]:
    """
    Read a WAV file.

    Args:
        path: File to read

    Returns:
        Tuple of ((channels, samples) float64 array, sample rate)
    """
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        logger.error("Error reading audio", path=str(path), error=str(e))
        raise AudioIOError(f"Cannot read audio file {path}: {e}")
    return data.T, int(sample_rate)


def write_audio(path: PathLike, audio: np.ndarray, sample_rate: int, subtype: str = "FLOAT") -> str:
    """
    Write a (channels, samples) or mono buffer as WAV.

    Args:
        path: Destination file
        audio: Samples
        sample_rate: Sample rate in Hz
        subtype: soundfile subtype, FLOAT (32-bit) or PCM_16

    Returns:
        The written path
    """
    samples = np.atleast_2d(np.asarray(audio, dtype=float))
    try:
        ensure_directory(Path(path).parent)
        sf.write(str(path), samples.T, sample_rate, subtype=subtype)
    except (RuntimeError, OSError) as e:
        logger.error("Error writing audio", path=str(path), error=str(e))
        raise AudioIOError(f"Cannot write audio file {path}: {e}")
    return str(path)


def ensure_directory(path: PathLike) -> Path:
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise AudioIOError(f"Cannot create directory {directory}: {e}")
    return directory


def write_key_values(path: PathLike, values: Dict[str, object]) -> str:
    """
    Write a flat KEY=value text file readable by the config loader.

    Args:
        path: Destination file (replaced if it exists)
        values: Keys and values; values are stringified

    Returns:
        The written path
    """
    target = Path(path)
    ensure_directory(target.parent)
    target.write_text("")
    for key, value in values.items():
        set_key(str(target), key, "" if value is None else str(value), quote_mode="never")
    return str(target)


def read_key_values(path: PathLike) -> Dict[str, Optional[str]]:
    target = Path(path)
    if not target.is_file():
        raise AudioIOError(f"Key-value file not found: {target}")
    return dict(dotenv_values(str(target)))


def save_demix_state(path: PathLike, state: DemixState) -> str:
    """
    Save a demix state as a .npz container with a dimension header.

    Args:
        path: Destination file
        state: Demixing blocks

    Returns:
        The written path
    """
    empty = np.zeros((state.n_bins, state.n_channels, 0), dtype=np.complex128)
    e_bar = state.E_bar if state.E_bar is not None else empty
    f_bar = state.F_bar if state.F_bar is not None else empty
    joint = state.W if state.W is not None else np.zeros((state.n_bins, 0, 0), dtype=np.complex128)
    header = np.array([state.n_bins, state.n_channels, e_bar.shape[-1], f_bar.shape[-1], int(state.W is not None)])
    try:
        ensure_directory(Path(path).parent)
        with open(path, "wb") as handle:
            np.savez(handle, header=header, D=state.D, E_bar=e_bar, F_bar=f_bar, W=joint)
    except OSError as e:
        raise AudioIOError(f"Cannot write demix state {path}: {e}")
    logger.info("Saved demix state", path=str(path), **dict(zip(DEMIX_HEADER_FIELDS, header.tolist())))
    return str(path)


def load_demix_state(path: PathLike) -> DemixState:
    try:
        with np.load(str(path)) as container:
            header = container["header"].tolist()
            D, e_bar, f_bar, joint = (container[key] for key in ("D", "E_bar", "F_bar", "W"))
    except (OSError, KeyError, ValueError) as e:
        raise AudioIOError(f"Cannot read demix state {path}: {e}")

    bins, channels, aec_size, dr_size, has_joint = header
    if D.shape != (bins, channels, channels) or e_bar.shape[-1] != aec_size or f_bar.shape[-1] != dr_size:
        raise AudioIOError(f"Demix state {path} does not match its header", header=header)
    return DemixState(
        D=D,
        E_bar=e_bar if aec_size else None,
        F_bar=f_bar if dr_size else None,
        W=joint if has_joint else None,
    )
