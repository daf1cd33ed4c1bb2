import itertools
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import structlog

from app.models.scenario import RoomSpec
from app.utils.error_handling import GeometryError
from app.utils.validation_utils import validate_point_in_room

logger = structlog.get_logger(__name__)

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.161

# Absorption calibration: measurement pair as fractions of the room dimensions.
CALIBRATION_SOURCE = np.array([0.3, 0.35, 0.45])
CALIBRATION_MIC = np.array([0.65, 0.6, 0.4])
CALIBRATION_STEPS = 8
CALIBRATION_TOLERANCE = 0.02
MAX_ATTENUATION = 20.0


def sabine_absorption(room: RoomSpec) -> float:
    return SABINE_CONSTANT * room.volume / (room.surface * room.rt60)


def eyring_absorption(room: RoomSpec) -> float:
    return 1.0 - np.exp(-SABINE_CONSTANT * room.volume / (room.surface * room.rt60))


def direct_path_delay(src: Sequence[float], mic: Sequence[float], sample_rate: int) -> int:
    distance = float(np.linalg.norm(np.asarray(src, dtype=float) - np.asarray(mic, dtype=float)))
    return int(np.floor(distance * sample_rate / SPEED_OF_SOUND))


def _render(room: RoomSpec, source: np.ndarray, receiver: np.ndarray, n_samples: int, beta: float) -> np.ndarray:
    """Sum of all images with delay below n_samples, amplitude beta**reflections / (4 pi d)."""
    fs = room.sample_rate
    dims = room.dimensions
    max_distance = n_samples * SPEED_OF_SOUND / fs
    orders = np.ceil(max_distance / (2.0 * dims)).astype(int) + 1
    indices = [np.arange(-order, order + 1) for order in orders]

    response = np.zeros(n_samples)
    for parity in itertools.product((0, 1), repeat=3):
        offsets = []
        reflections = []
        for axis in range(3):
            n = indices[axis]
            offsets.append((1 - 2 * parity[axis]) * source[axis] + 2.0 * n * dims[axis] - receiver[axis])
            reflections.append(np.abs(n - parity[axis]) + np.abs(n))
        dx, dy, dz = np.meshgrid(*offsets, indexing="ij")
        rx, ry, rz = np.meshgrid(*reflections, indexing="ij")
        image_distance = np.sqrt(dx ** 2 + dy ** 2 + dz ** 2)
        delay = np.floor(image_distance * fs / SPEED_OF_SOUND).astype(int)
        audible = delay < n_samples
        amplitude = beta ** (rx + ry + rz)[audible] / (4.0 * np.pi * image_distance[audible])
        response += np.bincount(delay[audible], weights=amplitude, minlength=n_samples)
    return response


@lru_cache(maxsize=64)
def calibrated_absorption(room: RoomSpec) -> float:
    """
    Wall absorption whose image-method responses decay at the room RT60.

    Starts from the Eyring absorption and rescales the per-reflection energy
    attenuation -ln(1 - a) by measured / requested T20 until the two agree
    within 2%. The measurement pair sits at fixed fractions of the room
    dimensions, so every response of one room shares the coefficient.

    Raises:
        GeometryError: RT60 not attainable (Sabine absorption above 1)
    """
    sabine = sabine_absorption(room)
    if sabine > 1.0:
        raise GeometryError("RT60 is not attainable for this room volume", rt60=room.rt60, sabine_absorption=round(sabine, 4))

    dims = room.dimensions
    n_samples = int(np.ceil(room.rt60 * room.sample_rate))
    attenuation = SABINE_CONSTANT * room.volume / (room.surface * room.rt60)
    measured = None
    for step in range(CALIBRATION_STEPS):
        beta = np.exp(-attenuation / 2.0)
        response = _render(room, CALIBRATION_SOURCE * dims, CALIBRATION_MIC * dims, n_samples, beta)
        measured = estimate_rt60(response, room.sample_rate)
        if abs(measured / room.rt60 - 1.0) < CALIBRATION_TOLERANCE:
            break
        attenuation = min(attenuation * measured / room.rt60, MAX_ATTENUATION)

    absorption = float(1.0 - np.exp(-attenuation))
    logger.debug(
        "Calibrated wall absorption",
        rt60=room.rt60,
        measured_rt60=round(float(measured), 4),
        absorption=round(absorption, 4),
        eyring=round(float(eyring_absorption(room)), 4),
        steps=step + 1,
    )
    return absorption


def image_method_rir(
    room: RoomSpec,
    src: Sequence[float],
    mic: Sequence[float],
    n_samples: Optional[int] = None,
    absorption: Optional[float] = None,
) -> np.ndarray:
    """
    Shoebox room impulse response by the image-source method.

    Every wall shares one reflection coefficient sqrt(1 - a), with the
    absorption a calibrated so that the decay matches the room RT60 (see
    ``calibrated_absorption``). Images are placed on integer-sample delays
    floor(d * fs / c) with amplitude beta**reflections / (4 pi d).

    Args:
        room: Room geometry, RT60 and sample rate
        src: Source position in meters
        mic: Microphone position in meters
        n_samples: Response length; defaults to ceil(rt60 * fs), extended to
            hold the direct path
        absorption: Wall energy absorption in (0, 1]; overrides the RT60
            calibration (1.0 gives the free-field response)

    Returns:
        Impulse response of length n_samples
    """
    source = validate_point_in_room(src, room, "source")
    receiver = validate_point_in_room(mic, room, "microphone")
    distance = float(np.linalg.norm(source - receiver))
    if distance < 1e-9:
        raise GeometryError("Source and microphone coincide (zero distance)", position=source.tolist())

    if absorption is None:
        absorption = calibrated_absorption(room)
    if not 0.0 < absorption <= 1.0:
        raise GeometryError("Wall absorption must lie in (0, 1]", absorption=absorption)
    beta = np.sqrt(1.0 - absorption)

    fs = room.sample_rate
    direct_delay = int(np.floor(distance * fs / SPEED_OF_SOUND))
    if n_samples is None:
        n_samples = max(int(np.ceil(room.rt60 * fs)), direct_delay + 1)
    response = _render(room, source, receiver, n_samples, beta)

    logger.debug(
        "Generated room impulse response",
        rt60=room.rt60,
        samples=n_samples,
        direct_delay=direct_delay,
        reflection_coefficient=round(float(beta), 4),
    )
    return response


def schroeder_decay_db(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, 0 dB at t=0."""
    energy = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def estimate_rt60(rir: np.ndarray, sample_rate: int, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """
    RT60 from a linear fit of the Schroeder curve between two levels (T20 by default).

    Args:
        rir: Impulse response
        sample_rate: Sample rate in Hz
        start_db: Upper level of the fit
        stop_db: Lower level of the fit

    Returns:
        Extrapolated 60 dB decay time in seconds
    """
    decay = schroeder_decay_db(rir)
    fit = np.flatnonzero((decay <= start_db) & (decay >= stop_db))
    if fit.size < 2:
        raise GeometryError("Impulse response too short to estimate RT60", samples=len(rir))
    slope, _ = np.polyfit(fit / sample_rate, decay[fit], 1)
    return float(-60.0 / slope)
