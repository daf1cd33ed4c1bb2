from typing import Optional

import numpy as np
import structlog
from scipy import signal

from app.models.signal import Spectrogram, StftConfig
from app.utils.error_handling import ConfigurationError, UsageError
from app.utils.validation_utils import validate_stft_config, window_pair

logger = structlog.get_logger(__name__)


def analyze(audio: np.ndarray, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """
    Short-time Fourier analysis of a multichannel buffer.

    The last frame is zero-padded and the data is kept at raw DFT scale
    (scipy's window-sum normalization is undone).

    Args:
        audio: (channels, samples) or mono (samples,) buffer
        cfg: STFT configuration

    Returns:
        Spectrogram indexed [channel][frame][bin]
    """
    validate_stft_config(cfg)
    samples = np.atleast_2d(np.asarray(audio, dtype=float))
    if samples.ndim != 2 or samples.shape[-1] == 0:
        raise UsageError("Audio buffer must be nonempty (channels, samples)", shape=list(samples.shape))

    analysis, _ = window_pair(cfg)
    _, _, values = signal.stft(
        samples,
        fs=cfg.sample_rate,
        window=analysis,
        nperseg=cfg.frame_size,
        noverlap=cfg.overlap,
        boundary="zeros",
        padded=True,
        axis=-1,
    )
    data = values.transpose(0, 2, 1) * analysis.sum()
    logger.debug("Analyzed audio", channels=samples.shape[0], samples=samples.shape[-1], frames=data.shape[1])
    return Spectrogram(data=data, config=cfg, n_samples=samples.shape[-1])


def synthesize(spec: Spectrogram, cfg: Optional[StftConfig] = None) -> np.ndarray:
    """
    Inverse of ``analyze``.

    Args:
        spec: Spectrogram to resynthesize
        cfg: Expected configuration; must equal the spectrogram's own

    Returns:
        (channels, samples) float buffer truncated to the analyzed length
    """
    if cfg is not None and cfg != spec.config:
        raise ConfigurationError("Spectrogram was produced with a different STFT configuration")
    cfg = spec.config
    validate_stft_config(cfg)
    if spec.n_bins != cfg.n_bins:
        raise ConfigurationError("Bin count does not match the frame size", bins=spec.n_bins, expected=cfg.n_bins)

    _, synthesis = window_pair(cfg)
    if spec.n_frames == 0:
        return np.zeros((spec.n_channels, 0))
    _, audio = signal.istft(
        spec.data.transpose(0, 2, 1) / synthesis.sum(),
        fs=cfg.sample_rate,
        window=synthesis,
        nperseg=cfg.frame_size,
        noverlap=cfg.overlap,
        input_onesided=True,
        boundary=True,
        time_axis=-1,
        freq_axis=-2,
    )
    if spec.n_samples is not None:
        audio = audio[..., : spec.n_samples]
    return np.real(audio)
