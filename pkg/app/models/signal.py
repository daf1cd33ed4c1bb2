from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class WindowType(str, Enum):
    SQRT_HANN = "sqrt_hann"
    HANN = "hann"
    BOXCAR = "boxcar"


class StftConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame_size: int = Field(default=1024, gt=0)
    hop: int = Field(default=512, gt=0)
    window: WindowType = WindowType.SQRT_HANN
    sample_rate: int = Field(default=16000, gt=0)

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def overlap(self) -> int:
        return self.frame_size - self.hop


class Spectrogram(BaseModel):
    """Complex STFT tensor indexed [channel][frame][bin].

    Processing code works on the bin-major view ``(bins, frames, channels)``
    returned by ``bin_major()``; ``from_bin_major`` goes the other way.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray
    config: StftConfig = StftConfig()
    n_samples: Optional[int] = None  # original signal length, used to truncate on synthesis

    @field_validator("data")
    @classmethod
    def _check_layout(cls, value: np.ndarray) -> np.ndarray:
        if not isinstance(value, np.ndarray) or value.ndim != 3:
            raise ValueError("Spectrogram data must be a 3-D array [channel][frame][bin]")
        return value.astype(np.complex128, copy=False)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]

    def bin_major(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 1, 0))

    @classmethod
    def from_bin_major(cls, values: np.ndarray, config: StftConfig, n_samples: Optional[int] = None) -> "Spectrogram":
        return cls(data=np.ascontiguousarray(values.transpose(2, 1, 0)), config=config, n_samples=n_samples)

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data=data, config=self.config, n_samples=self.n_samples)
