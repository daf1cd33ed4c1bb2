from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

Point = Tuple[float, float, float]


class RoomSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    length: float = Field(gt=0.0)
    width: float = Field(gt=0.0)
    height: float = Field(gt=0.0)
    rt60: float = Field(gt=0.0)
    sample_rate: int = Field(default=16000, gt=0)

    @property
    def dimensions(self) -> np.ndarray:
        return np.array([self.length, self.width, self.height])

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def surface(self) -> float:
        return 2.0 * (self.length * self.width + self.width * self.height + self.length * self.height)


class ScenarioSpec(BaseModel):
    room: RoomSpec
    mic_positions: List[Point] = Field(min_length=2, max_length=2)
    loudspeaker_position: Point
    target_position: Point
    interferer_position: Point
    ser_db: float = 0.0
    sir_db: float = 0.0
    segment_seconds: float = Field(default=5.0, gt=0.0)
    seed: int = 0
    mute_interferer: bool = False
    mute_echo: bool = False

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.room.sample_rate))


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    start: int = Field(ge=0)
    stop: int = Field(ge=0)

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    def __len__(self) -> int:
        return self.stop - self.start


class MixingSystem(BaseModel):
    """Time-domain RIRs (mics, taps) plus optional per-bin CTFs.

    ``ctf_A`` is (bins, L, M, N) for the near-end sources and ``ctf_B``
    (bins, L, M, R) for the loudspeaker, filled on request.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    rir_target: np.ndarray
    rir_interferer: np.ndarray
    rir_echo: np.ndarray
    target_direct_delay: int = 0
    ctf_A: Optional[np.ndarray] = None
    ctf_B: Optional[np.ndarray] = None


class ScenarioBundle(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ScenarioSpec
    mic_signals: np.ndarray
    farend_reference: np.ndarray
    groundtruth_target_early: np.ndarray
    segments: List[Segment]
    stems: Dict[str, np.ndarray]
    mixing: Optional[MixingSystem] = None

    @property
    def sample_rate(self) -> int:
        return self.spec.room.sample_rate

    @property
    def n_samples(self) -> int:
        return self.mic_signals.shape[-1]

    def segment(self, name: str) -> Segment:
        for segment in self.segments:
            if segment.name == name:
                return segment
        raise KeyError(name)
