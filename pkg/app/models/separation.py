from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.signal import Spectrogram


class Algorithm(str, Enum):
    JOINT_SS = "JOINT-SS"
    DRAEC_BSS = "DRAEC-BSS"
    DR_AEC_BSS = "DR-AEC-BSS"
    AEC_DR_BSS = "AEC-DR-BSS"
    BSS = "BSS"

    @property
    def stages(self) -> List[str]:
        """Filter stages run before the final BSS stage, in order."""
        return list(_STAGE_ORDERS[self])

    @property
    def is_cascade(self) -> bool:
        return self not in (Algorithm.JOINT_SS, Algorithm.BSS)


_STAGE_ORDERS = {
    Algorithm.JOINT_SS: (),
    Algorithm.DRAEC_BSS: ("draec",),
    Algorithm.DR_AEC_BSS: ("dr", "aec"),
    Algorithm.AEC_DR_BSS: ("aec", "dr"),
    Algorithm.BSS: (),
}

COMPARED_ALGORITHMS = (
    Algorithm.DRAEC_BSS,
    Algorithm.DR_AEC_BSS,
    Algorithm.AEC_DR_BSS,
    Algorithm.JOINT_SS,
)


class Mode(str, Enum):
    BATCH = "batch"
    ONLINE = "online"


class GgdPrior(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    gamma: float = Field(default=0.2, gt=0.0, le=2.0)
    # Scale of the generalized Gaussian; it rescales every weight uniformly and
    # leaves the fixed points unchanged.
    scale: float = Field(default=1.0, gt=0.0, alias="lambda")


class FilterTaps(BaseModel):
    model_config = ConfigDict(frozen=True)

    l1: int = Field(default=5, ge=1)
    l2: int = Field(default=5, ge=1)
    delta: int = Field(default=2, ge=1)

    def aec_size(self, refs: int) -> int:
        return self.l1 * refs

    def dr_size(self, channels: int) -> int:
        return self.l2 * channels

    def stacked_size(self, channels: int, refs: int, dereverb: bool = True) -> int:
        return channels + self.aec_size(refs) + (self.dr_size(channels) if dereverb else 0)


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps: float = Field(default=1e-8, gt=0.0)
    diag_load: float = Field(default=1e-6, ge=0.0)
    loading_floor: float = Field(default=1e-12, ge=0.0)
    max_iters: int = Field(default=20, ge=0)
    tol: float = Field(default=1e-6, ge=0.0)
    # Power added inside the weights, relative to the mean input power.
    var_bias: float = Field(default=1e-3, ge=0.0)


class AuxVars(BaseModel):
    """Weighted statistics of one stage.

    ``V`` is the weighted covariance (per source, or per bin for filter stages),
    ``Q`` the weighted cross-correlation of filter stages and ``beta`` the
    last weights used to build them.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    V: np.ndarray
    Q: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    # Running input power behind the weight bias; None until the first frame.
    power: Optional[np.ndarray] = None


class DemixState(BaseModel):
    """Per-bin demixing blocks.

    ``D`` is (bins, M, M), ``E_bar`` (bins, M, L1*R), ``F_bar`` (bins, M, L2*M)
    and ``W`` the full (bins, L, L) system of Joint-SS.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    D: np.ndarray
    E_bar: Optional[np.ndarray] = None
    F_bar: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None

    @property
    def n_bins(self) -> int:
        return self.D.shape[0]

    @property
    def n_channels(self) -> int:
        return self.D.shape[1]


class SeparationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    algorithm: Algorithm
    estimate: Spectrogram
    demix: DemixState
    objective_history: List[float] = []
    iterations: int = 0


class OnlineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.999, gt=0.0, lt=1.0)
    taps: FilterTaps = FilterTaps()
    prior: GgdPrior = GgdPrior()
    settings: SolverSettings = SolverSettings()
    refresh_every: int = Field(default=1, ge=1)
    dereverb: bool = True
    ref_channel: int = Field(default=0, ge=0)


class OnlineState(BaseModel):
    """Streaming state of one session.

    ``ref_history`` holds the last L1 far-end frames (index 0 newest) and
    ``stage_history`` the last L2+delta frames of the signal entering the
    dereverberation stage. ``aux`` and ``coefficients`` are keyed by stage
    name (aec, dr, draec, bss, joint).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: OnlineConfig
    n_bins: int
    n_channels: int
    n_refs: int
    algorithm: Optional[Algorithm] = None
    frames_processed: int = 0
    skipped_refreshes: int = 0
    closed: bool = False
    ref_history: np.ndarray
    stage_history: np.ndarray
    aux: Dict[str, AuxVars]
    coefficients: Dict[str, np.ndarray]
