from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.separation import (
    COMPARED_ALGORITHMS,
    Algorithm,
    FilterTaps,
    GgdPrior,
    Mode,
    OnlineConfig,
    SolverSettings,
)
from app.models.signal import StftConfig, WindowType


class RunConfig(BaseModel):
    """Every knob of a run; field names are the lowercased config keys."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    algorithm: Algorithm = Algorithm.DRAEC_BSS
    mode: Mode = Mode.BATCH

    # STFT
    frame_size: int = Field(default=1024, gt=0)
    hop: int = Field(default=512, gt=0)
    window: WindowType = WindowType.SQRT_HANN
    sample_rate: int = Field(default=16000, gt=0)

    # Filters and prior
    taps_aec: int = Field(default=5, ge=1)
    taps_dr: int = Field(default=5, ge=1)
    delta: int = Field(default=2, ge=1)
    gamma: float = Field(default=0.2, gt=0.0, le=2.0)
    scale: float = Field(default=1.0, gt=0.0, alias="lambda")
    enable_aec: bool = True
    enable_dr: bool = True
    ref_channel: int = Field(default=0, ge=0)

    # Solver
    alpha: float = Field(default=0.999, gt=0.0, lt=1.0)
    iters: int = Field(default=20, ge=0)
    tol: float = Field(default=1e-6, ge=0.0)
    diag_load: float = Field(default=1e-6, ge=0.0)
    loading_floor: float = Field(default=1e-12, ge=0.0)
    eps: float = Field(default=1e-8, gt=0.0)
    var_bias: float = Field(default=1e-3, ge=0.0)
    refresh_every: int = Field(default=1, ge=1)

    # Scenario
    seed: int = 0
    rt60: float = Field(default=0.3, gt=0.0)
    ser_db: float = 0.0
    sir_db: float = 0.0
    segment_seconds: float = Field(default=5.0, gt=0.0)
    room_length: Optional[float] = Field(default=None, gt=0.0)
    room_width: Optional[float] = Field(default=None, gt=0.0)
    room_height: Optional[float] = Field(default=None, gt=0.0)
    target_wav: Optional[str] = None
    interferer_wav: Optional[str] = None
    echo_wav: Optional[str] = None

    # Outputs and batch runs
    output_dir: str = "output"
    num_seeds: int = Field(default=20, ge=1)
    rt60_grid: List[float] = [0.3, 0.6, 0.8]
    ser_grid: List[float] = [0.0, -10.0]
    algorithms: List[Algorithm] = list(COMPARED_ALGORITHMS)
    workers: int = Field(default=1, ge=1)

    # Benchmark
    bench_mode: Mode = Mode.ONLINE
    bench_repeats: int = Field(default=5, ge=1)
    bench_warmup: int = Field(default=1, ge=0)
    bench_seconds: float = Field(default=5.0, gt=0.0)
    bench_channels: List[int] = [2]
    bench_taps_dr: List[int] = [5, 10, 20]

    log_level: str = "INFO"

    @field_validator("rt60_grid", "ser_grid", "algorithms", "bench_channels", "bench_taps_dr", mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("algorithm", "algorithms", mode="before")
    @classmethod
    def _normalize_algorithm(cls, value):
        if isinstance(value, str):
            return value.strip().upper()
        if isinstance(value, list):
            return [item.strip().upper() if isinstance(item, str) else item for item in value]
        return value

    @field_validator("mode", "bench_mode", "window", mode="before")
    @classmethod
    def _normalize_lower(cls, value):
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("room_length", "room_width", "room_height", "target_wav", "interferer_wav", "echo_wav", mode="before")
    @classmethod
    def _empty_is_none(cls, value):
        return None if isinstance(value, str) and not value.strip() else value

    def stft_config(self) -> StftConfig:
        return StftConfig(frame_size=self.frame_size, hop=self.hop, window=self.window, sample_rate=self.sample_rate)

    def filter_taps(self) -> FilterTaps:
        return FilterTaps(l1=self.taps_aec, l2=self.taps_dr, delta=self.delta)

    def prior(self) -> GgdPrior:
        return GgdPrior(gamma=self.gamma, scale=self.scale)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            eps=self.eps,
            diag_load=self.diag_load,
            loading_floor=self.loading_floor,
            max_iters=self.iters,
            tol=self.tol,
            var_bias=self.var_bias,
        )

    def online_config(self) -> OnlineConfig:
        return OnlineConfig(
            alpha=self.alpha,
            taps=self.filter_taps(),
            prior=self.prior(),
            settings=self.solver_settings(),
            refresh_every=self.refresh_every,
            dereverb=self.enable_dr,
            ref_channel=self.ref_channel,
        )

    def room_override(self) -> Optional[tuple]:
        dims = (self.room_length, self.room_width, self.room_height)
        if all(value is None for value in dims):
            return None
        return dims
