import time
from typing import List, Tuple

import numpy as np
import pandas as pd
import structlog

from app.models.run import RunConfig
from app.models.separation import Algorithm, COMPARED_ALGORITHMS
from app.models.signal import Spectrogram
from app.services.pipeline_service import process
from app.templates.report_templates import BENCH_HEADER, BENCH_SLOPE

logger = structlog.get_logger(__name__)


class BenchmarkService:
    """Wall-clock comparison of the algorithms on identical synthetic input."""

    def synthetic_input(self, config: RunConfig, channels: int) -> Tuple[Spectrogram, Spectrogram]:
        """
        Random complex spectrograms of BENCH_SECONDS length, seeded by SEED.

        Returns:
            (microphones, far end)
        """
        rng = np.random.default_rng(config.seed)
        stft = config.stft_config()
        frames = int(np.ceil(config.bench_seconds * config.sample_rate / config.hop))
        shape = (channels, frames, stft.n_bins)
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        r = rng.standard_normal((1,) + shape[1:]) + 1j * rng.standard_normal((1,) + shape[1:])
        return Spectrogram(data=x, config=stft), Spectrogram(data=r, config=stft)

    def time_algorithm(self, x: Spectrogram, r: Spectrogram, config: RunConfig, algorithm: Algorithm) -> float:
        """
        Median wall time of BENCH_REPEATS runs after BENCH_WARMUP discarded runs.
        """
        for _ in range(config.bench_warmup):
            process(x, r, config, algorithm, config.bench_mode)
        timings = []
        for _ in range(config.bench_repeats):
            start_time = time.perf_counter()
            process(x, r, config, algorithm, config.bench_mode)
            timings.append(time.perf_counter() - start_time)
        return float(np.median(timings))

    def run(self, config: RunConfig) -> pd.DataFrame:
        """
        Time every algorithm over the (channels, L2) sweep.

        Returns:
            Table with one row per (channels, taps_dr, algorithm) holding the
            median seconds and the ratio to Joint-SS at the same point; the
            Joint-SS log-log slope against the stacked size is in
            ``attrs["joint_slope"]``
        """
        algorithms: List[Algorithm] = list(COMPARED_ALGORITHMS)
        rows = []
        for channels in config.bench_channels:
            x, r = self.synthetic_input(config, channels)
            for taps_dr in config.bench_taps_dr:
                point = config.model_copy(update={"taps_dr": taps_dr})
                stacked = point.filter_taps().stacked_size(channels, 1, point.enable_dr)
                seconds = {algorithm: self.time_algorithm(x, r, point, algorithm) for algorithm in algorithms}
                for algorithm in algorithms:
                    rows.append(
                        {
                            "channels": channels,
                            "taps_aec": point.taps_aec,
                            "taps_dr": taps_dr,
                            "stacked_size": stacked,
                            "algorithm": algorithm.value,
                            "seconds": seconds[algorithm],
                            "ratio_to_joint": seconds[algorithm] / seconds[Algorithm.JOINT_SS],
                        }
                    )
                    logger.info("Benchmark point", channels=channels, taps_dr=taps_dr, algorithm=algorithm.value, seconds=round(seconds[algorithm], 4))

        table = pd.DataFrame(rows)
        table.attrs["joint_slope"] = self.joint_slope(table)
        table.attrs["frames"] = x.n_frames
        return table

    def joint_slope(self, table: pd.DataFrame) -> float:
        """Slope of log(time) against log(L) for Joint-SS; NaN with fewer than two sizes."""
        joint = table[table["algorithm"] == Algorithm.JOINT_SS.value]
        if joint["stacked_size"].nunique() < 2:
            return float("nan")
        slope, _ = np.polyfit(np.log(joint["stacked_size"]), np.log(joint["seconds"]), 1)
        return float(slope)

    def render(self, table: pd.DataFrame, config: RunConfig) -> str:
        header = BENCH_HEADER.format(repeats=config.bench_repeats, mode=config.bench_mode.value, frames=table.attrs.get("frames", 0))
        body = table.to_string(index=False, float_format=lambda value: f"{value:.4f}")
        return "\n".join([header, body, BENCH_SLOPE.format(slope=table.attrs.get("joint_slope", float("nan")))])


# Global benchmark service instance
benchmark_service = BenchmarkService()
