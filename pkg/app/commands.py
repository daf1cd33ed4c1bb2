import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import structlog

from app import create_app
from app.decorators.manifest import MANIFEST_FILE, records_manifest
from app.models.metrics import MetricsReport
from app.models.run import RunConfig
from app.models.separation import Algorithm, Mode
from app.services.benchmark_service import benchmark_service
from app.services.metrics_service import metrics_service, render_checks, render_report, render_tables, reports_frame
from app.services.pipeline_service import process
from app.services.reproduction_service import reproduction_service
from app.services.scenario_service import build_living_room_scenario, scenario_service
from app.templates.report_templates import SEPARATE_SUMMARY, SIMULATE_SUMMARY
from app.utils.error_handling import AudioIOError, SeparationError, UsageError, exit_code_for
from app.utils.file_utils import ensure_directory, load_demix_state, read_audio, read_key_values, save_demix_state, write_audio
from app.utils.stft_utils import analyze, synthesize
from app.utils.validation_utils import validate_equal_lengths

logger = structlog.get_logger(__name__)

SEPARATED_PATTERN = "separated_*.wav"
DEMIX_FILE = "demix.npz"
METRICS_CSV = "metrics.csv"

# CLI flag destination -> RunConfig field
FLAG_FIELDS = {
    "algorithm": "algorithm",
    "mode": "mode",
    "rt60": "rt60",
    "ser": "ser_db",
    "seed": "seed",
    "taps_aec": "taps_aec",
    "taps_dr": "taps_dr",
    "delta": "delta",
    "gamma": "gamma",
    "alpha": "alpha",
    "iters": "iters",
    "output_dir": "output_dir",
    "num_seeds": "num_seeds",
    "workers": "workers",
    "log_level": "log_level",
}


@records_manifest("simulate")
def cmd_simulate(config: RunConfig) -> Dict[str, str]:
    """Synthesize one scenario into OUTPUT_DIR."""
    sources = {"target": config.target_wav, "interferer": config.interferer_wav, "echo": config.echo_wav}
    scenario = build_living_room_scenario(
        config.seed,
        config.rt60,
        config.ser_db,
        config.sir_db,
        config.segment_seconds,
        config.sample_rate,
        config.room_override(),
        sources,
    )
    paths = scenario_service.save(scenario, config.output_dir)
    print(
        SIMULATE_SUMMARY.format(
            seed=config.seed,
            rt60=config.rt60,
            ser_db=config.ser_db,
            seconds=scenario.n_samples / scenario.sample_rate,
            channels=scenario.mic_signals.shape[0],
            output_dir=config.output_dir,
        )
    )
    return paths


def _read_input(path: str, config: RunConfig) -> np.ndarray:
    audio, sample_rate = read_audio(path)
    if sample_rate != config.sample_rate:
        raise UsageError(f"{path} has sample rate {sample_rate} Hz, expected {config.sample_rate} Hz")
    return audio


@records_manifest("separate")
def cmd_separate(
    config: RunConfig,
    mixture_path: str,
    farend_path: Optional[str] = None,
    warm_start: Optional[str] = None,
) -> Dict[str, str]:
    """
    Separate a microphone recording and write separated_<n>.wav files.

    Batch runs also save the final demixing state to demix.npz.
    """
    mixture = _read_input(mixture_path, config)
    farend = None
    if farend_path:
        farend = _read_input(farend_path, config)
        validate_equal_lengths([mixture.shape[-1], farend.shape[-1]], "mixture and far-end files")

    stft = config.stft_config()
    x = analyze(mixture, stft)
    r = analyze(farend, stft) if farend is not None else None
    initial = load_demix_state(warm_start) if warm_start else None

    start_time = time.perf_counter()
    estimate, demix = process(x, r, config, initial_demix=initial)
    separated = synthesize(estimate)
    elapsed = time.perf_counter() - start_time

    output_dir = ensure_directory(config.output_dir)
    paths = {}
    for index, channel in enumerate(separated):
        paths[f"separated_{index}"] = write_audio(output_dir / f"separated_{index}.wav", channel, config.sample_rate)
    if demix is not None:
        paths["demix"] = save_demix_state(output_dir / DEMIX_FILE, demix)
    print(
        SEPARATE_SUMMARY.format(
            sources=separated.shape[0],
            algorithm=config.algorithm.value,
            mode=config.mode.value,
            elapsed=elapsed,
            output_dir=config.output_dir,
        )
    )
    return paths


def _separated_algorithm(separated_dir: Path, config: RunConfig) -> str:
    manifest = separated_dir / MANIFEST_FILE
    if manifest.is_file():
        return read_key_values(manifest).get("ALGORITHM") or config.algorithm.value
    return config.algorithm.value


@records_manifest("evaluate")
def cmd_evaluate(config: RunConfig, separated_dir: str, scenario_dir: str) -> MetricsReport:
    """
    Score separated_*.wav against a scenario directory.

    Writes report_<algorithm>.txt and appends to metrics.csv in OUTPUT_DIR,
    then refreshes the aggregate tables over every row of metrics.csv.
    """
    scenario = scenario_service.load(scenario_dir)
    folder = Path(separated_dir)
    files = sorted(folder.glob(SEPARATED_PATTERN))
    if not files:
        raise AudioIOError(f"No {SEPARATED_PATTERN} files in {separated_dir}")
    channels = [read_audio(path)[0][0] for path in files]
    validate_equal_lengths([channel.size for channel in channels], "separated files")

    algorithm = _separated_algorithm(folder, config)
    report = metrics_service.evaluate(np.stack(channels), scenario, algorithm)

    output_dir = ensure_directory(config.output_dir)
    (output_dir / f"report_{algorithm}.txt").write_text(render_report(report))
    csv_path = output_dir / METRICS_CSV
    frame = reports_frame([report])
    if csv_path.is_file():
        frame = pd.concat([pd.read_csv(csv_path), frame], ignore_index=True)
        frame = frame.drop_duplicates(subset=["algorithm", "rt60", "ser_db", "seed"], keep="last")
    frame.to_csv(csv_path, index=False)

    reports = [MetricsReport.model_validate(row) for row in json.loads(frame.to_json(orient="records"))]
    metrics_service.write_tables(metrics_service.aggregate_reports(reports), str(output_dir))
    print(render_report(report))
    return report


@records_manifest("bench")
def cmd_bench(config: RunConfig) -> pd.DataFrame:
    """Time the algorithms and write bench.csv / bench.txt."""
    table = benchmark_service.run(config)
    output_dir = ensure_directory(config.output_dir)
    table.to_csv(output_dir / "bench.csv", index=False)
    text = benchmark_service.render(table, config)
    (output_dir / "bench.txt").write_text(text + "\n")
    print(text)
    return table


@records_manifest("reproduce")
def cmd_reproduce(config: RunConfig) -> Dict[str, pd.DataFrame]:
    """Run the seed x RT60 x SER grid and write the improvement tables."""
    reports, tables, checks = reproduction_service.run(config)
    output_dir = ensure_directory(config.output_dir)
    reports_frame(reports).to_csv(output_dir / "reports.csv", index=False)
    metrics_service.write_tables(tables, str(output_dir), checks)
    print(render_tables(tables))
    print(render_checks(checks))
    return tables


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run.py", description="Joint echo cancellation, dereverberation and source separation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=value config file")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--algorithm", choices=[algorithm.value for algorithm in Algorithm], type=str.upper)
    common.add_argument("--mode", choices=[mode.value for mode in Mode], type=str.lower)
    common.add_argument("--rt60", type=float)
    common.add_argument("--ser", type=float, help="signal-to-echo ratio in dB")
    common.add_argument("--seed", type=int)
    common.add_argument("--taps-aec", dest="taps_aec", type=int)
    common.add_argument("--taps-dr", dest="taps_dr", type=int)
    common.add_argument("--delta", type=int)
    common.add_argument("--gamma", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--no-aec", dest="no_aec", action="store_true", help="disable echo cancellation")
    common.add_argument("--no-dr", dest="no_dr", action="store_true", help="disable dereverberation")
    common.add_argument("--log-level", dest="log_level")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="synthesize a scenario directory")
    separate_parser = commands.add_parser("separate", parents=[common], help="separate a recording")
    separate_parser.add_argument("mixture")
    separate_parser.add_argument("farend", nargs="?")
    separate_parser.add_argument("--warm-start", dest="warm_start", help="demix.npz of a previous batch run")
    evaluate_parser = commands.add_parser("evaluate", parents=[common], help="score separated files")
    evaluate_parser.add_argument("separated_dir")
    evaluate_parser.add_argument("scenario_dir")
    commands.add_parser("bench", parents=[common], help="time the algorithms")
    reproduce_parser = commands.add_parser("reproduce", parents=[common], help="run the full experiment grid")
    reproduce_parser.add_argument("--num-seeds", dest="num_seeds", type=int)
    reproduce_parser.add_argument("--workers", type=int)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {field: getattr(args, flag, None) for flag, field in FLAG_FIELDS.items()}
    if getattr(args, "no_aec", False):
        overrides["enable_aec"] = False
    if getattr(args, "no_dr", False):
        overrides["enable_dr"] = False
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line entry point.

    Returns:
        Exit code: 0 success, 1 unexpected, 2 usage or configuration,
        3 numerical, 4 audio or file I/O
    """
    args = build_parser().parse_args(argv)
    try:
        config = create_app(args.config, overrides_from_args(args))
        if args.command == "simulate":
            cmd_simulate(config)
        elif args.command == "separate":
            cmd_separate(config, args.mixture, args.farend, args.warm_start)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.separated_dir, args.scenario_dir)
        elif args.command == "bench":
            cmd_bench(config)
        elif args.command == "reproduce":
            cmd_reproduce(config)
    except SeparationError as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.error("Unexpected failure", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0
