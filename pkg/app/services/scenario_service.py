import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog
from scipy import signal

from app.models.scenario import MixingSystem, Point, RoomSpec, ScenarioBundle, ScenarioSpec, Segment
from app.models.separation import GgdPrior, SolverSettings
from app.models.signal import Spectrogram, StftConfig
from app.services.room_simulation_service import direct_path_delay, estimate_rt60, image_method_rir
from app.services.separation_service import solve_weighted_ls_filter
from app.utils.error_handling import AudioIOError, ConfigurationError, GeometryError, UsageError
from app.utils.file_utils import ensure_directory, read_audio, read_key_values, write_audio, write_key_values
from app.utils.linalg_utils import stack_history
from app.utils.stft_utils import analyze

logger = structlog.get_logger(__name__)

SEGMENT_NAMES = ("I", "II", "III", "IV")

# Segments in which each source is active.
SOURCE_ACTIVITY = {
    "target": ("II", "III"),
    "interferer": ("I", "II", "III", "IV"),
    "echo": ("III", "IV"),
}
SOURCE_NAMES = tuple(SOURCE_ACTIVITY)

EARLY_REFLECTION_SECONDS = 0.05

# Living-room geometry ranges (meters).
ROOM_RANGE = ((4.0, 3.0, 2.5), (8.0, 6.0, 4.0))
WALL_MARGIN = 0.5
MIC_SPACING = 0.10
LOUDSPEAKER_DROP = 0.15
ARRAY_HEIGHT_RANGE = (0.8, 1.2)
TALKER_HEIGHT_RANGE = (1.2, 1.8)
MIN_SOURCE_DISTANCE = 1.0
PLACEMENT_ATTEMPTS = 1000
# Envelope floor inside pauses, relative to the mean envelope (-60 dB).
PAUSE_FLOOR = 1e-3

METADATA_FILE = "metadata.txt"


def segment_layout(segment_samples: int) -> List[Segment]:
    return [
        Segment(name=name, start=index * segment_samples, stop=(index + 1) * segment_samples)
        for index, name in enumerate(SEGMENT_NAMES)
    ]


def _active_span(segments: Sequence[Segment], source: str) -> tuple:
    names = SOURCE_ACTIVITY[source]
    lookup = {segment.name: segment for segment in segments}
    return lookup[names[0]].start, lookup[names[-1]].stop


def speech_like_source(rng: np.random.Generator, n_samples: int, sample_rate: int = 16000) -> np.ndarray:
    """
    Synthetic speech stand-in.

    Laplacian excitation colored by a spectral tilt and one random formant
    resonance, amplitude-modulated at syllable rate with random pauses
    that keep a -60 dB floor.
    Normalized to unit RMS.

    Args:
        rng: Random generator
        n_samples: Output length
        sample_rate: Sample rate in Hz

    Returns:
        (n_samples,) signal
    """
    excitation = rng.laplace(size=n_samples)
    tilt = rng.uniform(0.85, 0.97)
    colored = signal.lfilter([1.0], [1.0, -tilt], excitation)
    radius = 0.9
    theta = 2.0 * np.pi * rng.uniform(300.0, 3000.0) / sample_rate
    colored = signal.lfilter([1.0 - radius], [1.0, -2.0 * radius * np.cos(theta), radius ** 2], colored) + 0.3 * colored

    # 10 ms envelope grid, smoothed to a few Hz, with 250 ms pauses
    step = max(sample_rate // 100, 1)
    n_steps = n_samples // step + 2
    envelope = signal.lfilter([0.25], [1.0, -0.75], rng.gamma(0.5, 1.0, size=n_steps))
    pauses = np.repeat(rng.random(n_steps // 25 + 1) > 0.25, 25)[:n_steps]
    envelope = envelope * pauses + PAUSE_FLOOR * envelope.mean()
    envelope = np.interp(np.arange(n_samples), np.arange(n_steps) * step, envelope)

    source = colored * envelope
    rms = np.sqrt(np.mean(source ** 2))
    return source / rms if rms > 0 else source


def _uniform_point(rng: np.random.Generator, low: Sequence[float], high: Sequence[float]) -> np.ndarray:
    return rng.uniform(np.asarray(low, dtype=float), np.asarray(high, dtype=float))


def sample_scenario_spec(
    rng: np.random.Generator,
    rt60: float,
    ser_db: float = 0.0,
    sir_db: float = 0.0,
    segment_seconds: float = 5.0,
    sample_rate: int = 16000,
    seed: int = 0,
    room_dimensions: Optional[Sequence[float]] = None,
) -> ScenarioSpec:
    """
    Draw a living-room geometry.

    A two-microphone array with 10 cm spacing at a random azimuth, at least
    50 cm from every wall, the loudspeaker 15 cm below its center, and the
    target and interferer at least 1 m from the array and from each other.

    Args:
        rng: Random generator (consumed before any source material)
        rt60: Reverberation time in seconds
        ser_db: Signal-to-echo ratio of segment III
        sir_db: Signal-to-interference ratio of segment III
        segment_seconds: Length of each of the four segments
        sample_rate: Sample rate in Hz
        seed: Seed recorded in the spec
        room_dimensions: Fixed (length, width, height); drawn when None

    Returns:
        ScenarioSpec
    """
    if room_dimensions is None:
        dims = _uniform_point(rng, *ROOM_RANGE)
    else:
        if len(room_dimensions) != 3 or any(value is None for value in room_dimensions):
            raise ConfigurationError("Room dimensions need length, width and height")
        dims = np.asarray(room_dimensions, dtype=float)
    room = RoomSpec(length=dims[0], width=dims[1], height=dims[2], rt60=rt60, sample_rate=sample_rate)

    half = MIC_SPACING / 2.0
    array_low = np.array([WALL_MARGIN + half, WALL_MARGIN + half, max(ARRAY_HEIGHT_RANGE[0], WALL_MARGIN + LOUDSPEAKER_DROP)])
    array_high = np.array([dims[0] - WALL_MARGIN - half, dims[1] - WALL_MARGIN - half, min(ARRAY_HEIGHT_RANGE[1], dims[2] - WALL_MARGIN)])
    talker_low = np.array([WALL_MARGIN, WALL_MARGIN, TALKER_HEIGHT_RANGE[0]])
    talker_high = np.array([dims[0] - WALL_MARGIN, dims[1] - WALL_MARGIN, min(TALKER_HEIGHT_RANGE[1], dims[2] - WALL_MARGIN)])
    if np.any(array_high <= array_low) or np.any(talker_high <= talker_low):
        raise GeometryError("Room is too small for the array and talker margins", room=dims.tolist())

    center = _uniform_point(rng, array_low, array_high)
    azimuth = rng.uniform(0.0, np.pi)
    axis = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    mics = [center - half * axis, center + half * axis]
    loudspeaker = center - np.array([0.0, 0.0, LOUDSPEAKER_DROP])

    talkers = []
    for _ in range(PLACEMENT_ATTEMPTS):
        candidate = _uniform_point(rng, talker_low, talker_high)
        if np.linalg.norm(candidate - center) < MIN_SOURCE_DISTANCE:
            continue
        if any(np.linalg.norm(candidate - other) < MIN_SOURCE_DISTANCE for other in talkers):
            continue
        talkers.append(candidate)
        if len(talkers) == 2:
            break
    if len(talkers) < 2:
        raise GeometryError("Could not place two talkers with the required spacing", room=dims.tolist())

    return ScenarioSpec(
        room=room,
        mic_positions=[tuple(point) for point in mics],
        loudspeaker_position=tuple(loudspeaker),
        target_position=tuple(talkers[0]),
        interferer_position=tuple(talkers[1]),
        ser_db=ser_db,
        sir_db=sir_db,
        segment_seconds=segment_seconds,
        seed=seed,
    )


def _rirs(room: RoomSpec, src: Point, mics: Sequence[Point]) -> np.ndarray:
    return np.stack([image_method_rir(room, src, mic) for mic in mics])


def build_mixing_system(spec: ScenarioSpec) -> MixingSystem:
    """Image-method RIRs from the target, interferer and loudspeaker to both microphones."""
    mixing = MixingSystem(
        rir_target=_rirs(spec.room, spec.target_position, spec.mic_positions),
        rir_interferer=_rirs(spec.room, spec.interferer_position, spec.mic_positions),
        rir_echo=_rirs(spec.room, spec.loudspeaker_position, spec.mic_positions),
        target_direct_delay=direct_path_delay(spec.target_position, spec.mic_positions[0], spec.room.sample_rate),
    )
    logger.info(
        "Built mixing system",
        rt60=spec.room.rt60,
        rir_samples=mixing.rir_target.shape[-1],
        measured_rt60=round(estimate_rt60(mixing.rir_target[0], spec.room.sample_rate), 3),
    )
    return mixing


def _convolve(dry: np.ndarray, rir: np.ndarray, onset: int) -> np.ndarray:
    """Causal convolution truncated to the dry length; samples before the source onset are exactly zero."""
    wet = signal.fftconvolve(dry, rir)[: dry.size]
    wet[:onset] = 0.0
    return wet


def _image(dry: np.ndarray, rirs: np.ndarray, onset: int) -> np.ndarray:
    return np.stack([_convolve(dry, rir, onset) for rir in rirs])


def _segment_energy(values: np.ndarray, segment: Segment) -> float:
    return float(np.sum(values[segment.slice] ** 2))


def synthesize_scenario(
    spec: ScenarioSpec,
    sources: Dict[str, np.ndarray],
    mixing: Optional[MixingSystem] = None,
) -> ScenarioBundle:
    """
    Mix gated sources through the room.

    Each source is placed in its active segments (target II-III, interferer
    I-IV, echo III-IV) and convolved with its RIRs. The interferer and echo
    images are scaled so that their segment-III energies at microphone 1
    sit sir_db and ser_db below the reverberant target image.

    Args:
        spec: Scenario description
        sources: Dry "target", "interferer" and "echo" signals
        mixing: Precomputed RIRs; built from the spec when None

    Returns:
        ScenarioBundle
    """
    segment_samples = spec.segment_samples
    segments = segment_layout(segment_samples)
    total = 4 * segment_samples
    mixing = mixing or build_mixing_system(spec)

    gated = {}
    onsets = {}
    for name in SOURCE_NAMES:
        if name not in sources:
            raise UsageError(f"Missing source signal '{name}'")
        start, stop = _active_span(segments, name)
        audio = np.asarray(sources[name], dtype=float).ravel()
        if audio.size < stop - start:
            raise ConfigurationError(
                f"Source '{name}' is shorter than its active segments",
                samples=audio.size,
                required=stop - start,
            )
        gated[name] = np.zeros(total)
        gated[name][start:stop] = audio[: stop - start]
        onsets[name] = start

    images = {
        "target": _image(gated["target"], mixing.rir_target, onsets["target"]),
        "interferer": _image(gated["interferer"], mixing.rir_interferer, onsets["interferer"]),
        "echo": _image(gated["echo"], mixing.rir_echo, onsets["echo"]),
    }

    overlap = segments[2]
    target_energy = _segment_energy(images["target"][0], overlap)
    if target_energy <= 0.0:
        raise ConfigurationError("Target is silent in the overlap segment")

    def calibrate(name: str, ratio_db: float, muted: bool) -> float:
        if muted:
            return 0.0
        energy = _segment_energy(images[name][0], overlap)
        if energy <= 0.0:
            raise ConfigurationError(f"Source '{name}' is silent in the overlap segment")
        return float(np.sqrt(target_energy / (energy * 10.0 ** (ratio_db / 10.0))))

    interferer_gain = calibrate("interferer", spec.sir_db, spec.mute_interferer)
    echo_gain = calibrate("echo", spec.ser_db, spec.mute_echo)
    stems = {
        "target": images["target"],
        "interferer": interferer_gain * images["interferer"],
        "echo": echo_gain * images["echo"],
    }
    mic_signals = stems["target"] + stems["interferer"] + stems["echo"]

    early = mixing.rir_target[0][: mixing.target_direct_delay + int(EARLY_REFLECTION_SECONDS * spec.room.sample_rate) + 1]
    reference = _convolve(gated["target"], early, onsets["target"])

    logger.info(
        "Synthesized scenario",
        seed=spec.seed,
        rt60=spec.room.rt60,
        ser_db=spec.ser_db,
        sir_db=spec.sir_db,
        samples=total,
        interferer_gain=round(interferer_gain, 6),
        echo_gain=round(echo_gain, 6),
    )
    return ScenarioBundle(
        spec=spec,
        mic_signals=mic_signals,
        farend_reference=echo_gain * gated["echo"],
        groundtruth_target_early=reference,
        segments=segments,
        stems=stems,
        mixing=mixing,
    )


def build_living_room_scenario(
    seed: int,
    rt60: float = 0.3,
    ser_db: float = 0.0,
    sir_db: float = 0.0,
    segment_seconds: float = 5.0,
    sample_rate: int = 16000,
    room_dimensions: Optional[Sequence[float]] = None,
    source_files: Optional[Dict[str, str]] = None,
) -> ScenarioBundle:
    """
    Seeded living-room scenario: one generator draws the geometry first and then the sources.

    Args:
        seed: Seed of the scenario generator
        rt60: Reverberation time in seconds
        ser_db: Signal-to-echo ratio in dB
        sir_db: Signal-to-interference ratio in dB
        segment_seconds: Segment length in seconds
        sample_rate: Sample rate in Hz
        room_dimensions: Fixed room size; drawn when None
        source_files: Optional WAV paths per source name replacing the synthetic material

    Returns:
        ScenarioBundle
    """
    rng = np.random.default_rng(seed)
    spec = sample_scenario_spec(rng, rt60, ser_db, sir_db, segment_seconds, sample_rate, seed, room_dimensions)
    n_samples = 4 * spec.segment_samples
    sources = {name: speech_like_source(rng, n_samples, sample_rate) for name in SOURCE_NAMES}
    for name, path in (source_files or {}).items():
        if path:
            sources[name] = load_source_file(path, sample_rate)
    return synthesize_scenario(spec, sources)


def load_source_file(path: str, sample_rate: int) -> np.ndarray:
    audio, file_rate = read_audio(path)
    if file_rate != sample_rate:
        raise AudioIOError(f"Source file {path} has sample rate {file_rate}, expected {sample_rate}")
    return audio[0]


def ctf_mix(sources: Spectrogram, ctf: np.ndarray, taps: int) -> Spectrogram:
    """
    Exact per-bin convolutive transfer function mixing x(t) = sum_l A_l s(t - l).

    Args:
        sources: N-channel source spectrogram
        ctf: (bins, taps, M, N) filter sequences
        taps: Number of CTF taps

    Returns:
        M-channel mixture spectrogram
    """
    if taps < 1:
        raise ConfigurationError("CTF needs at least one tap", taps=taps)
    A = np.asarray(ctf, dtype=np.complex128)
    if A.ndim != 4 or A.shape[0] != sources.n_bins or A.shape[1] != taps or A.shape[3] != sources.n_channels:
        raise UsageError(
            "CTF dimensions do not match the sources",
            ctf=list(A.shape),
            bins=sources.n_bins,
            taps=taps,
            sources=sources.n_channels,
        )
    n_bins, _, n_mics, n_sources = A.shape
    history = stack_history(sources.bin_major(), taps, 0)
    mixing = A.transpose(0, 2, 1, 3).reshape(n_bins, n_mics, taps * n_sources)
    return Spectrogram.from_bin_major(history @ mixing.transpose(0, 2, 1), sources.config, sources.n_samples)


def estimate_ctf(
    rir: np.ndarray,
    cfg: StftConfig = StftConfig(),
    taps: int = 5,
    seed: int = 0,
    excitation_frames: int = 400,
) -> np.ndarray:
    """
    Fit per-bin CTF taps to time-domain RIRs by least squares on a white excitation.

    Args:
        rir: (mics, samples) impulse responses of one source
        cfg: STFT configuration
        taps: Number of CTF taps
        seed: Excitation generator seed
        excitation_frames: Excitation length in hops

    Returns:
        (bins, taps, mics, 1) CTF
    """
    rirs = np.atleast_2d(rir)
    rng = np.random.default_rng(seed)
    n_excitation = excitation_frames * cfg.hop + rirs.shape[-1]
    excitation = rng.standard_normal(n_excitation)
    images = _image(excitation, rirs, 0)

    P = analyze(excitation, cfg).bin_major()
    X = analyze(images, cfg).bin_major()
    G = solve_weighted_ls_filter(X, stack_history(P, taps, 0), GgdPrior(gamma=2.0), settings=SolverSettings(diag_load=0.0))
    n_bins, n_mics, _ = G.shape
    return (-G).reshape(n_bins, n_mics, taps, 1).transpose(0, 2, 1, 3)


def attach_ctfs(bundle: ScenarioBundle, cfg: StftConfig = StftConfig(), taps: int = 5) -> MixingSystem:
    """Fill ctf_A (target, interferer) and ctf_B (loudspeaker) of the bundle's mixing system."""
    if bundle.mixing is None:
        raise UsageError("Scenario has no mixing system to fit")
    mixing = bundle.mixing
    near_end = [estimate_ctf(mixing.rir_target, cfg, taps), estimate_ctf(mixing.rir_interferer, cfg, taps)]
    mixing.ctf_A = np.concatenate(near_end, axis=-1)
    mixing.ctf_B = estimate_ctf(mixing.rir_echo, cfg, taps)
    return mixing


class ScenarioService:
    """Reads and writes scenario directories."""

    def save(self, bundle: ScenarioBundle, directory: str, subtype: str = "FLOAT") -> Dict[str, str]:
        """
        Write mic.wav, farend.wav, ref_early.wav, stems/*.wav and metadata.txt.

        Args:
            bundle: Scenario to write
            directory: Destination directory
            subtype: WAV sample format

        Returns:
            Mapping of artifact name to path
        """
        root = ensure_directory(directory)
        fs = bundle.sample_rate
        paths = {
            "mic": write_audio(root / "mic.wav", bundle.mic_signals, fs, subtype),
            "farend": write_audio(root / "farend.wav", bundle.farend_reference, fs, subtype),
            "ref_early": write_audio(root / "ref_early.wav", bundle.groundtruth_target_early, fs, subtype),
        }
        for name, stem in bundle.stems.items():
            paths[f"stem_{name}"] = write_audio(root / "stems" / f"{name}.wav", stem, fs, subtype)

        spec = bundle.spec
        metadata = {
            "SEED": spec.seed,
            "SAMPLE_RATE": fs,
            "RT60": spec.room.rt60,
            "SER_DB": spec.ser_db,
            "SIR_DB": spec.sir_db,
            "ROOM": ",".join(f"{value:.4f}" for value in spec.room.dimensions),
            "SEGMENT_SECONDS": spec.segment_seconds,
        }
        for segment in bundle.segments:
            metadata[f"SEGMENT_{segment.name}"] = f"{segment.start},{segment.stop}"
        metadata["SCENARIO_SPEC"] = json.dumps(spec.model_dump(mode="json"), separators=(",", ":"))
        paths["metadata"] = write_key_values(root / METADATA_FILE, metadata)
        logger.info("Saved scenario", directory=str(root), seed=spec.seed)
        return paths

    def load(self, directory: str) -> ScenarioBundle:
        root = Path(directory)
        metadata = read_key_values(root / METADATA_FILE)
        try:
            spec = ScenarioSpec.model_validate_json(metadata["SCENARIO_SPEC"])
            segments = [
                Segment(name=name, start=int(bounds[0]), stop=int(bounds[1]))
                for name in SEGMENT_NAMES
                for bounds in [metadata[f"SEGMENT_{name}"].split(",")]
            ]
        except (KeyError, ValueError, AttributeError) as e:
            raise AudioIOError(f"Malformed scenario metadata in {root}: {e}")

        mic, _ = read_audio(root / "mic.wav")
        farend, _ = read_audio(root / "farend.wav")
        reference, _ = read_audio(root / "ref_early.wav")
        stems = {}
        for path in sorted((root / "stems").glob("*.wav")):
            stems[path.stem], _ = read_audio(path)
        return ScenarioBundle(
            spec=spec,
            mic_signals=mic,
            farend_reference=farend[0],
            groundtruth_target_early=reference[0],
            segments=segments,
            stems=stems,
        )


# Global scenario service instance
scenario_service = ScenarioService()
