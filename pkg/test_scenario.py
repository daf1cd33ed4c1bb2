import numpy as np
import pytest

from app.models.scenario import RoomSpec
from app.models.signal import Spectrogram, StftConfig
from app.services.room_simulation_service import (
    SPEED_OF_SOUND,
    calibrated_absorption,
    direct_path_delay,
    estimate_rt60,
    image_method_rir,
)
from app.services.scenario_service import (
    attach_ctfs,
    build_living_room_scenario,
    ctf_mix,
    estimate_ctf,
    sample_scenario_spec,
    scenario_service,
    speech_like_source,
    synthesize_scenario,
)
from app.utils.error_handling import ConfigurationError, GeometryError, UsageError


@pytest.fixture(scope="module")
def small_scenario():
    return build_living_room_scenario(seed=1, rt60=0.3, segment_seconds=0.5)


def shoebox(rt60=0.3):
    return RoomSpec(length=5.0, width=4.0, height=3.0, rt60=rt60)


def segment_energy_db(values, segment):
    return 10.0 * np.log10(np.sum(values[segment.slice] ** 2))


def test_source_at_microphone_is_rejected():
    with pytest.raises(GeometryError):
        image_method_rir(shoebox(), (2.0, 2.0, 1.5), (2.0, 2.0, 1.5))


def test_position_outside_room_is_rejected():
    with pytest.raises(GeometryError):
        image_method_rir(shoebox(), (6.0, 2.0, 1.5), (2.0, 2.0, 1.5))


def test_unreachable_rt60_is_rejected():
    room = RoomSpec(length=8.0, width=6.0, height=4.0, rt60=0.05)
    with pytest.raises(GeometryError):
        image_method_rir(room, (2.0, 2.0, 1.5), (4.0, 3.0, 1.2))


def test_anechoic_response_is_single_impulse():
    room = shoebox()
    src, mic = (1.0, 1.5, 1.2), (3.5, 2.5, 1.4)
    rir = image_method_rir(room, src, mic, absorption=1.0)
    distance = np.linalg.norm(np.subtract(src, mic))
    delay = int(np.floor(distance * room.sample_rate / SPEED_OF_SOUND))

    assert rir.size >= int(np.ceil(room.rt60 * room.sample_rate))
    np.testing.assert_array_equal(np.flatnonzero(rir), [delay])
    assert rir[delay] == pytest.approx(1.0 / (4.0 * np.pi * distance))
    assert direct_path_delay(src, mic, room.sample_rate) == delay


@pytest.mark.parametrize("rt60", [0.3, 0.6, 0.8])
def test_reverberant_response_decays_at_requested_rate(rt60):
    room = RoomSpec(length=6.0, width=4.5, height=3.0, rt60=rt60)
    rir = image_method_rir(room, (1.2, 1.1, 1.5), (3.4, 2.6, 1.2))
    assert estimate_rt60(rir, room.sample_rate) == pytest.approx(rt60, rel=0.2)


def test_calibrated_absorption_is_cached_and_decreases_with_rt60():
    short = calibrated_absorption(RoomSpec(length=6.0, width=4.5, height=3.0, rt60=0.3))
    long = calibrated_absorption(RoomSpec(length=6.0, width=4.5, height=3.0, rt60=0.8))
    assert 0.0 < long < short < 1.0
    assert calibrated_absorption(RoomSpec(length=6.0, width=4.5, height=3.0, rt60=0.3)) == short


def test_sampled_geometry_follows_layout():
    rng = np.random.default_rng(5)
    spec = sample_scenario_spec(rng, rt60=0.3)
    dims = spec.room.dimensions
    mics = np.asarray(spec.mic_positions)
    center = mics.mean(axis=0)

    assert np.all(dims >= [4.0, 3.0, 2.5]) and np.all(dims <= [8.0, 6.0, 4.0])
    assert np.linalg.norm(mics[0] - mics[1]) == pytest.approx(0.10)
    assert np.all(mics >= 0.5 - 1e-9) and np.all(mics <= dims - 0.5 + 1e-9)
    np.testing.assert_allclose(spec.loudspeaker_position, center - [0.0, 0.0, 0.15])
    for talker in (spec.target_position, spec.interferer_position):
        assert np.linalg.norm(np.subtract(talker, center)) >= 1.0
    assert np.linalg.norm(np.subtract(spec.target_position, spec.interferer_position)) >= 1.0


def test_speech_like_source_has_unit_rms():
    source = speech_like_source(np.random.default_rng(6), 16000)
    assert np.sqrt(np.mean(source ** 2)) == pytest.approx(1.0)


def test_overlap_segment_is_calibrated(small_scenario):
    overlap = small_scenario.segment("III")
    target = segment_energy_db(small_scenario.stems["target"][0], overlap)
    interferer = segment_energy_db(small_scenario.stems["interferer"][0], overlap)
    echo = segment_energy_db(small_scenario.stems["echo"][0], overlap)
    assert abs(target - interferer) <= 0.1
    assert abs(target - echo) <= 0.1


def test_echo_calibration_follows_ser():
    scenario = build_living_room_scenario(seed=2, rt60=0.3, ser_db=-10.0, segment_seconds=0.5)
    overlap = scenario.segment("III")
    target = segment_energy_db(scenario.stems["target"][0], overlap)
    echo = segment_energy_db(scenario.stems["echo"][0], overlap)
    assert target - echo == pytest.approx(-10.0, abs=0.1)


def test_microphones_carry_sum_of_stems(small_scenario):
    stems = small_scenario.stems
    np.testing.assert_array_equal(small_scenario.mic_signals, stems["target"] + stems["interferer"] + stems["echo"])
    assert small_scenario.mic_signals.shape == (2, 4 * 8000)


def test_sources_are_gated_to_their_segments(small_scenario):
    first = small_scenario.segment("I")
    assert not np.any(small_scenario.stems["target"][:, first.slice])
    assert not np.any(small_scenario.stems["echo"][:, first.slice])
    assert not np.any(small_scenario.groundtruth_target_early[first.slice])


def test_muted_sources_leave_target_image(small_scenario):
    spec = small_scenario.spec.model_copy(update={"mute_interferer": True, "mute_echo": True})
    rng = np.random.default_rng(7)
    sources = {name: rng.standard_normal(4 * 8000) for name in ("target", "interferer", "echo")}
    bundle = synthesize_scenario(spec, sources, small_scenario.mixing)
    second = bundle.segment("II")
    np.testing.assert_array_equal(bundle.mic_signals[:, second.slice], bundle.stems["target"][:, second.slice])
    assert not np.any(bundle.farend_reference)


def test_same_seed_is_bit_identical():
    first = build_living_room_scenario(seed=3, rt60=0.3, segment_seconds=0.25)
    second = build_living_room_scenario(seed=3, rt60=0.3, segment_seconds=0.25)
    np.testing.assert_array_equal(first.mic_signals, second.mic_signals)
    np.testing.assert_array_equal(first.farend_reference, second.farend_reference)
    assert first.spec == second.spec


def test_short_source_is_rejected(small_scenario):
    sources = {"target": np.ones(10), "interferer": np.ones(4 * 8000), "echo": np.ones(4 * 8000)}
    with pytest.raises(ConfigurationError):
        synthesize_scenario(small_scenario.spec, sources, small_scenario.mixing)


def test_missing_source_is_rejected(small_scenario):
    with pytest.raises(UsageError):
        synthesize_scenario(small_scenario.spec, {"target": np.ones(4 * 8000)}, small_scenario.mixing)


def random_sources(rng, channels=2, frames=20, bins=6):
    data = rng.standard_normal((channels, frames, bins)) + 1j * rng.standard_normal((channels, frames, bins))
    return Spectrogram(data=data)


def test_ctf_mix_identity():
    sources = random_sources(np.random.default_rng(8))
    ctf = np.tile(np.eye(2), (6, 1, 1, 1))
    np.testing.assert_allclose(ctf_mix(sources, ctf, 1).data, sources.data)


def test_ctf_mix_single_tap_is_matrix_product():
    rng = np.random.default_rng(9)
    sources = random_sources(rng)
    A0 = rng.standard_normal((6, 2, 2)) + 1j * rng.standard_normal((6, 2, 2))
    mixed = ctf_mix(sources, A0[:, None], 1).bin_major()
    expected = np.einsum("fmn,ftn->ftm", A0, sources.bin_major())
    np.testing.assert_allclose(mixed, expected, atol=1e-12)


def test_ctf_mix_matches_frame_convolution():
    rng = np.random.default_rng(10)
    sources = random_sources(rng, channels=1)
    taps = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    mixed = ctf_mix(sources, taps[:, :, None, None], 3).bin_major()[:, :, 0]
    s = sources.bin_major()[:, :, 0]
    for f in range(6):
        expected = np.convolve(s[f], taps[f])[: s.shape[1]]
        np.testing.assert_allclose(mixed[f], expected, atol=1e-12)


def test_ctf_mix_rejects_mismatched_dimensions():
    sources = random_sources(np.random.default_rng(11))
    with pytest.raises(UsageError):
        ctf_mix(sources, np.zeros((6, 1, 2, 3)), 1)
    with pytest.raises(ConfigurationError):
        ctf_mix(sources, np.zeros((6, 1, 2, 2)), 0)


def test_estimated_ctf_of_unit_impulse_is_identity():
    cfg = StftConfig(frame_size=64, hop=32)
    ctf = estimate_ctf(np.array([[1.0]]), cfg, taps=3, excitation_frames=100)
    assert ctf.shape == (cfg.n_bins, 3, 1, 1)
    np.testing.assert_allclose(ctf[:, 0, 0, 0], 1.0, atol=1e-6)
    np.testing.assert_allclose(ctf[:, 1:], 0.0, atol=1e-6)


def test_attach_ctfs_fills_mixing_system():
    scenario = build_living_room_scenario(seed=2, rt60=0.3, segment_seconds=0.25)
    cfg = StftConfig(frame_size=64, hop=32)
    mixing = attach_ctfs(scenario, cfg, taps=2)
    assert mixing.ctf_A.shape == (cfg.n_bins, 2, 2, 2)
    assert mixing.ctf_B.shape == (cfg.n_bins, 2, 2, 1)
    assert np.all(np.isfinite(mixing.ctf_A))

    with pytest.raises(UsageError):
        attach_ctfs(scenario.model_copy(update={"mixing": None}), cfg)


def test_scenario_directory_round_trip(small_scenario, tmp_path):
    paths = scenario_service.save(small_scenario, str(tmp_path))
    for name in ("mic", "farend", "ref_early", "metadata", "stem_target"):
        assert name in paths

    loaded = scenario_service.load(str(tmp_path))
    assert loaded.spec == small_scenario.spec
    assert loaded.segments == small_scenario.segments
    np.testing.assert_allclose(loaded.mic_signals, small_scenario.mic_signals, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(loaded.farend_reference, small_scenario.farend_reference, rtol=1e-6, atol=1e-6)
