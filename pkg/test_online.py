import numpy as np
import pytest

from app.models.separation import Algorithm, FilterTaps, OnlineConfig
from app.models.signal import Spectrogram
from app.services.online_service import online_service
from app.services.scenario_service import ctf_mix
from app.utils.error_handling import UsageError
from app.utils.linalg_utils import stack_history

SMALL = OnlineConfig(taps=FilterTaps(l1=2, l2=2, delta=1))


def complex_normal(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_pair(seed, frames=60, bins=4, channels=2):
    rng = np.random.default_rng(seed)
    x = Spectrogram(data=complex_normal(rng, channels, frames, bins))
    r = Spectrogram(data=complex_normal(rng, 1, frames, bins))
    return x, r


def test_init_is_deterministic_and_loaded():
    first = online_service.init(SMALL, bins=4, channels=2, refs=1)
    second = online_service.init(SMALL, bins=4, channels=2, refs=1)
    for name in first.aux:
        np.testing.assert_array_equal(first.aux[name].V, second.aux[name].V)
    size = SMALL.taps.aec_size(1)
    np.testing.assert_array_equal(first.aux["aec"].V, np.broadcast_to(SMALL.settings.diag_load * np.eye(size), (4, size, size)))
    assert first.aux["aec"].Q.shape == (4, 2, size)
    assert first.aux["aec"].power is None
    np.testing.assert_array_equal(first.coefficients["bss"], np.tile(np.eye(2), (4, 1, 1)))
    assert not np.any(first.ref_history) and not np.any(first.stage_history)
    assert first.stage_history.shape == (4, 3, 2)


def test_finalize_without_frames_is_empty():
    state = online_service.init(SMALL, bins=4, channels=2)
    assert online_service.finalize(state).shape == (2, 0, 4)
    with pytest.raises(UsageError):
        online_service.step(state, np.zeros((2, 4)), np.zeros((1, 4)), Algorithm.BSS)


def test_recursive_covariance_matches_explicit_sum():
    cfg = OnlineConfig(alpha=0.9, taps=SMALL.taps)
    x, _ = random_pair(1, frames=6)
    state = online_service.init(cfg, bins=4, channels=2, refs=0)
    weights = []
    for t in range(x.n_frames):
        online_service.step(state, x.data[:, t, :], None, Algorithm.BSS)
        weights.append(state.aux["bss"].beta.copy())

    T = x.n_frames
    expected = cfg.alpha ** T * cfg.settings.diag_load * np.tile(np.eye(2), (4, 2, 1, 1))
    for t in range(T):
        frame = x.data[:, t, :].T
        outer = frame[:, :, None] * frame.conj()[:, None, :]
        expected = expected + cfg.alpha ** (T - 1 - t) * (1 - cfg.alpha) * weights[t][None, :, None, None] * outer[:, None]
    np.testing.assert_allclose(state.aux["bss"].V, expected, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_prefix_input_gives_prefix_output(algorithm):
    x, r = random_pair(2, frames=40)
    full = online_service.run(x, r, SMALL, algorithm)
    for cut in (1, 7, 23):
        prefix = online_service.run(x.with_data(x.data[:, :cut]), r.with_data(r.data[:, :cut]), SMALL, algorithm)
        np.testing.assert_array_equal(prefix.data, full.data[:, :cut])


def test_sessions_are_isolated():
    x1, r1 = random_pair(3)
    x2, r2 = random_pair(4)
    first = online_service.init(SMALL, bins=4, channels=2, refs=1)
    second = online_service.init(SMALL, bins=4, channels=2, refs=1)
    interleaved = ([], [])
    for t in range(x1.n_frames):
        interleaved[0].append(online_service.step(first, x1.data[:, t], r1.data[:, t], "DRAEC-BSS"))
        interleaved[1].append(online_service.step(second, x2.data[:, t], r2.data[:, t], "JOINT-SS"))

    alone_first = online_service.run(x1, r1, SMALL, "DRAEC-BSS").data
    alone_second = online_service.run(x2, r2, SMALL, "JOINT-SS").data
    np.testing.assert_array_equal(np.stack(interleaved[0], axis=1), alone_first)
    np.testing.assert_array_equal(np.stack(interleaved[1], axis=1), alone_second)


def test_frozen_statistics_freeze_filters():
    x, r = random_pair(5, frames=320)
    state = online_service.init(OnlineConfig(alpha=0.99, taps=SMALL.taps), bins=4, channels=2, refs=1)
    for t in range(300):
        online_service.step(state, x.data[:, t], r.data[:, t], Algorithm.AEC_DR_BSS)

    state.config = state.config.model_copy(update={"alpha": 1.0 - 1e-15})
    for t in range(300, 320):
        previous = {name: state.coefficients[name].copy() for name in ("aec", "dr")}
        online_service.step(state, x.data[:, t], r.data[:, t], Algorithm.AEC_DR_BSS)
        for name, before in previous.items():
            change = np.linalg.norm(state.coefficients[name] - before) / np.linalg.norm(before)
            assert change < 1e-9


def test_zero_input_gives_zero_output():
    zeros = Spectrogram(data=np.zeros((2, 20, 4), dtype=complex))
    far_end = Spectrogram(data=np.zeros((1, 20, 4), dtype=complex))
    for algorithm in (Algorithm.DRAEC_BSS, Algorithm.JOINT_SS):
        assert not np.any(online_service.run(zeros, far_end, SMALL, algorithm).data)


def test_run_equals_sequential_steps():
    x, r = random_pair(6, frames=25)
    state = online_service.init(SMALL, bins=4, channels=2, refs=1)
    frames = [online_service.step(state, x.data[:, t], r.data[:, t], "AEC-DR-BSS") for t in range(x.n_frames)]
    np.testing.assert_array_equal(np.stack(frames, axis=1), online_service.run(x, r, SMALL, "AEC-DR-BSS").data)
    assert state.frames_processed == x.n_frames


def test_frame_dimensions_are_checked():
    state = online_service.init(SMALL, bins=4, channels=2, refs=1)
    with pytest.raises(UsageError):
        online_service.step(state, np.zeros((3, 4)), np.zeros((1, 4)), Algorithm.DRAEC_BSS)
    with pytest.raises(UsageError):
        online_service.step(state, np.zeros((2, 4)), None, Algorithm.DRAEC_BSS)
    with pytest.raises(UsageError):
        online_service.step(state, np.zeros((2, 4)), np.zeros((1, 5)), Algorithm.DRAEC_BSS)


def test_algorithm_is_fixed_by_first_frame():
    state = online_service.init(SMALL, bins=4, channels=2, refs=1)
    online_service.step(state, np.ones((2, 4)), np.ones((1, 4)), Algorithm.DRAEC_BSS)
    with pytest.raises(UsageError):
        online_service.step(state, np.ones((2, 4)), np.ones((1, 4)), Algorithm.JOINT_SS)


def test_refresh_stride_holds_coefficients():
    cfg = OnlineConfig(taps=SMALL.taps, refresh_every=4)
    x, r = random_pair(7, frames=6)
    state = online_service.init(cfg, bins=4, channels=2, refs=1)
    online_service.step(state, x.data[:, 0], r.data[:, 0], Algorithm.DRAEC_BSS)
    refreshed = state.coefficients["draec"].copy()
    for t in range(1, 4):
        online_service.step(state, x.data[:, t], r.data[:, t], Algorithm.DRAEC_BSS)
        np.testing.assert_array_equal(state.coefficients["draec"], refreshed)
    online_service.step(state, x.data[:, 4], r.data[:, 4], Algorithm.DRAEC_BSS)
    assert not np.array_equal(state.coefficients["draec"], refreshed)


def test_filter_statistics_follow_recursion():
    cfg = OnlineConfig(alpha=0.9, taps=SMALL.taps)
    x, r = random_pair(8, frames=6)
    state = online_service.init(cfg, bins=4, channels=2, refs=1)
    weights = []
    for t in range(x.n_frames):
        online_service.step(state, x.data[:, t], r.data[:, t], Algorithm.AEC_DR_BSS)
        weights.append(state.aux["aec"].beta.copy())
    assert weights[0].shape == (4,)

    T = x.n_frames
    regressor = stack_history(r.bin_major(), cfg.taps.l1, 0)
    target = x.bin_major()
    expected_V = cfg.alpha ** T * cfg.settings.diag_load * np.tile(np.eye(2), (4, 1, 1))
    expected_Q = np.zeros((4, 2, 2), dtype=complex)
    for t in range(T):
        u = regressor[:, t, :]
        decay = cfg.alpha ** (T - 1 - t) * (1 - cfg.alpha) * weights[t][:, None, None]
        expected_V = expected_V + decay * (u[:, :, None] * u.conj()[:, None, :])
        expected_Q = expected_Q + decay * (target[:, t, :, None] * u.conj()[:, None, :])
    np.testing.assert_allclose(state.aux["aec"].V, expected_V, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(state.aux["aec"].Q, expected_Q, rtol=1e-10, atol=1e-14)


def test_online_echo_canceller_converges_on_echo_only_input():
    rng = np.random.default_rng(9)
    r = Spectrogram(data=complex_normal(rng, 1, 600, 4))
    echo = ctf_mix(r, complex_normal(rng, 4, 2, 2, 1), 2)
    state = online_service.init(OnlineConfig(alpha=0.99, taps=SMALL.taps), bins=4, channels=2, refs=1)
    for t in range(echo.n_frames):
        online_service.step(state, echo.data[:, t], r.data[:, t], Algorithm.AEC_DR_BSS)
    tail = slice(400, 600)
    echo_free = state.coefficients["aec"]
    assert np.all(np.isfinite(echo_free))
    cancelled = echo.bin_major()[:, tail] + np.einsum("ftk,fmk->ftm", stack_history(r.bin_major(), 2, 0)[:, tail], echo_free)
    assert np.sum(np.abs(cancelled) ** 2) <= 1e-4 * np.sum(np.abs(echo.bin_major()[:, tail]) ** 2)
