from typing import Optional, Union

import numpy as np
import structlog

from app.models.separation import Algorithm, AuxVars, OnlineConfig, OnlineState
from app.models.signal import Spectrogram
from app.services.separation_service import bss_weights, filter_from_statistics, filter_weights, update_demix_row
from app.utils.error_handling import NumericalError, UsageError, handle_errors
from app.utils.linalg_utils import load_diagonal
from app.utils.validation_utils import parse_algorithm, validate_frame_alignment

logger = structlog.get_logger(__name__)


def _stage_sizes(cfg: OnlineConfig, channels: int, refs: int) -> dict:
    aec = cfg.taps.aec_size(refs)
    dr = cfg.taps.dr_size(channels) if cfg.dereverb else 0
    return {"aec": aec, "dr": dr, "draec": aec + dr}


def _filter_stats(n_bins: int, channels: int, size: int, eps_load: float) -> AuxVars:
    V = np.tile(eps_load * np.eye(size, dtype=np.complex128), (n_bins, 1, 1))
    return AuxVars(V=V, Q=np.zeros((n_bins, channels, size), dtype=np.complex128))


def _push(history: np.ndarray, frame: np.ndarray) -> np.ndarray:
    history = np.roll(history, 1, axis=1)
    history[:, 0, :] = frame
    return history


def _delayed_regressor(state: OnlineState) -> np.ndarray:
    taps = state.config.taps
    return state.stage_history[:, taps.delta:taps.delta + taps.l2, :].reshape(state.n_bins, -1)


def _reference_regressor(state: OnlineState) -> np.ndarray:
    return state.ref_history.reshape(state.n_bins, -1)


def _refresh_due(state: OnlineState) -> bool:
    return state.frames_processed % state.config.refresh_every == 0


def _track_power(aux: AuxVars, power: np.ndarray, alpha: float) -> np.ndarray:
    """Exponentially smoothed input power, started from the first frame."""
    aux.power = np.array(power, dtype=float) if aux.power is None else alpha * aux.power + (1.0 - alpha) * power
    return aux.power


def _filter_step(state: OnlineState, name: str, target: np.ndarray, regressor: np.ndarray) -> np.ndarray:
    """Emit the a priori output of a filter stage and update its statistics."""
    cfg = state.config
    settings = cfg.settings
    aux = state.aux[name]
    G = state.coefficients[name]
    output = target + np.einsum("fmk,fk->fm", G, regressor)

    power = _track_power(aux, np.sum(np.abs(target) ** 2, axis=-1), cfg.alpha)
    bias = settings.var_bias * power + settings.eps ** 2
    beta = filter_weights(output[:, None, :], target[:, None, :], cfg.prior, bias, settings.eps)[:, 0]

    outer = regressor[:, :, None] * regressor.conj()[:, None, :]
    cross = target[:, :, None] * regressor.conj()[:, None, :]
    aux.V = cfg.alpha * aux.V + (1.0 - cfg.alpha) * beta[:, None, None] * outer
    aux.Q = cfg.alpha * aux.Q + (1.0 - cfg.alpha) * beta[:, None, None] * cross
    aux.beta = beta

    if _refresh_due(state):
        try:
            state.coefficients[name] = filter_from_statistics(aux.V, aux.Q, settings)
        except NumericalError as e:
            state.skipped_refreshes += 1
            logger.warning("Skipped filter refresh", stage=name, frame=state.frames_processed, bin_index=e.bin_index)
    return output


def _demix_step(state: OnlineState, name: str, observation: np.ndarray) -> np.ndarray:
    """Update the demixing rows from the a priori estimate, then demix and project back."""
    cfg = state.config
    settings = cfg.settings
    aux = state.aux[name]
    W = state.coefficients[name]
    M = state.n_channels

    prior_estimate = np.einsum("fml,fl->fm", W[:, :M, :], observation)
    power = _track_power(aux, np.sum(np.abs(observation[:, :M]) ** 2) / M, cfg.alpha)
    bias = float(settings.var_bias * power + settings.eps ** 2)
    beta = bss_weights(prior_estimate[:, None, :], cfg.prior, settings.eps, bias)[0]
    outer = observation[:, :, None] * observation.conj()[:, None, :]
    aux.V = cfg.alpha * aux.V + (1.0 - cfg.alpha) * beta[None, :, None, None] * outer[:, None, :, :]
    aux.beta = beta

    if _refresh_due(state):
        updated = W.copy()
        try:
            for m in range(M):
                updated[:, m, :] = update_demix_row(updated, load_diagonal(aux.V[:, m], settings), m).conj()
            state.coefficients[name] = W = updated
        except NumericalError as e:
            state.skipped_refreshes += 1
            logger.warning("Skipped demixing refresh", stage=name, frame=state.frames_processed, bin_index=e.bin_index)

    separated = np.einsum("fml,fl->fm", W[:, :M, :], observation)
    try:
        scale = np.linalg.inv(W[:, :M, :M])[:, cfg.ref_channel, :]
    except np.linalg.LinAlgError:
        logger.warning("Singular demixing matrix, output left unscaled", stage=name, frame=state.frames_processed)
        return separated
    return separated * scale


class OnlineService:
    """Frame-by-frame separation sessions with recursively averaged statistics."""

    def init(self, cfg: OnlineConfig, bins: int, channels: int, refs: int = 1) -> OnlineState:
        """
        Fresh streaming state.

        Ring buffers are zero, every weighted covariance starts at
        diag_load * I, filters at zero and demixing matrices at identity.

        Args:
            cfg: Online configuration
            bins: Frequency bins per frame
            channels: Microphones M (= sources)
            refs: Far-end channels R (0 disables echo cancellation)

        Returns:
            OnlineState
        """
        if bins < 1 or channels < 1 or refs < 0:
            raise UsageError("Invalid online dimensions", bins=bins, channels=channels, refs=refs)
        eps_load = cfg.settings.diag_load
        sizes = _stage_sizes(cfg, channels, refs)
        stacked = channels + sizes["draec"]

        aux = {name: _filter_stats(bins, channels, size, eps_load) for name, size in sizes.items()}
        aux["bss"] = AuxVars(V=np.tile(eps_load * np.eye(channels, dtype=np.complex128), (bins, channels, 1, 1)))
        aux["joint"] = AuxVars(V=np.tile(eps_load * np.eye(stacked, dtype=np.complex128), (bins, channels, 1, 1)))
        coefficients = {name: np.zeros((bins, channels, size), dtype=np.complex128) for name, size in sizes.items()}
        coefficients["bss"] = np.tile(np.eye(channels, dtype=np.complex128), (bins, 1, 1))
        coefficients["joint"] = np.tile(np.eye(stacked, dtype=np.complex128), (bins, 1, 1))

        return OnlineState(
            config=cfg,
            n_bins=bins,
            n_channels=channels,
            n_refs=refs,
            ref_history=np.zeros((bins, cfg.taps.l1, refs), dtype=np.complex128),
            stage_history=np.zeros((bins, cfg.taps.l2 + cfg.taps.delta, channels), dtype=np.complex128),
            aux=aux,
            coefficients=coefficients,
        )

    def step(
        self,
        state: OnlineState,
        x_frame: np.ndarray,
        r_frame: Optional[np.ndarray],
        algorithm: Union[str, Algorithm],
    ) -> np.ndarray:
        """
        Process one STFT frame.

        Filter stages emit their output with the coefficients of the previous
        frame and then update their statistics and coefficients; the BSS stage
        updates its demixing rows first and emits with them. No lookahead.

        Args:
            state: Session state (mutated)
            x_frame: (M, bins) microphone frame
            r_frame: (R, bins) far-end frame, or None when the state has no references
            algorithm: Algorithm token; fixed by the first frame of the session

        Returns:
            (M, bins) separated frame, projected back on the reference channel
        """
        if state.closed:
            raise UsageError("Online session is already finalized")
        algorithm = parse_algorithm(algorithm)
        if state.algorithm is None:
            state.algorithm = algorithm
        elif state.algorithm != algorithm:
            raise UsageError("Online session already runs another algorithm", running=state.algorithm.value, requested=algorithm.value)

        X = np.asarray(x_frame, dtype=np.complex128)
        if X.shape != (state.n_channels, state.n_bins):
            raise UsageError("Microphone frame does not match the session", shape=list(X.shape), expected=[state.n_channels, state.n_bins])
        X = X.T
        if state.n_refs:
            if r_frame is None:
                raise UsageError("Session expects a far-end frame")
            R = np.asarray(r_frame, dtype=np.complex128)
            if R.shape != (state.n_refs, state.n_bins):
                raise UsageError("Far-end frame does not match the session", shape=list(R.shape), expected=[state.n_refs, state.n_bins])
            state.ref_history = _push(state.ref_history, R.T)

        dereverb = state.config.dereverb
        if algorithm == Algorithm.JOINT_SS:
            state.stage_history = _push(state.stage_history, X)
            blocks = [X]
            if state.n_refs:
                blocks.append(_reference_regressor(state))
            if dereverb:
                blocks.append(_delayed_regressor(state))
            output = _demix_step(state, "joint", np.concatenate(blocks, axis=-1))
        else:
            Z = X
            for stage in algorithm.stages:
                if stage == "draec":
                    state.stage_history = _push(state.stage_history, X)
                    blocks = []
                    if state.n_refs:
                        blocks.append(_reference_regressor(state))
                    if dereverb:
                        blocks.append(_delayed_regressor(state))
                    if blocks:
                        Z = _filter_step(state, stage, Z, np.concatenate(blocks, axis=-1))
                elif stage == "aec" and state.n_refs:
                    Z = _filter_step(state, stage, Z, _reference_regressor(state))
                elif stage == "dr" and dereverb:
                    state.stage_history = _push(state.stage_history, Z)
                    Z = _filter_step(state, stage, Z, _delayed_regressor(state))
            output = _demix_step(state, "bss", Z)

        state.frames_processed += 1
        return output.T

    def finalize(self, state: OnlineState) -> np.ndarray:
        """
        Close a session.

        The engine has no lookahead, so nothing is pending: the flushed block is
        always (M, 0, bins). Further steps raise UsageError.
        """
        state.closed = True
        logger.info(
            "Online session finalized",
            algorithm=state.algorithm.value if state.algorithm else None,
            frames=state.frames_processed,
            skipped_refreshes=state.skipped_refreshes,
        )
        return np.zeros((state.n_channels, 0, state.n_bins), dtype=np.complex128)

    @handle_errors
    def run(
        self,
        x: Spectrogram,
        r: Optional[Spectrogram],
        cfg: OnlineConfig = OnlineConfig(),
        algorithm: Union[str, Algorithm] = Algorithm.DRAEC_BSS,
    ) -> Spectrogram:
        """
        Whole-signal driver: step over every frame of x.

        Args:
            x: Microphone spectrogram
            r: Far-end spectrogram or None
            cfg: Online configuration
            algorithm: Algorithm token

        Returns:
            Separated spectrogram
        """
        algorithm = parse_algorithm(algorithm)
        if r is not None:
            validate_frame_alignment(x.n_frames, r.n_frames)
        state = self.init(cfg, x.n_bins, x.n_channels, 0 if r is None else r.n_channels)
        output = np.zeros_like(x.data)
        for t in range(x.n_frames):
            output[:, t, :] = self.step(state, x.data[:, t, :], None if r is None else r.data[:, t, :], algorithm)
        self.finalize(state)
        logger.info("Online run finished", algorithm=algorithm.value, frames=x.n_frames, skipped_refreshes=state.skipped_refreshes)
        return x.with_data(output)


online_service = OnlineService()
