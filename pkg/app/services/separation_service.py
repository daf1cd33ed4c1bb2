from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import structlog

from app.models.separation import (
    Algorithm,
    DemixState,
    FilterTaps,
    GgdPrior,
    SeparationResult,
    SolverSettings,
)
from app.models.signal import Spectrogram
from app.utils.error_handling import (
    DegenerateInputError,
    NumericalError,
    UsageError,
    handle_errors,
    monitor_stage_performance,
)
from app.utils.linalg_utils import first_singular_bin, load_diagonal, loading_level, solve_loaded, stack_history
from app.utils.validation_utils import parse_algorithm, validate_frame_alignment

logger = structlog.get_logger(__name__)

ArrayOrSpectrogram = Union[np.ndarray, Spectrogram]
ObjectiveCallback = Callable[[int, float], None]

# Relative slack of the per-bin acceptance test of a reweighting sweep.
MM_SLACK = 1e-12


def _bin_major(values: ArrayOrSpectrogram) -> np.ndarray:
    if isinstance(values, Spectrogram):
        return values.bin_major()
    return np.asarray(values, dtype=np.complex128)


def bss_weights(
    sources: ArrayOrSpectrogram,
    prior: GgdPrior = GgdPrior(),
    eps: float = 1e-8,
    bias: float = 0.0,
) -> np.ndarray:
    """
    Full-band source weights of the generalized Gaussian prior.

    Args:
        sources: Separated sources, Spectrogram or bin-major (bins, frames, N)
        prior: Source prior
        eps: Magnitude floor
        bias: Power added to every frame before the floor

    Returns:
        (frames, N) weights (max(sum_f |s|^2 + bias, eps^2)) ** ((gamma - 2) / 2)
    """
    S = _bin_major(sources)
    power = np.sum(np.abs(S) ** 2, axis=0)
    return np.maximum(power + bias, eps ** 2) ** ((prior.gamma - 2.0) / 2.0)


def source_bias(observation: np.ndarray, settings: SolverSettings) -> float:
    """Weight bias of the separation stage: var_bias times the mean full-band frame power per channel."""
    power = np.sum(np.abs(observation) ** 2, axis=0)
    return float(settings.var_bias * np.mean(power) + settings.eps ** 2) if power.size else settings.eps ** 2


def weighted_cov(
    u: np.ndarray,
    beta: np.ndarray,
    settings: SolverSettings = SolverSettings(),
    loading: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Weighted covariance mean_t beta(t) u(t) u(t)^H with diagonal loading.

    Args:
        u: (bins, frames, L) observations
        beta: (frames,) weights shared by all bins
        settings: Loading parameters
        loading: (bins,) fixed loading; derived from the trace of each matrix when None

    Returns:
        (bins, L, L) Hermitian matrices
    """
    n_frames = u.shape[1]
    if n_frames == 0:
        raise DegenerateInputError("Weighted covariance needs at least one frame")
    if beta.shape[0] != n_frames:
        raise UsageError("Weights and observations have different frame counts", frames=n_frames, weights=beta.shape[0])
    V = (u * beta[None, :, None]).transpose(0, 2, 1) @ u.conj() / n_frames
    if loading is None:
        return load_diagonal(V, settings)
    return V + np.asarray(loading)[:, None, None] * np.eye(V.shape[-1])


def update_demix_row(W: np.ndarray, V: np.ndarray, m: int) -> np.ndarray:
    """
    Iterative-projection update of demixing row m.

    Rows of ``W`` hold w^H, so the caller stores the result as
    ``W[..., m, :] = w.conj()``.

    Args:
        W: (bins, L, L) or (L, L) demixing matrices
        V: Weighted covariance of source m, same shape as W
        m: Row index

    Returns:
        w = (W V)^{-1} e_m scaled so that w^H V w = 1, shape (bins, L) or (L,)
    """
    single = W.ndim == 2
    W3 = W[None] if single else W
    V3 = V[None] if single else V
    WV = W3 @ V3
    rhs = np.zeros(WV.shape[:-1] + (1,), dtype=np.complex128)
    rhs[..., m, 0] = 1.0
    try:
        w = np.linalg.solve(WV, rhs)[..., 0]
    except np.linalg.LinAlgError:
        bin_index = first_singular_bin(WV)
        raise NumericalError("Singular demixing update", bin_index=bin_index, row=m)
    quad = np.real(np.einsum("fk,fkl,fl->f", w.conj(), V3, w))
    if np.any(quad <= 0.0):
        bin_index = int(np.flatnonzero(quad <= 0.0)[0])
        raise NumericalError("Non-positive weighted norm in demixing update", bin_index=bin_index, row=m)
    w = w / np.sqrt(quad)[:, None]
    return w[0] if single else w


def surrogate_objective(
    sources: ArrayOrSpectrogram,
    W: np.ndarray,
    prior: GgdPrior = GgdPrior(),
    bias: float = 0.0,
    ridge: Optional[np.ndarray] = None,
) -> float:
    """
    Batch objective decreased by every MM sweep.

    sum_m mean_t (2 / gamma) (sum_f |s_m|^2 + bias) ** (gamma / 2) - 2 sum_f log|det W_f|,
    plus sum_f sum_m ridge[f, m] ||w_fm||^2 when the demixing rows carry a
    fixed diagonal loading.
    """
    S = _bin_major(sources)
    power = np.sum(np.abs(S) ** 2, axis=0) + bias
    contrast = np.sum(np.mean((2.0 / prior.gamma) * power ** (prior.gamma / 2.0), axis=0))
    _, logabsdet = np.linalg.slogdet(W)
    value = contrast - 2.0 * np.sum(logabsdet)
    if ridge is not None:
        rows = W[:, : ridge.shape[1], :]
        value += np.sum(ridge * np.sum(np.abs(rows) ** 2, axis=-1))
    return float(value)


def _auxiva(
    U: np.ndarray,
    n_out: int,
    prior: GgdPrior,
    settings: SolverSettings,
    iters: Optional[int] = None,
    initial: Optional[np.ndarray] = None,
    callback: Optional[ObjectiveCallback] = None,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """
    Aux-IVA on (bins, frames, L) observations, updating the first n_out rows of W.

    The diagonal loading of every (bin, source) covariance is fixed from the
    starting point, so each sweep is an exact MM step of the loaded objective.
    """
    n_bins, n_frames, size = U.shape
    iters = settings.max_iters if iters is None else iters
    if initial is None:
        W = np.tile(np.eye(size, dtype=np.complex128), (n_bins, 1, 1))
    else:
        if initial.shape != (n_bins, size, size):
            raise UsageError("Initial demixing matrices have the wrong shape", shape=list(initial.shape))
        W = np.array(initial, dtype=np.complex128)

    def demix(matrices):
        return U @ matrices[:, :n_out, :].transpose(0, 2, 1)

    bias = source_bias(U[:, :, :n_out], settings)
    S = demix(W)
    beta = bss_weights(S, prior, settings.eps, bias)
    unloaded = settings.model_copy(update={"diag_load": 0.0, "loading_floor": 0.0})
    ridge = np.stack([loading_level(weighted_cov(U, beta[:, m], unloaded), settings) for m in range(n_out)], axis=-1)

    history = [surrogate_objective(S, W, prior, bias, ridge)]
    for iteration in range(iters):
        beta = bss_weights(S, prior, settings.eps, bias)
        previous = W[:, :n_out].copy()
        for m in range(n_out):
            V = weighted_cov(U, beta[:, m], settings, ridge[:, m])
            W[:, m, :] = update_demix_row(W, V, m).conj()
        S = demix(W)
        history.append(surrogate_objective(S, W, prior, bias, ridge))
        if callback is not None:
            callback(iteration + 1, history[-1])

        change = np.linalg.norm(W[:, :n_out] - previous) / max(np.linalg.norm(previous), settings.eps)
        logger.debug("Aux-IVA sweep", iteration=iteration + 1, objective=history[-1], change=float(change))
        if change < settings.tol:
            break
    return W, S, history


def _project(S: np.ndarray, D: np.ndarray, ref_channel: int) -> np.ndarray:
    try:
        scale = np.linalg.inv(D)[:, ref_channel, :]
    except np.linalg.LinAlgError:
        raise NumericalError("Demixing matrix is singular in projection back", bin_index=first_singular_bin(D))
    return S * scale[:, None, :]


def projection_back(
    s_hat: Spectrogram,
    z_reference: Spectrogram,
    demix: Optional[Union[DemixState, np.ndarray]] = None,
    ref_channel: int = 0,
) -> Spectrogram:
    """
    Fix the scale of separated sources on a reference channel.

    With the demixing matrices each source is multiplied by the matching
    entry of row ``ref_channel`` of D^{-1}, so the projected sources sum to
    the reference channel exactly. Without them the per-bin least-squares
    fit of the reference channel onto the sources is used.

    Args:
        s_hat: Separated sources
        z_reference: Input of the separation stage (all channels)
        demix: DemixState or (bins, M, M) matrices D
        ref_channel: Reference channel index

    Returns:
        Rescaled sources
    """
    if not 0 <= ref_channel < z_reference.n_channels:
        raise UsageError("Reference channel out of range", ref_channel=ref_channel, channels=z_reference.n_channels)
    S = s_hat.bin_major()
    if demix is not None:
        D = demix.D if isinstance(demix, DemixState) else np.asarray(demix)
        return Spectrogram.from_bin_major(_project(S, D, ref_channel), s_hat.config, s_hat.n_samples)

    z = z_reference.bin_major()[:, :, ref_channel]
    cross = np.einsum("ft,ftn->fn", z, S.conj())
    gram = S.transpose(0, 2, 1) @ S.conj()
    scale = solve_loaded(gram.transpose(0, 2, 1), cross[..., None], SolverSettings(diag_load=0.0))[..., 0]
    return Spectrogram.from_bin_major(S * scale[:, None, :], s_hat.config, s_hat.n_samples)


def filter_from_statistics(V: np.ndarray, Q: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """
    G = -conj(V^{-1} conj(Q)) with loading.

    V is (..., K, K). Q is either (..., K), one row per matrix, or
    (..., M, K) with every row solved against the same V.
    """
    if Q.ndim == V.ndim:
        rows = solve_loaded(V, np.conj(np.swapaxes(Q, -1, -2)), settings)
        return -np.conj(np.swapaxes(rows, -1, -2))
    return -np.conj(solve_loaded(V, np.conj(Q)[..., None], settings)[..., 0])


def filter_bias(target: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """Per-bin weight bias: var_bias times the mean frame power of the target, summed over channels."""
    power = np.sum(np.abs(target) ** 2, axis=-1)
    return settings.var_bias * np.mean(power, axis=1) + settings.eps ** 2


def filter_weights(
    residual: np.ndarray,
    target: np.ndarray,
    prior: GgdPrior,
    bias: np.ndarray,
    eps: float = 1e-8,
) -> np.ndarray:
    """
    Weights of a filter stage, one per bin and frame, shared by the output channels.

    The residual power of each channel is clipped at the power of the
    stage input before summing, so a filter that amplifies a frame cannot
    drive its weight further up.

    Args:
        residual: (bins, frames, M) current stage output
        target: (bins, frames, M) stage input
        prior: Residual prior
        bias: (bins,) power added before raising to (gamma - 2) / 2
        eps: Magnitude floor

    Returns:
        (bins, frames) weights
    """
    power = np.sum(np.minimum(np.abs(residual) ** 2, np.abs(target) ** 2), axis=-1)
    return np.maximum(power + bias[:, None], eps ** 2) ** ((prior.gamma - 2.0) / 2.0)


def _filter_objective(residual: np.ndarray, prior: GgdPrior, bias: np.ndarray) -> np.ndarray:
    power = np.sum(np.abs(residual) ** 2, axis=-1) + bias[:, None]
    return np.mean(power ** (prior.gamma / 2.0), axis=1)


def solve_weighted_ls_filter(
    target: ArrayOrSpectrogram,
    regressor: np.ndarray,
    prior: GgdPrior = GgdPrior(),
    iters: Optional[int] = None,
    settings: SolverSettings = SolverSettings(),
) -> np.ndarray:
    """
    Weighted least-squares filter minimizing sum_t beta ||target + G regressor||^2.

    Weights (see ``filter_weights``) are refreshed from the residual every
    sweep, one per bin and frame. A sweep that raises the bin objective
    mean_t (||residual||^2 + bias) ** (gamma / 2) is rejected for that bin.
    gamma = 2 is a single ordinary least-squares solve.

    Args:
        target: (bins, frames, M) signal to clean (or a Spectrogram)
        regressor: (bins, frames, K) stacked reference frames
        prior: Residual prior
        iters: Reweighting iterations (settings.max_iters by default)
        settings: Solver parameters

    Returns:
        (bins, M, K) filter coefficients
    """
    X = _bin_major(target)
    U = np.asarray(regressor, dtype=np.complex128)
    if U.ndim != 3 or U.shape[:2] != X.shape[:2]:
        raise UsageError("Regressor is not aligned with the target", target=list(X.shape), regressor=list(U.shape))
    if not np.any(U):
        raise DegenerateInputError("Regressor has zero energy")

    n_bins, n_frames, n_channels = X.shape
    size = U.shape[-1]
    iters = settings.max_iters if iters is None else iters
    sweeps = 1 if prior.gamma == 2.0 else max(iters, 1)

    bias = filter_bias(X, settings)
    G = np.zeros((n_bins, n_channels, size), dtype=np.complex128)
    residual = X
    objective = _filter_objective(X, prior, bias)
    for sweep in range(sweeps):
        beta = filter_weights(residual, X, prior, bias, settings.eps)
        weighted = U * beta[:, :, None]
        V = weighted.transpose(0, 2, 1) @ U.conj() / n_frames
        Q = np.einsum("ftk,ftm->fmk", weighted.conj(), X) / n_frames
        candidate = filter_from_statistics(V, Q, settings)
        trial = X + np.einsum("ftk,fmk->ftm", U, candidate)
        trial_objective = _filter_objective(trial, prior, bias)

        accepted = trial_objective <= objective * (1.0 + MM_SLACK)
        previous = G
        G = np.where(accepted[:, None, None], candidate, G)
        residual = np.where(accepted[:, None, None], trial, residual)
        objective = np.where(accepted, trial_objective, objective)

        change = np.linalg.norm(G - previous) / max(np.linalg.norm(G), settings.eps)
        logger.debug("Weighted LS sweep", sweep=sweep + 1, change=float(change), rejected_bins=int(np.sum(~accepted)))
        if change < settings.tol:
            break
    return G


def _apply_filter(
    target: np.ndarray,
    regressor: np.ndarray,
    prior: GgdPrior,
    settings: SolverSettings,
    iters: Optional[int],
    stage: str,
) -> Tuple[np.ndarray, np.ndarray]:
    try:
        G = solve_weighted_ls_filter(target, regressor, prior, iters, settings)
    except DegenerateInputError:
        logger.warning("Regressor is silent, stage passes its input through", stage=stage)
        G = np.zeros((target.shape[0], target.shape[-1], regressor.shape[-1]), dtype=np.complex128)
        return target.copy(), G
    return target + np.einsum("ftk,fmk->ftm", regressor, G), G


@monitor_stage_performance
def aec_stage(
    x: Spectrogram,
    r: Spectrogram,
    taps: FilterTaps = FilterTaps(),
    prior: GgdPrior = GgdPrior(),
    settings: SolverSettings = SolverSettings(),
    iters: Optional[int] = None,
) -> Spectrogram:
    """Echo cancellation y = x + E_bar r_bar with r_bar the last L1 far-end frames."""
    validate_frame_alignment(x.n_frames, r.n_frames)
    regressor = stack_history(r.bin_major(), taps.l1, 0)
    Y, _ = _apply_filter(x.bin_major(), regressor, prior, settings, iters, "aec")
    return Spectrogram.from_bin_major(Y, x.config, x.n_samples)


@monitor_stage_performance
def dr_stage(
    y: Spectrogram,
    taps: FilterTaps = FilterTaps(),
    prior: GgdPrior = GgdPrior(),
    settings: SolverSettings = SolverSettings(),
    iters: Optional[int] = None,
) -> Spectrogram:
    """Dereverberation z = y + F_bar y_bar(t - delta) by multichannel linear prediction."""
    Y = y.bin_major()
    regressor = stack_history(Y, taps.l2, taps.delta)
    Z, _ = _apply_filter(Y, regressor, prior, settings, iters, "dr")
    return Spectrogram.from_bin_major(Z, y.config, y.n_samples)


@monitor_stage_performance
def draec_stage(
    x: Spectrogram,
    r: Optional[Spectrogram],
    taps: FilterTaps = FilterTaps(),
    prior: GgdPrior = GgdPrior(),
    settings: SolverSettings = SolverSettings(),
    iters: Optional[int] = None,
    dereverb: bool = True,
) -> Spectrogram:
    """Joint echo cancellation and dereverberation over the regressor [r_bar(t); x_bar(t - delta)]."""
    X = x.bin_major()
    Z, _, _ = _run_filters(X, None if r is None else r.bin_major(), Algorithm.DRAEC_BSS, taps, prior, settings, iters, dereverb)
    return Spectrogram.from_bin_major(Z, x.config, x.n_samples)


def _run_filters(
    X: np.ndarray,
    R: Optional[np.ndarray],
    algorithm: Algorithm,
    taps: FilterTaps,
    prior: GgdPrior,
    settings: SolverSettings,
    iters: Optional[int],
    dereverb: bool,
) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Filter stages of a cascade in order; returns (z, E_bar, F_bar)."""
    Z = X
    E_bar = F_bar = None
    for stage in algorithm.stages:
        if stage == "draec":
            blocks = []
            if R is not None:
                blocks.append(stack_history(R, taps.l1, 0))
            if dereverb:
                blocks.append(stack_history(X, taps.l2, taps.delta))
            if not blocks:
                continue
            Z, G = _apply_filter(Z, np.concatenate(blocks, axis=-1), prior, settings, iters, stage)
            aec_size = 0 if R is None else taps.aec_size(R.shape[-1])
            E_bar = G[..., :aec_size] if R is not None else None
            F_bar = G[..., aec_size:] if dereverb else None
        elif stage == "aec":
            if R is None:
                continue
            Z, E_bar = _apply_filter(Z, stack_history(R, taps.l1, 0), prior, settings, iters, stage)
        elif stage == "dr":
            if not dereverb:
                continue
            Z, F_bar = _apply_filter(Z, stack_history(Z, taps.l2, taps.delta), prior, settings, iters, stage)
    return Z, E_bar, F_bar


def _joint_observation(X: np.ndarray, R: Optional[np.ndarray], taps: FilterTaps, dereverb: bool) -> np.ndarray:
    blocks = [X]
    if R is not None:
        blocks.append(stack_history(R, taps.l1, 0))
    if dereverb:
        blocks.append(stack_history(X, taps.l2, taps.delta))
    return np.concatenate(blocks, axis=-1)


def _joint_demix_state(W: np.ndarray, n_channels: int, aec_size: int, dereverb: bool) -> DemixState:
    D = W[:, :n_channels, :n_channels]
    E = W[:, :n_channels, n_channels:n_channels + aec_size]
    F = W[:, :n_channels, n_channels + aec_size:]
    return DemixState(
        D=D.copy(),
        E_bar=np.linalg.solve(D, E) if aec_size else None,
        F_bar=np.linalg.solve(D, F) if dereverb else None,
        W=W,
    )


def _run_joint(
    X: np.ndarray,
    R: Optional[np.ndarray],
    taps: FilterTaps,
    prior: GgdPrior,
    settings: SolverSettings,
    iters: Optional[int],
    dereverb: bool,
    initial: Optional[DemixState],
    callback: Optional[ObjectiveCallback],
) -> Tuple[DemixState, np.ndarray, List[float]]:
    n_channels = X.shape[-1]
    U = _joint_observation(X, R, taps, dereverb)
    start = initial.W if initial is not None and initial.W is not None else None
    W, S, history = _auxiva(U, n_channels, prior, settings, iters, start, callback)
    aec_size = 0 if R is None else taps.aec_size(R.shape[-1])
    return _joint_demix_state(W, n_channels, aec_size, dereverb), S, history


@monitor_stage_performance
def joint_ss(
    x: Spectrogram,
    r: Optional[Spectrogram],
    taps: FilterTaps = FilterTaps(),
    prior: GgdPrior = GgdPrior(),
    iters: Optional[int] = None,
    settings: SolverSettings = SolverSettings(),
    dereverb: bool = True,
    callback: Optional[ObjectiveCallback] = None,
) -> Tuple[DemixState, Spectrogram]:
    """
    Joint echo cancellation, dereverberation and separation.

    Aux-IVA on the stacked observation u(t) = [x(t); r_bar(t); x_bar(t - delta)]
    updating only the first M rows of the L x L demixing matrix; the identity
    blocks below them never change.

    Returns:
        (DemixState, separated sources before projection back)
    """
    if r is not None:
        validate_frame_alignment(x.n_frames, r.n_frames)
    demix, S, _ = _run_joint(
        x.bin_major(), None if r is None else r.bin_major(), taps, prior, settings, iters, dereverb, None, callback
    )
    return demix, Spectrogram.from_bin_major(S, x.config, x.n_samples)


@monitor_stage_performance
def bss_stage(
    z: Spectrogram,
    prior: GgdPrior = GgdPrior(),
    iters: Optional[int] = None,
    settings: SolverSettings = SolverSettings(),
    initial_demix: Optional[np.ndarray] = None,
    ref_channel: int = 0,
    callback: Optional[ObjectiveCallback] = None,
) -> Tuple[np.ndarray, Spectrogram]:
    """
    Determined Aux-IVA on z followed by projection back.

    Returns:
        (D of shape (bins, M, M), projected sources)
    """
    Z = z.bin_major()
    D, S, _ = _auxiva(Z, Z.shape[-1], prior, settings, iters, initial_demix, callback)
    return D, Spectrogram.from_bin_major(_project(S, D, ref_channel), z.config, z.n_samples)


class SeparationService:
    """Batch separation entry points: one algorithm over a whole recording."""

    def cascade(
        self,
        x: Spectrogram,
        r: Optional[Spectrogram],
        order: Union[str, Algorithm],
        taps: FilterTaps = FilterTaps(),
        prior: GgdPrior = GgdPrior(),
        iters: Optional[int] = None,
        settings: SolverSettings = SolverSettings(),
        dereverb: bool = True,
    ) -> Spectrogram:
        """Run one of the cascades DRAEC-BSS, DR-AEC-BSS or AEC-DR-BSS; BSS always runs last."""
        algorithm = parse_algorithm(order)
        if not algorithm.is_cascade:
            raise UsageError(f"'{algorithm.value}' is not a cascade order")
        return self.separate(x, r, algorithm, taps, prior, settings, iters=iters, dereverb=dereverb).estimate

    @handle_errors
    def separate(
        self,
        x: Spectrogram,
        r: Optional[Spectrogram],
        algorithm: Union[str, Algorithm],
        taps: FilterTaps = FilterTaps(),
        prior: GgdPrior = GgdPrior(),
        settings: SolverSettings = SolverSettings(),
        iters: Optional[int] = None,
        dereverb: bool = True,
        initial_demix: Optional[DemixState] = None,
        ref_channel: int = 0,
        callback: Optional[ObjectiveCallback] = None,
    ) -> SeparationResult:
        """
        Batch separation with any of the supported algorithms.

        Args:
            x: Microphone spectrogram (M channels)
            r: Far-end spectrogram or None (echo cancellation is skipped)
            algorithm: JOINT-SS, DRAEC-BSS, DR-AEC-BSS, AEC-DR-BSS or BSS
            taps: Filter orders and dereverberation delay
            prior: Source prior
            settings: Solver parameters
            iters: Sweeps of the BSS / Joint-SS stage
            dereverb: Run the dereverberation blocks
            initial_demix: Warm start for the demixing matrices
            ref_channel: Projection-back reference channel
            callback: Called with (iteration, objective) after each sweep

        Returns:
            SeparationResult with projected sources and demixing blocks
        """
        algorithm = parse_algorithm(algorithm)
        if r is not None:
            validate_frame_alignment(x.n_frames, r.n_frames)
        X = x.bin_major()
        R = None if r is None else r.bin_major()
        logger.info(
            "Separating",
            algorithm=algorithm.value,
            channels=x.n_channels,
            frames=x.n_frames,
            bins=x.n_bins,
            reference=r is not None,
            dereverb=dereverb,
        )

        if algorithm == Algorithm.JOINT_SS:
            demix, S, history = _run_joint(X, R, taps, prior, settings, iters, dereverb, initial_demix, callback)
        else:
            Z, E_bar, F_bar = _run_filters(X, R, algorithm, taps, prior, settings, iters, dereverb)
            start = initial_demix.D if initial_demix is not None else None
            D, S, history = _auxiva(Z, Z.shape[-1], prior, settings, iters, start, callback)
            demix = DemixState(D=D, E_bar=E_bar, F_bar=F_bar)

        estimate = Spectrogram.from_bin_major(_project(S, demix.D, ref_channel), x.config, x.n_samples)
        logger.info("Separation finished", algorithm=algorithm.value, iterations=len(history) - 1, objective=history[-1])
        return SeparationResult(
            algorithm=algorithm,
            estimate=estimate,
            demix=demix,
            objective_history=history,
            iterations=len(history) - 1,
        )


separation_service = SeparationService()
