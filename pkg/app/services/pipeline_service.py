from typing import Optional, Tuple, Union

import structlog

from app.models.run import RunConfig
from app.models.separation import Algorithm, DemixState, Mode
from app.models.signal import Spectrogram
from app.services.online_service import online_service
from app.services.separation_service import separation_service
from app.utils.error_handling import UsageError
from app.utils.validation_utils import parse_algorithm

logger = structlog.get_logger(__name__)


def process(
    x: Spectrogram,
    r: Optional[Spectrogram],
    config: RunConfig,
    algorithm: Optional[Union[str, Algorithm]] = None,
    mode: Optional[Mode] = None,
    initial_demix: Optional[DemixState] = None,
) -> Tuple[Spectrogram, Optional[DemixState]]:
    """
    Run one algorithm in batch or online mode as configured.

    Echo cancellation is dropped when ENABLE_AEC is off; a reference is
    required otherwise, except for BSS.

    Returns:
        (separated spectrogram, demix state of a batch run or None)
    """
    algorithm = parse_algorithm(algorithm or config.algorithm)
    mode = mode or config.mode
    if not config.enable_aec or algorithm == Algorithm.BSS:
        r = None
    elif r is None:
        raise UsageError(f"{algorithm.value} needs a far-end reference (or disable echo cancellation)")

    if mode == Mode.ONLINE:
        return online_service.run(x, r, config.online_config(), algorithm), None
    result = separation_service.separate(
        x,
        r,
        algorithm,
        config.filter_taps(),
        config.prior(),
        config.solver_settings(),
        dereverb=config.enable_dr,
        initial_demix=initial_demix,
        ref_channel=config.ref_channel,
    )
    return result.estimate, result.demix
