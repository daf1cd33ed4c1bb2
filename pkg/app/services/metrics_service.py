from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from app.models.metrics import MetricsReport, OrderingCheck
from app.models.scenario import ScenarioBundle, Segment
from app.models.separation import Algorithm
from app.templates.report_templates import ORDERING_LINE, RUN_REPORT, TABLE_BLOCK, TABLE_TITLES
from app.utils.error_handling import DegenerateInputError, UsageError
from app.utils.file_utils import ensure_directory

logger = structlog.get_logger(__name__)

SDR_CAP_DB = 100.0
IMPROVEMENT_METRICS = ("sdr_improve_db", "sier_improve_db", "siir_improve_db")
ORDERING_SLACK_DB = 0.3
ORDERING_RT60 = 0.3


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """
    Scale-invariant signal-to-distortion ratio in dB, capped at +/-100 dB.

    Args:
        estimate: Estimated signal
        reference: Reference signal (nonzero)

    Returns:
        10 log10(|a ref|^2 / |a ref - est|^2) with the optimal scalar a
    """
    estimate = np.asarray(estimate, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    if estimate.shape != reference.shape:
        raise UsageError("Estimate and reference lengths differ", estimate=estimate.size, reference=reference.size)
    reference_energy = np.dot(reference, reference)
    if reference_energy <= 0.0:
        raise DegenerateInputError("Reference signal is silent")

    target = np.dot(estimate, reference) / reference_energy * reference
    target_energy = np.dot(target, target)
    noise = target - estimate
    noise_energy = np.dot(noise, noise)
    if noise_energy <= 0.0:
        return SDR_CAP_DB
    if target_energy <= 0.0:
        return -SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(target_energy / noise_energy), -SDR_CAP_DB, SDR_CAP_DB))


def segment_ratio(values: np.ndarray, seg_num: Segment, seg_den: Segment) -> float:
    """
    Energy ratio of two segments in dB.

    Args:
        values: 1-D signal
        seg_num: Numerator segment
        seg_den: Denominator segment

    Returns:
        10 log10(E_num / E_den), clipped to +/-100 dB
    """
    values = np.asarray(values, dtype=float).ravel()
    denominator = values[seg_den.slice]
    if denominator.size == 0 or not np.any(denominator):
        raise DegenerateInputError(f"Segment {seg_den.name} is empty or silent")
    numerator_energy = float(np.sum(values[seg_num.slice] ** 2))
    if numerator_energy <= 0.0:
        return -SDR_CAP_DB
    ratio = numerator_energy / np.sum(denominator ** 2)
    return float(np.clip(10.0 * np.log10(ratio), -SDR_CAP_DB, SDR_CAP_DB))


def _bounded_ratio(values: np.ndarray, seg_num: Segment, seg_den: Segment) -> float:
    try:
        return segment_ratio(values, seg_num, seg_den)
    except DegenerateInputError:
        logger.warning("Silent denominator segment, ratio capped", segment=seg_den.name)
        return SDR_CAP_DB


def _scores(values: np.ndarray, scenario: ScenarioBundle) -> tuple:
    overlap = scenario.segment("III")
    sdr = si_sdr(values[overlap.slice], scenario.groundtruth_target_early[overlap.slice])
    sier = _bounded_ratio(values, overlap, scenario.segment("IV"))
    siir = _bounded_ratio(values, scenario.segment("II"), scenario.segment("I"))
    return sdr, sier, siir


def render_report(report: MetricsReport) -> str:
    return RUN_REPORT.format(**report.model_dump())


def reports_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    return pd.DataFrame([report.model_dump() for report in reports])


def render_tables(tables: Dict[str, pd.DataFrame]) -> str:
    blocks = []
    for metric, table in tables.items():
        body = table.to_string(float_format=lambda value: f"{value:7.2f}")
        blocks.append(TABLE_BLOCK.format(title=TABLE_TITLES.get(metric, metric), count=table.attrs.get("count", 1), body=body))
    return "\n".join(blocks)


def _cell(table: pd.DataFrame, algorithm: Algorithm, rt60: float, ser_db: float) -> Optional[float]:
    if algorithm.value not in table.index:
        return None
    for column in table.columns:
        if np.isclose(column[0], rt60) and np.isclose(column[1], ser_db):
            value = table.loc[algorithm.value, column]
            return None if pd.isna(value) else float(value)
    return None


def _at_least(claim: str, left: Optional[float], right: Optional[float], slack: float) -> OrderingCheck:
    if left is None or right is None:
        return OrderingCheck(claim=claim, passed=None, detail="cells missing")
    return OrderingCheck(claim=claim, passed=bool(left >= right - slack), detail=f"{left:.2f} vs {right:.2f}")


def check_orderings(tables: Dict[str, pd.DataFrame], slack: float = ORDERING_SLACK_DB) -> List[OrderingCheck]:
    """
    Check the expected algorithm orderings at RT60 = 0.3 s.

    SDR: DRAEC-BSS >= AEC-DR-BSS >= DR-AEC-BSS >= JOINT-SS for both SERs,
    DRAEC-BSS >= 5 dB at SER 0 and >= 10 dB at SER -10; SIER: AEC-DR-BSS
    above DR-AEC-BSS at SER -10. Each inequality allows ``slack`` dB.

    Returns:
        One OrderingCheck per claim; passed is None when cells are missing
    """
    sdr = tables["sdr_improve_db"]
    sier = tables["sier_improve_db"]
    chain = (Algorithm.DRAEC_BSS, Algorithm.AEC_DR_BSS, Algorithm.DR_AEC_BSS, Algorithm.JOINT_SS)
    checks = []
    for ser_db in (0.0, -10.0):
        for better, worse in zip(chain, chain[1:]):
            claim = f"SDR {better.value} >= {worse.value} at RT60={ORDERING_RT60}, SER={ser_db:g}"
            checks.append(
                _at_least(claim, _cell(sdr, better, ORDERING_RT60, ser_db), _cell(sdr, worse, ORDERING_RT60, ser_db), slack)
            )
    for ser_db, floor in ((0.0, 5.0), (-10.0, 10.0)):
        claim = f"SDR {Algorithm.DRAEC_BSS.value} >= {floor:g} dB at RT60={ORDERING_RT60}, SER={ser_db:g}"
        checks.append(_at_least(claim, _cell(sdr, Algorithm.DRAEC_BSS, ORDERING_RT60, ser_db), floor, 0.0))
    claim = f"SIER {Algorithm.AEC_DR_BSS.value} >= {Algorithm.DR_AEC_BSS.value} at RT60={ORDERING_RT60}, SER=-10"
    checks.append(
        _at_least(
            claim,
            _cell(sier, Algorithm.AEC_DR_BSS, ORDERING_RT60, -10.0),
            _cell(sier, Algorithm.DR_AEC_BSS, ORDERING_RT60, -10.0),
            slack,
        )
    )

    for check in checks:
        if check.passed is False:
            logger.warning("Ordering check failed", claim=check.claim, detail=check.detail)
        else:
            logger.info("Ordering check", claim=check.claim, passed=check.passed, detail=check.detail)
    return checks


def render_checks(checks: Sequence[OrderingCheck]) -> str:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}
    return "\n".join(
        ORDERING_LINE.format(status=status[check.passed], claim=check.claim, detail=f" ({check.detail})" if check.detail else "")
        for check in checks
    )


class MetricsService:
    """Scoring of separated signals and the aggregate improvement tables."""

    def evaluate(
        self,
        separated: np.ndarray,
        scenario: ScenarioBundle,
        algorithm: str = "MIXTURE",
        seed: Optional[int] = None,
    ) -> MetricsReport:
        """
        SDR, SIER and SIIR of a separated signal and their improvements over microphone 1.

        Multichannel input is scored per channel and the channel with the highest
        segment-III SDR is reported.

        Args:
            separated: (samples,) or (outputs, samples) time-domain estimate
            scenario: Scenario the estimate was computed from
            algorithm: Label stored in the report
            seed: Seed label; the scenario seed by default

        Returns:
            MetricsReport
        """
        outputs = np.atleast_2d(np.asarray(separated, dtype=float))
        if outputs.shape[-1] != scenario.n_samples:
            raise UsageError("Separated signal length differs from the scenario", samples=outputs.shape[-1], expected=scenario.n_samples)

        baseline = _scores(scenario.mic_signals[0], scenario)
        candidates = [_scores(channel, scenario) for channel in outputs]
        selected = int(np.argmax([scores[0] for scores in candidates]))
        sdr, sier, siir = candidates[selected]

        report = MetricsReport(
            algorithm=algorithm,
            rt60=scenario.spec.room.rt60,
            ser_db=scenario.spec.ser_db,
            seed=scenario.spec.seed if seed is None else seed,
            selected_output=selected,
            sdr_db=sdr,
            sier_db=sier,
            siir_db=siir,
            sdr_improve_db=sdr - baseline[0],
            sier_improve_db=sier - baseline[1],
            siir_improve_db=siir - baseline[2],
        )
        logger.info(
            "Evaluated output",
            algorithm=algorithm,
            selected_output=selected,
            sdr_improve_db=round(report.sdr_improve_db, 3),
            sier_improve_db=round(report.sier_improve_db, 3),
            siir_improve_db=round(report.siir_improve_db, 3),
        )
        return report

    def aggregate_reports(self, reports: Sequence[MetricsReport]) -> Dict[str, pd.DataFrame]:
        """
        Mean improvement tables, rows = algorithm, columns = (RT60, SER).

        Args:
            reports: Per-run reports

        Returns:
            Mapping of improvement metric name to table
        """
        if not reports:
            raise UsageError("No reports to aggregate")
        frame = reports_frame(reports)
        tables = {}
        for metric in IMPROVEMENT_METRICS:
            table = frame.pivot_table(index="algorithm", columns=["rt60", "ser_db"], values=metric, aggfunc="mean")
            table.attrs["count"] = int(frame.groupby(["algorithm", "rt60", "ser_db"]).size().min())
            tables[metric] = table.sort_index(axis=1, ascending=[True, False])
        return tables

    def write_tables(self, tables: Dict[str, pd.DataFrame], directory: str, checks: Optional[List[OrderingCheck]] = None) -> Dict[str, str]:
        """
        Write every table as CSV plus one text file with all tables and the ordering checks.

        Returns:
            Mapping of artifact name to path
        """
        root = ensure_directory(directory)
        paths = {}
        for metric, table in tables.items():
            path = root / f"{metric}.csv"
            table.to_csv(path)
            paths[metric] = str(path)
        text = render_tables(tables)
        if checks:
            text += "\n" + render_checks(checks) + "\n"
        summary = Path(root) / "tables.txt"
        summary.write_text(text)
        paths["tables"] = str(summary)
        return paths


metrics_service = MetricsService()
