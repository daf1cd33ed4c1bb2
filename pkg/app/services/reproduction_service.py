from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Tuple

import pandas as pd
import structlog

from app.models.metrics import MetricsReport, OrderingCheck
from app.models.run import RunConfig
from app.services.metrics_service import check_orderings, metrics_service
from app.services.pipeline_service import process
from app.services.scenario_service import build_living_room_scenario
from app.utils.stft_utils import analyze, synthesize

logger = structlog.get_logger(__name__)


def run_cell(payload: Dict[str, Any]) -> List[Dict[str, Any]]:
    """
    One (seed, RT60, SER) cell: synthesize the scenario and score every algorithm.

    Takes and returns plain data so it can run in a worker process.
    """
    config = RunConfig.model_validate(payload["config"])
    seed, rt60, ser_db = payload["seed"], payload["rt60"], payload["ser_db"]
    scenario = build_living_room_scenario(
        seed,
        rt60,
        ser_db,
        config.sir_db,
        config.segment_seconds,
        config.sample_rate,
        config.room_override(),
    )
    stft = config.stft_config()
    x = analyze(scenario.mic_signals, stft)
    r = analyze(scenario.farend_reference, stft)

    reports = []
    for algorithm in config.algorithms:
        estimate, _ = process(x, r, config, algorithm)
        report = metrics_service.evaluate(synthesize(estimate), scenario, algorithm.value, seed)
        reports.append(report.model_dump())
    logger.info("Reproduction cell finished", seed=seed, rt60=rt60, ser_db=ser_db)
    return reports


class ReproductionService:
    """Seeds x RT60 x SER grid of scenarios scored for every configured algorithm."""

    def cells(self, config: RunConfig) -> List[Dict[str, Any]]:
        """Cell payloads; experiment i uses seed SEED + i under every condition."""
        config_data = config.model_dump(mode="json", by_alias=True)
        return [
            {"config": config_data, "seed": config.seed + index, "rt60": rt60, "ser_db": ser_db}
            for rt60 in config.rt60_grid
            for ser_db in config.ser_grid
            for index in range(config.num_seeds)
        ]

    def run(self, config: RunConfig) -> Tuple[List[MetricsReport], Dict[str, pd.DataFrame], List[OrderingCheck]]:
        """
        Run every cell, sequentially or in a WORKERS process pool.

        Returns:
            (reports, mean improvement tables, ordering checks)
        """
        payloads = self.cells(config)
        logger.info("Reproduction started", cells=len(payloads), workers=config.workers, algorithms=[a.value for a in config.algorithms])
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(run_cell, payloads))
        else:
            results = [run_cell(payload) for payload in payloads]

        reports = [MetricsReport.model_validate(item) for cell in results for item in cell]
        tables = metrics_service.aggregate_reports(reports)
        checks = check_orderings(tables)
        return reports, tables, checks


# Global reproduction service instance
reproduction_service = ReproductionService()
