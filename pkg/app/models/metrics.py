from typing import Optional

from pydantic import BaseModel


class MetricsReport(BaseModel):
    algorithm: str = "MIXTURE"
    rt60: Optional[float] = None
    ser_db: Optional[float] = None
    seed: Optional[int] = None
    selected_output: int = 0
    sdr_db: float
    sier_db: float
    siir_db: float
    sdr_improve_db: float = 0.0
    sier_improve_db: float = 0.0
    siir_improve_db: float = 0.0


class OrderingCheck(BaseModel):
    claim: str
    passed: Optional[bool] = None  # None when the table lacks the cells
    detail: str = ""
