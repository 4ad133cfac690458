# models.py
from datetime import datetime, timezone
from enum import Enum

import ulid
from sqlalchemy import Boolean, Column, DateTime
from sqlalchemy import Enum as SQLAlchemyEnum
from sqlalchemy import Float, ForeignKey, Integer, String
from sqlalchemy.orm import Mapped, relationship

from .database import Base


class ReturnMode(Enum):
    LOG = "log"
    PCT = "pct"


class ReturnUnits(Enum):
    RAW = "raw"
    PERCENT = "percent"


class SpecKind(Enum):
    """
    AS: asymmetric slope, regressors ((y)^+, (y)^-).
    SAV: symmetric absolute value, regressor |y|.
    IG: indirect GARCH, regressor y^2, recursion on the squared scale.
    """
    AS = "AS"
    SAV = "SAV"
    IG = "IG"


class LossVariant(Enum):
    BOTH = "BOTH"
    BARRERA_ONLY = "BARRERA_ONLY"
    PATTON_ONLY = "PATTON_ONLY"


class GasVariant(Enum):
    ONE = "ONE"
    TWO = "TWO"


class Innovation(Enum):
    NORMAL = "NORMAL"
    STUDENT = "STUDENT"


class ZVariant(Enum):
    Z1 = "Z1"
    Z2 = "Z2"


class ModelName(Enum):
    CAESAR = "CAESAR"
    CAVIAR = "CAVIAR"
    KCAVIAR = "KCAVIAR"
    GAS1 = "GAS1"
    GAS2 = "GAS2"
    B_CAESAR = "B_CAESAR"
    P_CAESAR = "P_CAESAR"
    CAESAR_NO_CROSS = "CAESAR_NO_CROSS"


class RunKind(Enum):
    FIT = "fit"
    SIMULATION = "simulation"
    EVALUATION = "evaluation"
    BACKTEST = "backtest"


class RunStatus(Enum):
    COMPLETED = "Completed"
    PARTIAL = "Partial"  # at least one cell failed


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id: Mapped[int] = Column(Integer, primary_key=True,
                             index=True)  # type: ignore
    run_corr_id: Mapped[str] = Column(String, unique=True, default=lambda: str(
        ulid.new()), index=True)  # type: ignore
    kind: Mapped[RunKind] = Column(SQLAlchemyEnum(RunKind))  # type: ignore
    status: Mapped[RunStatus] = Column(SQLAlchemyEnum(RunStatus),
                                       default=RunStatus.COMPLETED)  # type: ignore
    config_hash: Mapped[str] = Column(String, index=True)  # type: ignore
    seed: Mapped[int] = Column(Integer)  # type: ignore
    units: Mapped[str] = Column(String)  # type: ignore
    n_failures: Mapped[int] = Column(Integer, default=0)  # type: ignore
    timestamp: Mapped[datetime] = Column(
        DateTime, default=lambda: datetime.now(timezone.utc))  # type: ignore

    rows: Mapped[list["EvaluationRecord"]] = relationship(
        "EvaluationRecord", back_populates="run")  # type: ignore
    tests: Mapped[list["BacktestRecord"]] = relationship(
        "BacktestRecord", back_populates="run")  # type: ignore


class EvaluationRecord(Base):
    __tablename__ = "evaluation_rows"

    id: Mapped[int] = Column(Integer, primary_key=True,
                             index=True)  # type: ignore
    run_corr_id: Mapped[str] = Column(
        String, ForeignKey("experiment_runs.run_corr_id"), index=True)  # type: ignore
    model: Mapped[str] = Column(String, index=True)  # type: ignore
    # Asset name or DGP id
    asset: Mapped[str] = Column(String, index=True)  # type: ignore
    # Fold index or series index
    fold: Mapped[int] = Column(Integer)  # type: ignore
    theta: Mapped[float] = Column(Float)  # type: ignore
    mae: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    rmse: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    barrera: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    patton: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    pinball: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    violation_rate: Mapped[float | None] = Column(Float, nullable=True)  # type: ignore
    monotonicity_violation_rate: Mapped[float | None] = Column(
        Float, nullable=True)  # type: ignore
    unstable: Mapped[bool] = Column(Boolean, default=False)  # type: ignore
    error: Mapped[str | None] = Column(String, nullable=True)  # type: ignore
    model_hash: Mapped[str | None] = Column(String, nullable=True)  # type: ignore
    config_hash: Mapped[str] = Column(String)  # type: ignore
    seed: Mapped[int] = Column(Integer)  # type: ignore

    run: Mapped["ExperimentRun"] = relationship(
        "ExperimentRun", back_populates="rows")  # type: ignore


class BacktestRecord(Base):
    __tablename__ = "backtest_reports"

    id: Mapped[int] = Column(Integer, primary_key=True,
                             index=True)  # type: ignore
    run_corr_id: Mapped[str] = Column(
        String, ForeignKey("experiment_runs.run_corr_id"), index=True)  # type: ignore
    model: Mapped[str] = Column(String, index=True)  # type: ignore
    asset: Mapped[str] = Column(String)  # type: ignore
    fold: Mapped[int] = Column(Integer)  # type: ignore
    theta: Mapped[float] = Column(Float)  # type: ignore
    test: Mapped[str] = Column(String, index=True)  # type: ignore
    statistic: Mapped[float] = Column(Float)  # type: ignore
    p_value: Mapped[float] = Column(Float)  # type: ignore
    reject: Mapped[bool] = Column(Boolean)  # type: ignore

    run: Mapped["ExperimentRun"] = relationship(
        "ExperimentRun", back_populates="tests")  # type: ignore
