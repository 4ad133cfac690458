# crud.py
import logging
from typing import Optional, Sequence, Type

from fastapi import HTTPException
from sqlalchemy import asc, desc
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from .exceptions import InputError, RecordNotFoundError
from .models import BacktestRecord, EvaluationRecord, ExperimentRun, RunKind, RunStatus
from .schemas import BacktestRecordSchema, EvaluationRow, RunSchema

logger = logging.getLogger(__name__)


def apply_filters_and_sorting(
    query, model: Type, filters: Optional[dict] = None, order_by: Optional[str] = None
):
    # Apply filters
    if filters:
        for field, value in filters.items():
            if hasattr(model, field):
                query = query.filter(getattr(model, field) == value)
            else:
                raise InputError(f"Invalid filter field: {field}")

    # Apply sorting
    if order_by:
        field_name = order_by.lstrip("-")
        if not hasattr(model, field_name):
            raise InputError(f"Invalid order_by field: {field_name}")

        order_func = desc if order_by.startswith("-") else asc
        query = query.order_by(order_func(getattr(model, field_name)))

    return query


def create_run(db: Session, kind: RunKind, config_hash: str, seed: int, units: str,
               n_failures: int = 0) -> RunSchema:
    db_run = ExperimentRun(
        kind=RunKind(kind),
        status=RunStatus.PARTIAL if n_failures else RunStatus.COMPLETED,
        config_hash=config_hash,
        seed=seed,
        units=units,
        n_failures=n_failures
    )
    try:
        db.add(db_run)
        db.commit()
        db.refresh(db_run)
    except SQLAlchemyError:
        db.rollback()
        logger.exception("Failed to store run")
        raise
    logger.info("Stored %s run %s", db_run.kind.value, db_run.run_corr_id)
    return RunSchema.model_validate(db_run)


def add_evaluation_rows(db: Session, run_id: str, rows: Sequence[EvaluationRow]) -> int:
    try:
        db.add_all([EvaluationRecord(run_corr_id=run_id, **row.model_dump()) for row in rows])
        db.commit()
    except SQLAlchemyError:
        db.rollback()
        logger.exception("Failed to store evaluation rows of run %s", run_id)
        raise
    return len(rows)


def add_backtest_reports(db: Session, run_id: str, reports: Sequence[BacktestRecordSchema]) -> int:
    try:
        db.add_all([BacktestRecord(run_corr_id=run_id, **report.model_dump()) for report in reports])
        db.commit()
    except SQLAlchemyError:
        db.rollback()
        logger.exception("Failed to store backtest reports of run %s", run_id)
        raise
    return len(reports)


def get_runs(
    db: Session,
    skip: int = 0,
    limit: int = 10,
    order_by: Optional[str] = None,
    filters: Optional[dict] = None
) -> Sequence[RunSchema]:
    query = db.query(ExperimentRun)
    query = apply_filters_and_sorting(query, ExperimentRun, filters, order_by)
    query = query.offset(skip).limit(limit)

    try:
        return [RunSchema.model_validate(db_run) for db_run in query.all()]
    except SQLAlchemyError:
        raise HTTPException(
            status_code=500, detail="Database error while retrieving runs.")


def get_run_by_id(db: Session, run_id: str) -> RunSchema:
    db_run = db.query(ExperimentRun).filter(ExperimentRun.run_corr_id == run_id).first()
    if db_run is None:
        raise RecordNotFoundError(f"Run {run_id} not found")
    return RunSchema.model_validate(db_run)


def get_run_rows(
    db: Session,
    run_id: str,
    skip: int = 0,
    limit: int = 100,
    filters: Optional[dict] = None
) -> Sequence[EvaluationRow]:
    get_run_by_id(db, run_id)
    query = db.query(EvaluationRecord).filter(EvaluationRecord.run_corr_id == run_id)
    query = apply_filters_and_sorting(query, EvaluationRecord, filters, "id")
    return [EvaluationRow.model_validate(record) for record in query.offset(skip).limit(limit).all()]


def get_run_tests(
    db: Session,
    run_id: str,
    skip: int = 0,
    limit: int = 100,
    filters: Optional[dict] = None
) -> Sequence[BacktestRecordSchema]:
    get_run_by_id(db, run_id)
    query = db.query(BacktestRecord).filter(BacktestRecord.run_corr_id == run_id)
    query = apply_filters_and_sorting(query, BacktestRecord, filters, "id")
    return [BacktestRecordSchema.model_validate(record)
            for record in query.offset(skip).limit(limit).all()]
