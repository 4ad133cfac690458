# app.py
from contextlib import asynccontextmanager
from typing import Any, Optional, Sequence

from fastapi import Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse, RedirectResponse
from sqlalchemy.orm import Session

from internal import crud, schemas
from internal.backtest import direct_tests
from internal.caesar import CaesarModel, JointState, caesar_forecast
from internal.database import get_db, init_db
from internal.exceptions import (DomainError, EstimationError, FilterDivergenceError, InputError,
                                 RecordNotFoundError)
from internal.models import RunKind


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Creates the results tables on startup.
    """
    init_db()
    yield

app = FastAPI(
    title="Tail Risk Results API",
    description=(
        "This API exposes stored experiment runs of the joint VaR/ES estimators "
        "together with their evaluation rows and backtest outcomes. It also "
        "serves one-step CAESar forecasts from a fitted model and runs the "
        "direct ES backtests on submitted forecast paths."
    ),
    version="1.0.0",
    license_info={
        "name": "Apache 2.0",
        "url": "https://www.apache.org/licenses/LICENSE-2.0.html",
    },
    lifespan=lifespan,
)


@app.get("/", include_in_schema=False)
def root():
    return RedirectResponse(url="/docs")


@app.exception_handler(InputError)
async def handle_input_error(request: Request, exc: InputError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(RecordNotFoundError)
async def handle_not_found(request: Request, exc: RecordNotFoundError) -> JSONResponse:
    return JSONResponse(status_code=404, content={"detail": str(exc)})


@app.exception_handler(DomainError)
async def handle_domain_error(request: Request, exc: DomainError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(EstimationError)
async def handle_estimation_error(request: Request, exc: EstimationError) -> JSONResponse:
    return JSONResponse(status_code=422, content={"detail": str(exc), "diagnostics": exc.diagnostics})


@app.exception_handler(FilterDivergenceError)
async def handle_divergence(request: Request, exc: FilterDivergenceError) -> JSONResponse:
    return JSONResponse(status_code=422, content={"detail": str(exc), "index": exc.index})


# Run Operations
@app.get("/runs/", response_model=Sequence[schemas.RunSchema], summary="List experiment runs")
def get_runs(
    skip: int = Query(0, alias="offset", ge=0, description="The number of records to skip."),
    limit: int = Query(10, le=100, description="The number of records to return, maximum 100."),
    order_by: Optional[str] = Query(
        None, description="Field to order by, prefix with - for descending."),
    kind: Optional[str] = Query(None, description="Filter by run kind"),
    config_hash: Optional[str] = Query(None, description="Filter by configuration hash"),
    db: Session = Depends(get_db),
) -> Sequence[schemas.RunSchema]:
    """
    Get a list of runs with optional filtering, sorting, and pagination.

    - **offset**: The number of items to skip.
    - **limit**: The number of items to return.
    - **order_by**: Field to sort by, with "-" for descending order.
    - **kind**: fit, simulation, evaluation or backtest.
    - **config_hash**: Runs produced by one configuration.
    """
    filters: dict[str, Any] = {}
    if kind is not None:
        try:
            filters["kind"] = RunKind(kind)
        except ValueError:
            raise InputError(f"Unknown run kind: {kind}")
    if config_hash is not None:
        filters["config_hash"] = config_hash

    return crud.get_runs(db=db, skip=skip, limit=limit, order_by=order_by, filters=filters)


@app.get("/runs/{id}", response_model=schemas.RunSchema, summary="Get a run by ID")
def get_run(id: str, db: Session = Depends(get_db)) -> schemas.RunSchema:
    """
    Get a specific run by its ULID.
    """
    return crud.get_run_by_id(db, id)


@app.get("/runs/{id}/rows", response_model=Sequence[schemas.EvaluationRow],
         summary="Get the evaluation rows of a run")
def get_run_rows(
    id: str,
    skip: int = Query(0, alias="offset", ge=0),
    limit: int = Query(100, le=1000),
    model: Optional[str] = Query(None, description="Filter by model name"),
    asset: Optional[str] = Query(None, description="Filter by asset or DGP"),
    db: Session = Depends(get_db),
) -> Sequence[schemas.EvaluationRow]:
    filters: dict[str, Any] = {}
    if model is not None:
        filters["model"] = model
    if asset is not None:
        filters["asset"] = asset
    return crud.get_run_rows(db, id, skip, limit, filters)


@app.get("/runs/{id}/tests", response_model=Sequence[schemas.BacktestRecordSchema],
         summary="Get the backtest outcomes of a run")
def get_run_tests(
    id: str,
    skip: int = Query(0, alias="offset", ge=0),
    limit: int = Query(100, le=1000),
    test: Optional[str] = Query(None, description="Filter by test name, e.g. MNF or DM"),
    db: Session = Depends(get_db),
) -> Sequence[schemas.BacktestRecordSchema]:
    filters: dict[str, Any] = {}
    if test is not None:
        filters["test"] = test
    return crud.get_run_tests(db, id, skip, limit, filters)


# Model Operations
@app.post("/forecast", response_model=schemas.ForecastResponse, summary="One-step CAESar forecast")
def forecast(request: schemas.ForecastRequest) -> schemas.ForecastResponse:
    """
    Apply a fitted CAESar model to the latest observations and estimates.

    - **model**: The model JSON written by `tailrisk fit`.
    - **state**: Recent returns, VaR and ES values, oldest first.
    """
    model = CaesarModel.from_schema(request.model)
    state = JointState(request.state.y, request.state.q, request.state.e)  # type: ignore
    q_next, e_next = caesar_forecast(model, state)
    return schemas.ForecastResponse(q_next=q_next, e_next=e_next)


@app.post("/backtest", response_model=list[schemas.TestReport], summary="Direct ES backtests")
def backtest(request: schemas.BacktestRequest) -> list[schemas.TestReport]:
    """
    Run the McNeil-Frey and Acerbi-Szekely tests on one forecast path.
    """
    return direct_tests(request.y, request.q, request.e, request.theta, request.n_boot,
                        request.seed)
