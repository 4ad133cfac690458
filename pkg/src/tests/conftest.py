import tempfile

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from internal.database import Base
from internal.models import BacktestRecord, EvaluationRecord, ExperimentRun, RunKind, RunStatus
from internal.schemas import EstimationConfig, GarchParams
from internal.simulate import garch_simulate

RUN_ID = "01F8MECHZX3TBDSZ7XRADM79XV"


@pytest.fixture(scope="session")
def test_db():
    """
    Set up a file-based SQLite database for testing that persists throughout the test session.
    """
    # Create a temporary file for the SQLite database
    temp_db = tempfile.NamedTemporaryFile(suffix=".db", delete=False)
    engine = create_engine(f"sqlite:///{temp_db.name}")
    TestingSessionLocal = sessionmaker(
        autocommit=False, autoflush=False, bind=engine)

    # Create tables
    Base.metadata.create_all(bind=engine)

    # Initialize session
    db = TestingSessionLocal()

    # Prepopulate the database with one evaluation run
    run = ExperimentRun(
        run_corr_id=RUN_ID,
        kind=RunKind.EVALUATION,
        status=RunStatus.COMPLETED,
        config_hash="0123456789abcdef",
        seed=7,
        units="percent",
        n_failures=0,
    )
    row = EvaluationRecord(
        run_corr_id=RUN_ID,
        model="CAESAR",
        asset="SPX",
        fold=0,
        theta=0.05,
        barrera=3.2,
        patton=1.4,
        pinball=0.11,
        violation_rate=0.048,
        monotonicity_violation_rate=0.0,
        unstable=False,
        model_hash="fedcba9876543210",
        config_hash="0123456789abcdef",
        seed=7,
    )
    test = BacktestRecord(
        run_corr_id=RUN_ID,
        model="CAESAR",
        asset="SPX",
        fold=0,
        theta=0.05,
        test="MNF",
        statistic=-0.02,
        p_value=0.41,
        reject=False,
    )
    db.add(run)
    db.add(row)
    db.add(test)
    db.commit()

    yield db

    # Teardown: Drop tables and close the engine
    db.close()
    Base.metadata.drop_all(bind=engine)
    temp_db.close()


@pytest.fixture(scope="session")
def fast_estimation() -> EstimationConfig:
    """A small search budget that keeps fits in the sub-second range."""
    return EstimationConfig(n_starts=20, n_keep=2, n_chained=2, max_iter=400, tol=1e-6, seed=3)


@pytest.fixture(scope="session")
def garch_params() -> GarchParams:
    # percentage-scale daily returns, unconditional sd about 1.6
    return GarchParams(omega=0.05, alpha=0.08, beta_g=0.90)


@pytest.fixture(scope="session")
def garch_series(garch_params):
    series, sigma = garch_simulate(garch_params, 800, seed=11, name="garch")
    return series, sigma


@pytest.fixture(scope="session")
def normal_returns() -> np.ndarray:
    return np.random.default_rng(5).standard_normal(2000)
