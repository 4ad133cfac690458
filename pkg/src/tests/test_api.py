import pytest
from fastapi.testclient import TestClient

from app import app
from internal.caesar import CaesarModel, CaesarParams
from internal.caviar import CaviarSpec
from internal.database import get_db

RUN_ID = "01F8MECHZX3TBDSZ7XRADM79XV"

# Override the get_db dependency with the test database session


@pytest.fixture(scope="function")
def override_get_db(test_db):
    """
    Override FastAPI's get_db dependency with the test database session.
    """
    def _override_get_db():
        yield test_db

    return _override_get_db


@pytest.fixture(scope="function")
def client(override_get_db):
    # Override FastAPI's get_db dependency
    app.dependency_overrides[get_db] = override_get_db
    with TestClient(app) as c:
        yield c
    app.dependency_overrides.clear()


def persistent_model_json() -> dict:
    params = CaesarParams([0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0])
    return CaesarModel(CaviarSpec(), 0.05, params, -1.0, -2.0).to_schema().model_dump(mode="json")


def test_get_runs(client) -> None:
    # When: Making a GET request to /runs/
    response = client.get("/runs/")

    # Then: The response should include the prepopulated run
    assert response.status_code == 200
    data = response.json()
    assert len(data) == 1
    assert data[0]["run_corr_id"] == RUN_ID
    assert data[0]["kind"] == "evaluation"


def test_get_runs_by_kind(client) -> None:
    assert client.get("/runs/", params={"kind": "simulation"}).json() == []
    assert client.get("/runs/", params={"kind": "weekly"}).status_code == 400


def test_get_runs_bad_order_field(client) -> None:
    response = client.get("/runs/", params={"order_by": "-colour"})

    assert response.status_code == 400
    assert "colour" in response.json()["detail"]


def test_get_run(client) -> None:
    response = client.get(f"/runs/{RUN_ID}")

    assert response.status_code == 200
    assert response.json()["seed"] == 7


def test_get_missing_run(client) -> None:
    response = client.get("/runs/01F8MECHZX3TBDSZ7XRADM79XW")

    assert response.status_code == 404


def test_get_run_rows_and_tests(client) -> None:
    # When: Fetching the rows and tests of the run
    rows = client.get(f"/runs/{RUN_ID}/rows", params={"asset": "SPX"})
    tests = client.get(f"/runs/{RUN_ID}/tests", params={"test": "MNF"})

    # Then: Each holds the prepopulated record
    assert rows.status_code == 200
    assert rows.json()[0]["model"] == "CAESAR"
    assert tests.status_code == 200
    assert tests.json()[0]["statistic"] == pytest.approx(-0.02)


def test_forecast(client) -> None:
    # Given: A pure-persistence model and a recent state
    payload = {"model": persistent_model_json(),
               "state": {"y": [0.3], "q": [-1.4], "e": [-2.2]}}

    # When: Requesting the next VaR and ES
    response = client.post("/forecast", json=payload)

    # Then: The last estimates are carried forward
    assert response.status_code == 200
    assert response.json() == pytest.approx({"q_next": -1.4, "e_next": -2.2})


def test_forecast_with_short_state(client) -> None:
    model = persistent_model_json()
    model["spec"]["p"] = 2
    model["beta"] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    model["gamma"] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]

    response = client.post("/forecast", json={"model": model,
                                              "state": {"y": [0.3], "q": [-1.4], "e": [-2.2]}})

    assert response.status_code == 400


def test_backtest(client) -> None:
    # Given: Forecasts whose violations land on the ES
    y = [-2.0, 0.5, -3.0, 1.0] * 10
    q = [-1.0] * 40
    e = [v if v < 0 else -2.5 for v in y]

    # When: Running the direct tests
    response = client.post("/backtest", json={"y": y, "q": q, "e": e, "theta": 0.05,
                                              "n_boot": 200})

    # Then: Three reports come back in a fixed order
    assert response.status_code == 200
    data = response.json()
    assert [r["name"] for r in data] == ["MNF", "AS-Z1", "AS-Z2"]
    assert data[1]["statistic"] == pytest.approx(1.0)


def test_backtest_length_mismatch(client) -> None:
    response = client.post("/backtest", json={"y": [0.0, 1.0], "q": [-1.0], "e": [-2.0, -2.0],
                                              "theta": 0.05})

    assert response.status_code == 422
