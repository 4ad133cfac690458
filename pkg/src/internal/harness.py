# harness.py
"""
Experiment runner: fits every model on the training part of each cell,
filters forward over the test part, and reduces metrics and backtests into
report tables. Cells run concurrently; results are reduced in job order, so
reports do not depend on the worker count.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from sqlalchemy.orm import Session

from . import crud
from .backtest import (direct_tests, dm_test, encompassing_test, loss_difference_test, nadeau_bengio_test,
                       violation_set)
from .caesar import CaesarModel, caesar_fit
from .caviar import CaviarModel, CaviarSpec, caviar_fit
from .core import ForecastPath, ReturnSeries, make_block_folds
from .exceptions import InputError, TailRiskError
from .gas import GasModel, gas_fit
from .kquantile import KCaviarModel, kcaviar_fit
from .losses import barrera_loss, patton_loss, patton_terms, pinball_loss
from .models import GasVariant, LossVariant, ModelName, ReturnUnits, RunKind
from .schemas import (BacktestRecordSchema, CaesarModelSchema, CaviarModelSchema, EstimationConfig,
                      EvaluationRow, ExperimentConfig, GasModelSchema, KCaviarModelSchema,
                      SimulationConfig, TestReport, _ExperimentBase)
from .simulate import DatasetBundle, run_dgp_suite
from .utils import stable_hash

logger = logging.getLogger(__name__)

CAESAR_FAMILY = (ModelName.CAESAR, ModelName.B_CAESAR, ModelName.P_CAESAR,
                 ModelName.CAESAR_NO_CROSS)
DIRECT_TESTS = ("MNF", "AS-Z1", "AS-Z2")
STEP1_LABEL = "CAESAR_STEP1"


def mae_rmse(pred: ArrayLike, truth: ArrayLike) -> tuple[float, float]:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or len(p) == 0:
        raise InputError("Prediction and truth must be non-empty and equally long")
    err = p - t
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def cell_seed(master: int, *keys: int) -> int:
    """Deterministic per-cell seed derived from the master seed and integer keys."""
    return int(np.random.SeedSequence([abs(master), *keys]).generate_state(1)[0])


def estimation_for(name: ModelName, base: EstimationConfig) -> EstimationConfig:
    overrides: dict[str, Any] = {}
    if name is ModelName.B_CAESAR:
        overrides["loss_variant"] = LossVariant.BARRERA_ONLY
    elif name is ModelName.P_CAESAR:
        overrides["loss_variant"] = LossVariant.PATTON_ONLY
    elif name is ModelName.CAESAR_NO_CROSS:
        overrides["no_cross"] = True
    if not overrides:
        return base
    return EstimationConfig.model_validate({**base.model_dump(), **overrides})


@dataclass(frozen=True, eq=False)
class FittedModel:
    name: ModelName
    model: Union[CaesarModel, CaviarModel, KCaviarModel, GasModel]

    @property
    def has_es(self) -> bool:
        return self.name is not ModelName.CAVIAR

    @property
    def unstable(self) -> bool:
        return bool(getattr(self.model, "unstable", False))

    def paths(self, y: ArrayLike, include_next: bool = False) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if not self.has_es:
            return self.model.filter(y, include_next), None  # type: ignore
        path = self.model.filter(y, include_next)
        return path.q, path.e  # type: ignore

    def to_json(self) -> dict[str, Any]:
        return {"model": self.name.value, **self.model.to_schema().model_dump(mode="json")}


def fit_model(name: ModelName, y: ArrayLike, theta: float, config: _ExperimentBase,
              train_range: Optional[range] = None, seed: Optional[int] = None) -> FittedModel:
    name = ModelName(name)
    spec = CaviarSpec.from_schema(config.spec)
    estimation = estimation_for(name, config.estimation)
    if name in CAESAR_FAMILY:
        model: Any = caesar_fit(y, theta, spec, estimation, train_range, seed)
    elif name is ModelName.CAVIAR:
        model = caviar_fit(y, theta, spec, estimation, train_range, seed)
    elif name is ModelName.KCAVIAR:
        model = kcaviar_fit(y, theta, config.kcaviar_n, spec, estimation, train_range, seed)
    else:
        variant = GasVariant.ONE if name is ModelName.GAS1 else GasVariant.TWO
        model = gas_fit(y, theta, variant, estimation, train_range, seed,
                        config.gas_instability_factor)
    return FittedModel(name, model)


def load_model(payload: dict[str, Any]) -> FittedModel:
    """Rebuilds a fitted model from the JSON written by FittedModel.to_json."""
    data = dict(payload)
    name = ModelName(data.pop("model", ModelName.CAESAR.value))
    if name in CAESAR_FAMILY:
        model: Any = CaesarModel.from_schema(CaesarModelSchema.model_validate(data))
    elif name is ModelName.CAVIAR:
        model = CaviarModel.from_schema(CaviarModelSchema.model_validate(data))
    elif name is ModelName.KCAVIAR:
        model = KCaviarModel.from_schema(KCaviarModelSchema.model_validate(data))
    else:
        model = GasModel.from_schema(GasModelSchema.model_validate(data))
    return FittedModel(name, model)


def score_cell(y: np.ndarray, q: np.ndarray, e: Optional[np.ndarray], theta: float,
               truth_e: Optional[np.ndarray] = None) -> dict[str, Optional[float]]:
    """Out-of-sample losses and rates of one cell; ES metrics are None without an ES path."""
    n = len(y)
    metrics: dict[str, Optional[float]] = {
        "pinball": pinball_loss(q, y, theta).value,
        "violation_rate": len(violation_set(y, q)) / n,
        "barrera": None, "patton": None, "mae": None, "rmse": None,
        "monotonicity_violation_rate": None,
    }
    if e is None:
        return metrics
    metrics["barrera"] = barrera_loss(e - q, y, q, theta).value
    if np.all(e < 0.0):
        metrics["patton"] = patton_loss(e, q, y, theta).value
    metrics["monotonicity_violation_rate"] = ForecastPath(q, e, theta).monotonicity_violations / n
    if truth_e is not None:
        metrics["mae"], metrics["rmse"] = mae_rmse(e, truth_e)
    return metrics


@dataclass(eq=False)
class CellResult:
    row: EvaluationRow
    theta_index: int
    y_test: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    step1_pinball: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.row.error is None

    @property
    def patton_terms(self) -> Optional[np.ndarray]:
        if self.e is None or self.y_test is None or self.q is None or not np.all(self.e < 0.0):
            return None
        return patton_terms(self.e, self.q, self.y_test, self.row.theta)

    @property
    def path(self) -> Optional[ForecastPath]:
        if self.q is None or self.e is None:
            return None
        return ForecastPath(self.q, self.e, self.row.theta)


@dataclass(frozen=True)
class CellJob:
    model: ModelName
    asset: str
    fold: int
    theta: float
    theta_index: int
    seed: int
    y: np.ndarray = field(repr=False)
    train_len: int = 0
    truth_e: Optional[np.ndarray] = field(default=None, repr=False)


def evaluate_cell(job: CellJob, config: _ExperimentBase, config_hash: str) -> CellResult:
    """Fits on the first train_len points, filters the window, and scores the rest."""
    base = dict(model=job.model.value, asset=job.asset, fold=job.fold, theta=job.theta,
                config_hash=config_hash, seed=job.seed)
    try:
        fitted = fit_model(job.model, job.y, job.theta, config, range(0, job.train_len), job.seed)
        q_all, e_all = fitted.paths(job.y)
        y_test = job.y[job.train_len:]
        q = q_all[job.train_len:]
        e = None if e_all is None else e_all[job.train_len:]
        metrics = score_cell(y_test, q, e, job.theta, job.truth_e)
    except TailRiskError as exc:
        logger.warning("Cell %s/%s/%d/theta=%g failed: %s", job.model.value, job.asset, job.fold,
                       job.theta, exc)
        return CellResult(EvaluationRow(**base, error=f"{type(exc).__name__}: {exc}"),
                          job.theta_index)

    step1 = None
    if isinstance(fitted.model, CaesarModel) and fitted.model.caviar is not None:
        step1 = pinball_loss(fitted.model.caviar.filter(job.y)[job.train_len:], y_test,
                             job.theta).value
    row = EvaluationRow(**base, **metrics, unstable=fitted.unstable,
                        model_hash=stable_hash(fitted.to_json()))
    logger.info("Cell %s/%s/%d/theta=%g done", job.model.value, job.asset, job.fold, job.theta)
    return CellResult(row, job.theta_index, y_test, q, e, step1)


def run_cells(jobs: Sequence[CellJob], config: _ExperimentBase, config_hash: str) -> list[CellResult]:
    with ThreadPoolExecutor(max_workers=config.n_jobs) as executor:
        return list(executor.map(lambda job: evaluate_cell(job, config, config_hash), jobs))


@dataclass(eq=False)
class ExperimentReport:
    kind: RunKind
    rows: list[EvaluationRow]
    tests: list[BacktestRecordSchema]
    tables: dict[str, pd.DataFrame]
    config_hash: str
    seed: int
    units: ReturnUnits
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def n_failures(self) -> int:
        return sum(row.error is not None for row in self.rows)

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "units": self.units.value,
            "n_failures": self.n_failures,
            "rows": [row.model_dump(mode="json") for row in self.rows],
            "tests": [test.model_dump(mode="json") for test in self.tests],
        }


METRIC_COLUMNS = ["mae", "rmse", "barrera", "patton", "pinball", "violation_rate",
                  "monotonicity_violation_rate"]


def _rows_frame(rows: Sequence[EvaluationRow]) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=list(EvaluationRow.model_fields))
    # metrics that are None for every row would otherwise stay object-typed
    frame[METRIC_COLUMNS] = frame[METRIC_COLUMNS].astype(float)
    frame["unstable"] = frame["unstable"].astype(bool)
    return frame


def simulation_table(rows: Sequence[EvaluationRow]) -> pd.DataFrame:
    """
    Mean test-segment MAE/RMSE against the true ES and mean Barrera/Patton
    losses per DGP, theta and model. Unstable and failed series are excluded
    and counted.
    """
    frame = _rows_frame(rows)
    keys = ["asset", "theta", "model"]
    metrics = ["mae", "rmse", "barrera", "patton", "pinball"]
    frame["failed"] = frame["error"].notna()
    usable = frame[~frame["failed"] & ~frame["unstable"]]
    table = usable.groupby(keys, sort=True)[metrics].mean()
    counts = frame.groupby(keys, sort=True).agg(n_series=("fold", "size"),
                                                 n_unstable=("unstable", "sum"),
                                                 n_failed=("failed", "sum"))
    table = counts.join(table, how="left").reset_index().rename(columns={"asset": "dgp"})
    return table


def run_simulation_study(config: SimulationConfig, bundle: Optional[DatasetBundle] = None) -> ExperimentReport:
    """
    Fits every model on the training part of every simulated series and scores
    the test part against the true ES. Model failures are recorded per cell.
    """
    config_hash = stable_hash(config)
    if bundle is None:
        bundle = run_dgp_suite(config.dgps, config.n_series, config.T, config.split, config.thetas,
                               config.seed, config.n_jobs)
    models = [ModelName(m) for m in config.models]

    jobs = []
    for k, dgp in enumerate(bundle.dgps):
        for s in bundle.by_dgp(dgp.name):
            for ti, theta in enumerate(config.thetas):
                truth_e = s.truth[theta][1][s.split:] if theta in s.truth else None
                for mi, name in enumerate(models):
                    jobs.append(CellJob(name, dgp.name, s.index, theta, ti,
                                        cell_seed(config.seed, k, s.index, ti, mi),
                                        s.y.values, s.split, truth_e))

    results = run_cells(jobs, config, config_hash)
    rows = [r.row for r in results]
    tables = {"simulation_table": simulation_table(rows)}
    logger.info("Simulation study finished with %d cells, %d failures",
                len(rows), sum(r.error is not None for r in rows))
    return ExperimentReport(RunKind.SIMULATION, rows, [], tables, config_hash, config.seed,
                            ReturnUnits.RAW, config.model_dump(mode="json"))


def loss_table(rows: Sequence[EvaluationRow]) -> pd.DataFrame:
    """
    Mean and across-fold sd of each test loss per asset, theta and model.
    `outside_caesar_1sd` marks means outside CAESAR's mean +/- one sd.
    """
    frame = _rows_frame([r for r in rows if r.error is None])
    if frame.empty:
        return pd.DataFrame(columns=["asset", "theta", "model", "loss", "mean", "sd",
                                     "outside_caesar_1sd"])
    long = frame.melt(id_vars=["asset", "theta", "model", "fold"],
                      value_vars=["barrera", "patton", "pinball"], var_name="loss").dropna()
    table = (long.groupby(["asset", "theta", "model", "loss"], sort=True)["value"]
             .agg(mean="mean", sd="std").reset_index())
    reference = table[table["model"] == ModelName.CAESAR.value].set_index(["asset", "theta", "loss"])

    def outside(row: pd.Series) -> bool:
        key = (row["asset"], row["theta"], row["loss"])
        if row["model"] == ModelName.CAESAR.value or key not in reference.index:
            return False
        ref = reference.loc[key]
        sd = 0.0 if pd.isna(ref["sd"]) else ref["sd"]
        return bool(abs(row["mean"] - ref["mean"]) > sd)

    table["outside_caesar_1sd"] = table.apply(outside, axis=1) if len(table) else []
    return table


def pinball_difference(results: Sequence[CellResult]) -> pd.DataFrame:
    """Per fold: competitor pinball minus CAESAR pinball on the test segment."""
    caesar = {(r.row.asset, r.row.fold, r.row.theta): r for r in results
              if r.ok and r.row.model == ModelName.CAESAR.value}
    records = []
    for r in results:
        key = (r.row.asset, r.row.fold, r.row.theta)
        if key not in caesar:
            continue
        base = caesar[key]
        if r is base:
            if base.step1_pinball is not None:
                records.append((*key, STEP1_LABEL, base.step1_pinball - base.row.pinball))
            continue
        if r.ok:
            records.append((*key, r.row.model, r.row.pinball - base.row.pinball))
    return pd.DataFrame(records, columns=["asset", "fold", "theta", "model", "pinball_diff"])


def _record(model: str, asset: str, fold: int, theta: float,
            report: TestReport) -> BacktestRecordSchema:
    return BacktestRecordSchema(model=model, asset=asset, fold=fold, theta=theta, test=report.name,
                                statistic=report.statistic, p_value=report.p_value,
                                reject=report.reject_at_5pct)


def cell_backtests(results: Sequence[CellResult], n_boot: int, seed: int) -> list[BacktestRecordSchema]:
    """Direct tests for every cell with an ES path, plus CAESAR-vs-competitor comparisons."""
    records = []
    caesar = {(r.row.asset, r.row.fold, r.row.theta): r for r in results
              if r.ok and r.row.model == ModelName.CAESAR.value}

    for i, r in enumerate(results):
        if not r.ok or r.e is None:
            continue
        key = (r.row.asset, r.row.fold, r.row.theta)
        boot_seed = cell_seed(seed, i)
        try:
            for report in direct_tests(r.y_test, r.q, r.e, r.row.theta, n_boot, boot_seed):
                records.append(_record(r.row.model, *key, report))
        except TailRiskError as exc:
            logger.warning("Direct tests skipped for %s %s: %s", r.row.model, key, exc)

        base = caesar.get(key)
        if base is None or base is r:
            continue
        terms_a, terms_b = base.patton_terms, r.patton_terms
        if terms_a is None or terms_b is None:
            continue
        try:
            records.append(_record(r.row.model, *key, dm_test(terms_a, terms_b)))
            records.append(_record(r.row.model, *key,
                                   loss_difference_test(terms_a, terms_b, n_boot, boot_seed)))
            records.append(_record(r.row.model, *key,
                                   encompassing_test(base.path, r.path, r.y_test, r.row.theta,
                                                     n_boot, boot_seed)))
        except TailRiskError as exc:
            logger.warning("Comparison tests skipped for %s %s: %s", r.row.model, key, exc)
    return records


def rejection_table(tests: Sequence[BacktestRecordSchema]) -> pd.DataFrame:
    """Share of rejected direct tests per model, theta and test."""
    frame = pd.DataFrame([t.model_dump() for t in tests if t.test in DIRECT_TESTS])
    if frame.empty:
        return pd.DataFrame(columns=["model", "theta", "test", "rejection_ratio", "n"])
    return (frame.groupby(["model", "theta", "test"], sort=True)["reject"]
            .agg(rejection_ratio="mean", n="size").reset_index())


def dm_counts(tests: Sequence[BacktestRecordSchema]) -> pd.DataFrame:
    """'g/b' per competitor and theta: g DM rejections favour CAESAR, b favour the competitor."""
    frame = pd.DataFrame([t.model_dump() for t in tests if t.test == "DM"])
    if frame.empty:
        return pd.DataFrame(columns=["model", "theta", "g", "b", "g/b"])
    frame["g"] = frame["reject"] & (frame["statistic"] < 0)
    frame["b"] = frame["reject"] & (frame["statistic"] > 0)
    table = frame.groupby(["model", "theta"], sort=True)[["g", "b"]].sum().reset_index()
    table["g/b"] = table["g"].astype(int).astype(str) + "/" + table["b"].astype(int).astype(str)
    return table


def comparison_counts(tests: Sequence[BacktestRecordSchema]) -> pd.DataFrame:
    """Loss Difference and Encompassing rejections (CAESAR better) per competitor and theta."""
    frame = pd.DataFrame([t.model_dump() for t in tests if t.test in ("LD", "ENC")])
    if frame.empty:
        return pd.DataFrame(columns=["model", "theta", "test", "rejections", "n"])
    return (frame.groupby(["model", "theta", "test"], sort=True)["reject"]
            .agg(rejections="sum", n="size").reset_index())


def nadeau_bengio_table(results: Sequence[CellResult], n_train: int, n_test: int) -> pd.DataFrame:
    """Corrected resampled t-test per asset, theta and competitor on fold-mean Patton losses."""
    by_key: dict[tuple, dict[str, float]] = {}
    for r in results:
        if r.ok and r.row.patton is not None:
            by_key.setdefault((r.row.asset, r.row.theta, r.row.fold), {})[r.row.model] = r.row.patton

    records = []
    assets_thetas = sorted({(a, th) for a, th, _ in by_key})
    competitors = sorted({m for losses in by_key.values() for m in losses} - {ModelName.CAESAR.value})
    for asset, theta in assets_thetas:
        folds = sorted(f for a, th, f in by_key if a == asset and th == theta)
        for model in competitors:
            pairs = [(by_key[(asset, theta, f)][ModelName.CAESAR.value],
                      by_key[(asset, theta, f)][model]) for f in folds
                     if ModelName.CAESAR.value in by_key[(asset, theta, f)]
                     and model in by_key[(asset, theta, f)]]
            if len(pairs) < 2:
                continue
            a, b = zip(*pairs)
            report = nadeau_bengio_test(a, b, n_train, n_test)
            records.append((asset, theta, model, report.statistic, report.p_value,
                            report.reject_at_5pct, len(pairs)))
    return pd.DataFrame(records, columns=["asset", "theta", "model", "statistic", "p_value",
                                          "reject", "n_folds"])


def run_empirical_evaluation(data: Sequence[ReturnSeries], config: ExperimentConfig) -> ExperimentReport:
    """
    Rolling block-fold evaluation of every model on every asset. Produces the
    loss table, pinball differences, direct-test rejection ratios, DM g/b counts,
    Loss Difference and Encompassing counts and Nadeau-Bengio tests per asset.
    """
    if not data:
        raise InputError("The empirical evaluation needs at least one series")
    config_hash = stable_hash(config)
    window, train_len, stride = config.fold_sizes
    units = ReturnUnits.PERCENT if config.percentage_returns else ReturnUnits.RAW
    models = [ModelName(m) for m in config.models]

    jobs = []
    for a, series in enumerate(data):
        if config.percentage_returns:
            series = series.to_percent()
        plan = make_block_folds(len(series), window, train_len, stride)
        for f, fold in enumerate(plan):
            y = series.values[fold.train.start:fold.test.stop]
            for ti, theta in enumerate(config.thetas):
                for mi, name in enumerate(models):
                    jobs.append(CellJob(name, series.name, f, theta, ti,
                                        cell_seed(config.seed, a, f, ti, mi), y, train_len))

    results = run_cells(jobs, config, config_hash)
    rows = [r.row for r in results]
    tests = cell_backtests(results, config.n_boot, config.seed)
    tables = {
        "loss_table": loss_table(rows),
        "pinball_difference": pinball_difference(results),
        "direct_test_rejections": rejection_table(tests),
        "dm_counts": dm_counts(tests),
        "comparison_counts": comparison_counts(tests),
        "nadeau_bengio": nadeau_bengio_table(results, train_len, window - train_len),
    }
    logger.info("Empirical evaluation finished with %d cells, %d failures",
                len(rows), sum(r.error is not None for r in rows))
    return ExperimentReport(RunKind.EVALUATION, rows, tests, tables, config_hash, config.seed,
                            units, config.model_dump(mode="json"))


def write_report(report: ExperimentReport, out_dir: Union[str, Path]) -> Path:
    """Writes report.json, rows.csv, tests.csv and one CSV per table; returns report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _rows_frame(report.rows).to_csv(out / "rows.csv", index=False)
    pd.DataFrame([t.model_dump() for t in report.tests],
                 columns=list(BacktestRecordSchema.model_fields)).to_csv(out / "tests.csv", index=False)
    for name, table in report.tables.items():
        table.to_csv(out / f"{name}.csv", index=False)
    path = out / "report.json"
    path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %s report to %s", report.kind.value, out)
    return path


def persist_report(db: Session, report: ExperimentReport) -> str:
    """Stores the run, its rows and its tests; returns the run correlation id."""
    run = crud.create_run(db, report.kind, report.config_hash, report.seed, report.units.value,
                          report.n_failures)
    crud.add_evaluation_rows(db, run.run_corr_id, report.rows)
    crud.add_backtest_reports(db, run.run_corr_id, report.tests)
    return run.run_corr_id
