#!/usr/bin/env python3
# main.py
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Type, TypeVar

import click
import numpy as np
import pandas as pd
import uvicorn
from pydantic import BaseModel, ValidationError

from internal.backtest import direct_tests
from internal.config import DEFAULT_N_BOOT, LOG_LEVEL, SERVER_PORT
from internal.core import load_csv
from internal.database import SessionLocal, init_db
from internal.exceptions import InputError, TailRiskError
from internal.harness import (ExperimentReport, fit_model, load_model, persist_report,
                              run_empirical_evaluation, run_simulation_study, write_report)
from internal.models import ModelName, ReturnUnits, RunKind
from internal.schemas import BacktestRecordSchema, ExperimentConfig, SimulationConfig
from internal.simulate import ratio_curves, run_dgp_suite, write_bundle
from internal.utils import parse_theta_list, stable_hash

logger = logging.getLogger("tailrisk")

EXIT_FATAL = 1
EXIT_CELL_FAILURES = 2

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def handle_errors(func: Callable) -> Callable:
    """Maps fatal errors to exit code 1 with a logged message."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (TailRiskError, ValidationError, OSError, ValueError) as exc:
            logger.error("%s: %s", type(exc).__name__, exc)
            sys.exit(EXIT_FATAL)
    return wrapper


def load_config(model: Type[ConfigT], path: Optional[str], **overrides: Any) -> ConfigT:
    """Reads a JSON config file into `model`; non-None overrides replace file values."""
    payload: dict[str, Any] = {}
    if path:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    payload.update({k: v for k, v in overrides.items() if v is not None})
    return model.model_validate(payload)


def write_json(payload: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def finish(report: ExperimentReport, out: str, store: bool) -> None:
    write_report(report, out)
    if store:
        init_db()
        with SessionLocal() as db:
            run_id = persist_report(db, report)
        click.echo(f"Stored run {run_id}")
    if report.n_failures:
        logger.warning("%d cells failed, see rows.csv", report.n_failures)
        sys.exit(EXIT_CELL_FAILURES)


def theta_option(multiple: bool = False):
    help_text = "Probability level(s), comma separated" if multiple else "Probability level"
    return click.option("--theta", type=str, default=None, help=help_text)


@click.group()
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Root logger level")
def cli(log_level: str) -> None:
    """Joint VaR/ES estimation, competitors, backtests and simulation studies."""
    logging.basicConfig(level=log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with date and price or return columns")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Experiment JSON (spec, estimation, percentage_returns)")
@theta_option()
@click.option("--model", "model_name", type=click.Choice([m.value for m in ModelName]),
              default=ModelName.CAESAR.value, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--train", "train_len", type=int, default=None,
              help="Observations used for fitting; defaults to the whole series")
@click.option("--out", default="results/fit", show_default=True, type=click.Path(file_okay=False))
@handle_errors
def fit(data: str, config_path: Optional[str], theta: Optional[str], model_name: str,
        seed: Optional[int], train_len: Optional[int], out: str) -> None:
    """Fit one model and write its JSON and in-sample path."""
    config = load_config(ExperimentConfig, config_path, seed=seed)
    level = parse_theta_list(theta)[0] if theta else config.thetas[0]
    series = load_csv(data)
    if config.percentage_returns:
        series = series.to_percent()
    train = range(0, train_len or len(series))

    fitted = fit_model(ModelName(model_name), series.values, level, config, train, config.seed)
    q, e = fitted.paths(series.values)
    out_dir = Path(out)
    write_json({**fitted.to_json(), "units": series.units.value,
                "config_hash": stable_hash(config), "seed": config.seed},
               out_dir / "model.json")
    frame = pd.DataFrame({"y": series.values, "q": q})
    if e is not None:
        frame["e"] = e
    frame.to_csv(out_dir / "path.csv", index=False)
    click.echo(f"Fitted {model_name} at theta={level:g}, wrote {out_dir}")


@cli.command()
@click.option("--model-json", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="results/forecast", show_default=True, type=click.Path(file_okay=False))
@handle_errors
def forecast(model_json: str, data: str, out: str) -> None:
    """Filter a series with a fitted model and report the next-step forecast."""
    payload = json.loads(Path(model_json).read_text(encoding="utf-8"))
    units = ReturnUnits(payload.pop("units", ReturnUnits.RAW.value))
    payload.pop("config_hash", None)
    payload.pop("seed", None)
    fitted = load_model(payload)
    series = load_csv(data)
    if units is ReturnUnits.PERCENT:
        series = series.to_percent()

    q, e = fitted.paths(series.values, include_next=True)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"y": np.append(series.values, np.nan), "q": q})
    if e is not None:
        frame["e"] = e
    frame.to_csv(out_dir / "forecast.csv", index=False)
    next_step = {"q_next": float(q[-1]), "e_next": None if e is None else float(e[-1]),
                 "units": units.value}
    write_json(next_step, out_dir / "next.json")
    click.echo(json.dumps(next_step, sort_keys=True))


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Simulation JSON")
@theta_option(multiple=True)
@click.option("--model", "models", multiple=True, type=click.Choice([m.value for m in ModelName]))
@click.option("--seed", type=int, default=None)
@click.option("--out", default="results/simulation", show_default=True, type=click.Path(file_okay=False))
@click.option("--study/--no-study", default=False, help="Also fit every model on every series")
@click.option("--store/--no-store", default=False, help="Persist the study in the results database")
@handle_errors
def simulate(config_path: Optional[str], theta: Optional[str], models: Sequence[str],
             seed: Optional[int], out: str, study: bool, store: bool) -> None:
    """Simulate the GARCH laboratory, its true VaR/ES paths and the ratio curves."""
    config = load_config(SimulationConfig, config_path, seed=seed,
                         thetas=parse_theta_list(theta) if theta else None,
                         models=list(models) or None)
    bundle = run_dgp_suite(config.dgps, config.n_series, config.T, config.split, config.thetas,
                           config.seed, config.n_jobs)
    out_dir = Path(out)
    write_bundle(bundle, out_dir / "series")
    curves = pd.concat([ratio_curves(th).assign(theta=th) for th in config.thetas],
                       ignore_index=True)
    curves.to_csv(out_dir / "ratio_curves.csv", index=False)
    logger.info("Wrote ratio curves for %d levels", len(config.thetas))

    if study:
        finish(run_simulation_study(config, bundle), out, store)


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns y, q, e (e.g. path.csv written by fit)")
@theta_option()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-boot", type=int, default=DEFAULT_N_BOOT, show_default=True)
@click.option("--out", default="results/backtest", show_default=True, type=click.Path(file_okay=False))
@click.option("--store/--no-store", default=False, help="Persist the outcomes in the results database")
@handle_errors
def backtest(data: str, theta: Optional[str], seed: int, n_boot: int, out: str, store: bool) -> None:
    """Run the MNF and Acerbi-Szekely tests on a stored forecast path."""
    frame = pd.read_csv(data)
    missing = {"y", "q", "e"} - set(frame.columns)
    if missing:
        raise InputError(f"{data} lacks columns {sorted(missing)}")
    frame = frame.dropna(subset=["y", "q", "e"])
    level = parse_theta_list(theta)[0] if theta else 0.05
    reports = direct_tests(frame["y"], frame["q"], frame["e"], level, n_boot, seed)

    write_json([r.model_dump(mode="json") for r in reports], Path(out) / "backtest.json")
    for r in reports:
        click.echo(f"{r.name}: statistic={r.statistic:.6g} p={r.p_value:.4f} reject={r.reject_at_5pct}")

    if store:
        records = [BacktestRecordSchema(model="external", asset=Path(data).stem, fold=0, theta=level,
                                        test=r.name, statistic=r.statistic, p_value=r.p_value,
                                        reject=r.reject_at_5pct) for r in reports]
        report = ExperimentReport(RunKind.BACKTEST, [], records, {},
                                  stable_hash({"data": data, "theta": level, "n_boot": n_boot}),
                                  seed, ReturnUnits.RAW)
        init_db()
        with SessionLocal() as db:
            click.echo(f"Stored run {persist_report(db, report)}")


@cli.command()
@click.option("--data", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="One CSV per asset; repeat the flag for several assets")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Experiment JSON")
@theta_option(multiple=True)
@click.option("--model", "models", multiple=True, type=click.Choice([m.value for m in ModelName]))
@click.option("--seed", type=int, default=None)
@click.option("--out", default="results/evaluation", show_default=True, type=click.Path(file_okay=False))
@click.option("--store/--no-store", default=False, help="Persist the run in the results database")
@handle_errors
def evaluate(data: Sequence[str], config_path: Optional[str], theta: Optional[str],
             models: Sequence[str], seed: Optional[int], out: str, store: bool) -> None:
    """Rolling block-fold evaluation of every model on every asset."""
    config = load_config(ExperimentConfig, config_path, seed=seed,
                         thetas=parse_theta_list(theta) if theta else None,
                         models=list(models) or None, data=list(data) or None)
    if not config.data:
        raise InputError("No data: pass --data or list files in the config")
    series = [load_csv(path) for path in config.data]
    finish(run_empirical_evaluation(series, config), out, store)


@cli.command()
@click.option("--port", default=SERVER_PORT, show_default=True, type=int)
@click.option("--reload/--no-reload", default=False)
def serve(port: int, reload: bool) -> None:
    """Serve the results API."""
    uvicorn.run("app:app", port=port, log_level=logging.getLevelName(
        logging.getLogger().getEffectiveLevel()).lower(), reload=reload)


if __name__ == "__main__":
    cli()
