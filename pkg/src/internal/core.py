# core.py
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from .exceptions import DomainError, InputError
from .models import ReturnMode, ReturnUnits
from .utils import validate_theta

logger = logging.getLogger(__name__)


def _frozen_array(values: ArrayLike) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """
    Timestamped univariate returns. Values are finite and at least two long;
    timestamps, when present, are strictly increasing. The unit convention
    (raw or percentage) is carried so reports can state it.
    """
    values: np.ndarray
    timestamps: Optional[pd.DatetimeIndex] = None
    units: ReturnUnits = ReturnUnits.RAW
    name: str = "series"

    def __post_init__(self) -> None:
        values = _frozen_array(self.values)
        if values.ndim != 1:
            raise InputError("Returns must be a one-dimensional sequence")
        if len(values) < 2:
            raise InputError(f"A return series needs at least 2 values, got {len(values)}")
        if not np.all(np.isfinite(values)):
            raise InputError("Returns must be finite")
        object.__setattr__(self, "values", values)

        if self.timestamps is not None:
            stamps = pd.DatetimeIndex(self.timestamps)
            if len(stamps) != len(values):
                raise InputError("Timestamps and values differ in length")
            if not stamps.is_monotonic_increasing or stamps.has_duplicates:
                raise InputError("Timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", stamps)

    def __len__(self) -> int:
        return len(self.values)

    def slice(self, start: int, stop: int) -> "ReturnSeries":
        stamps = None if self.timestamps is None else self.timestamps[start:stop]
        return ReturnSeries(self.values[start:stop], stamps, self.units, self.name)

    def to_percent(self) -> "ReturnSeries":
        if self.units == ReturnUnits.PERCENT:
            return self
        return ReturnSeries(self.values * 100.0, self.timestamps, ReturnUnits.PERCENT, self.name)


SeriesLike = Union[ReturnSeries, ArrayLike]


def as_array(y: SeriesLike) -> np.ndarray:
    if isinstance(y, ReturnSeries):
        return y.values
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise InputError("Expected a one-dimensional sequence")
    return arr


@dataclass(frozen=True, eq=False)
class ForecastPath:
    """Paired VaR (q) and ES (e) paths at probability level theta."""
    q: np.ndarray
    e: np.ndarray
    theta: float

    def __post_init__(self) -> None:
        q, e = _frozen_array(self.q), _frozen_array(self.e)
        if q.shape != e.shape or q.ndim != 1:
            raise InputError("VaR and ES paths must be one-dimensional and equally long")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(e))):
            raise InputError("Forecast paths must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "theta", validate_theta(self.theta))

    def __len__(self) -> int:
        return len(self.q)

    @property
    def crossings(self) -> int:
        """Times where the ES estimate lies above the VaR estimate."""
        return int(np.sum(self.e > self.q))

    @property
    def monotonicity_violations(self) -> int:
        """Times breaking e_t <= q_t <= 0."""
        return int(np.sum(~((self.e <= self.q) & (self.q <= 0.0))))

    def slice(self, start: int, stop: int) -> "ForecastPath":
        return ForecastPath(self.q[start:stop], self.e[start:stop], self.theta)


@dataclass(frozen=True)
class Fold:
    train: range
    test: range


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    window: int
    train_len: int
    stride: int

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


class TailEstimate(NamedTuple):
    q: float
    e: float
    fallback: bool = False  # no value at or below q, e fell back to the minimum


def returns_from_prices(prices: ArrayLike, mode: ReturnMode = ReturnMode.LOG,
                        timestamps: Optional[Sequence] = None, name: str = "series") -> ReturnSeries:
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or len(p) < 2:
        raise InputError("At least two prices are required")
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise DomainError("Prices must be finite and strictly positive")

    if ReturnMode(mode) is ReturnMode.LOG:
        values = np.diff(np.log(p))
    else:
        values = p[1:] / p[:-1] - 1.0

    stamps = None if timestamps is None else pd.DatetimeIndex(timestamps)[1:]
    return ReturnSeries(values, stamps, ReturnUnits.RAW, name)


def make_block_folds(T: int, window: int, train_len: int, stride: int) -> FoldPlan:
    """
    Rolling block folds: fold k covers [k*stride, k*stride + window), the first
    train_len points are the training segment and the rest the test segment.
    """
    if window > T:
        raise InputError(f"Fold window {window} exceeds the series length {T}")
    if not 0 < train_len < window:
        raise InputError("train_len must satisfy 0 < train_len < window")
    if stride < 1:
        raise InputError("stride must be at least 1")

    n_folds = (T - window) // stride + 1
    folds = []
    for k in range(n_folds):
        start = k * stride
        folds.append(Fold(train=range(start, start + train_len),
                          test=range(start + train_len, start + window)))
    return FoldPlan(tuple(folds), window, train_len, stride)


def empirical_var_es(prefix: ArrayLike, theta: float) -> TailEstimate:
    """
    Empirical VaR and ES of a sample. The quantile is the lower order statistic
    of rank ceil(theta * n), clamped to [1, n]; the ES is the mean of the values
    at or below it.
    """
    theta = validate_theta(theta)
    x = np.asarray(prefix, dtype=float)
    if x.size == 0:
        raise InputError("Empirical VaR/ES needs a non-empty prefix")

    n = x.size
    rank = min(max(math.ceil(theta * n), 1), n)
    q0 = float(np.partition(x, rank - 1)[rank - 1])
    tail = x[x <= q0]
    if tail.size == 0:
        logger.warning("No value at or below the empirical quantile, ES falls back to the minimum")
        return TailEstimate(q0, float(np.min(x)), True)
    return TailEstimate(q0, float(np.mean(tail)), False)


def prefix_var_es(train: ArrayLike, theta: float, prefix_fraction: float) -> TailEstimate:
    """Empirical seeds computed on the first prefix_fraction of a training segment."""
    x = np.asarray(train, dtype=float)
    n_prefix = max(1, math.ceil(prefix_fraction * len(x) - 1e-9))
    return empirical_var_es(x[:n_prefix], theta)


def load_csv(path: Union[str, Path], name: Optional[str] = None,
             mode: ReturnMode = ReturnMode.LOG) -> ReturnSeries:
    """
    Reads a two-column CSV with a header: `date,price` or `date,return`.
    Price files are converted to returns with `mode`.
    """
    path = Path(path)
    frame = pd.read_csv(path, encoding="utf-8")
    if frame.shape[1] != 2:
        raise InputError(f"{path}: expected two columns, found {frame.shape[1]}")

    date_col, value_col = frame.columns
    stamps = pd.to_datetime(frame[date_col])
    values = pd.to_numeric(frame[value_col], errors="raise").to_numpy(dtype=float)
    series_name = name or path.stem

    if value_col.strip().lower() in ("price", "close", "adj_close", "level"):
        return returns_from_prices(values, mode, stamps, series_name)
    return ReturnSeries(values, pd.DatetimeIndex(stamps), ReturnUnits.RAW, series_name)
