# kquantile.py
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .caviar import CaviarModel, CaviarSpec, caviar_fit, check_train_length, train_slice
from .core import ForecastPath, SeriesLike
from .exceptions import EstimationError, FilterDivergenceError, InputError
from .schemas import EstimationConfig, KCaviarModelSchema
from .utils import validate_theta

logger = logging.getLogger(__name__)


def tail_partition(theta: float, n: int) -> list[float]:
    """Equispaced levels j * theta / n for j = 1..n; the last one is theta."""
    theta = validate_theta(theta)
    if n < 1:
        raise InputError("The tail partition needs at least one level")
    return [j * theta / n for j in range(1, n + 1)]


@dataclass(frozen=True, eq=False)
class KCaviarModel:
    theta: float
    thetas: tuple[float, ...]
    models: tuple[CaviarModel, ...]

    def sub_paths(self, y: SeriesLike, include_next: bool = False) -> np.ndarray:
        return np.vstack([model.filter(y, include_next) for model in self.models])

    def filter(self, y: SeriesLike, include_next: bool = False) -> ForecastPath:
        """VaR from the theta sub-model, ES as the plain mean of every sub-path."""
        paths = self.sub_paths(y, include_next)
        return ForecastPath(paths[-1], paths.mean(axis=0), self.theta)

    def to_schema(self) -> KCaviarModelSchema:
        return KCaviarModelSchema(theta=self.theta, thetas=list(self.thetas),
                                  models=[m.to_schema() for m in self.models])

    @classmethod
    def from_schema(cls, schema: KCaviarModelSchema) -> "KCaviarModel":
        models = tuple(CaviarModel.from_schema(m) for m in schema.models)
        if len(models) != len(schema.thetas):
            raise InputError("K-CAViaR JSON lists a different number of levels and models")
        return cls(schema.theta, tuple(schema.thetas), models)


def crossing_rate(path: ForecastPath) -> float:
    return path.crossings / len(path)


def kcaviar_fit(y: SeriesLike, theta: float, n: int = 10, spec: Optional[CaviarSpec] = None,
                config: Optional[EstimationConfig] = None, train_range: Optional[range] = None,
                seed: Optional[int] = None) -> KCaviarModel:
    """
    Fits one CAViaR per tail level. Sub-fit j uses seed + j, so thread count
    and completion order do not change the result.

    Raises:
        EstimationError: If any sub-fit fails; the message names its level.
    """
    thetas = tail_partition(theta, n)
    config = config or EstimationConfig()
    base_seed = config.seed if seed is None else seed
    train = train_slice(y, train_range)
    check_train_length(train)

    def fit_level(j: int) -> CaviarModel:
        level = thetas[j - 1]
        try:
            return caviar_fit(train, level, spec, config, seed=base_seed + j)
        except (EstimationError, FilterDivergenceError) as exc:
            raise EstimationError(f"K-CAViaR sub-fit at theta_{j}={level:g} failed: {exc}",
                                  {"theta_j": level, "j": j}) from exc

    with ThreadPoolExecutor(max_workers=config.n_jobs) as executor:
        models = tuple(executor.map(fit_level, range(1, n + 1)))

    logger.info("K-CAViaR fitted %d levels at theta=%g", n, theta)
    return KCaviarModel(theta, tuple(thetas), models)


def kcaviar_estimate(y: SeriesLike, theta: float, n: int = 10, spec: Optional[CaviarSpec] = None,
                     config: Optional[EstimationConfig] = None,
                     train_range: Optional[range] = None) -> ForecastPath:
    """Fits on the training range and filters the whole series."""
    model = kcaviar_fit(y, theta, n, spec, config, train_range)
    path = model.filter(y)
    rate = crossing_rate(path)
    if rate > 0:
        logger.info("K-CAViaR ES lies above VaR at %.2f%% of times", 100 * rate)
    return path
