# caviar.py
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .config import DIVERGENCE_BOUND, MIN_TRAIN_LENGTH
from .core import SeriesLike, as_array, prefix_var_es
from .exceptions import DomainError, FilterDivergenceError, InputError
from .losses import pinball_terms
from .models import SpecKind
from .optimizer import MultistartConfig, multistart_minimize
from .recursions import (STATUS_OK, feature_count, from_latent, latent_seed, linear_state_kernel,
                         regressors)
from .schemas import CaviarModelSchema, EstimationConfig, SpecSchema
from .utils import validate_theta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaviarSpec:
    """
    Regressor map and lag orders. AS uses ((y)^+, (y)^-), SAV |y| and IG y^2
    with the recursion running on q^2 and the output taken as -sqrt.
    """
    kind: SpecKind = SpecKind.AS
    p: int = 1
    u: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SpecKind(self.kind))
        if self.p < 1 or self.u < 1:
            raise InputError("Lag orders p and u must be at least 1")

    @property
    def d(self) -> int:
        return feature_count(self.kind)

    @property
    def warmup(self) -> int:
        return max(self.p, self.u)

    @property
    def n_params(self) -> int:
        return 1 + self.p * self.d + self.u

    def to_schema(self) -> SpecSchema:
        return SpecSchema(kind=self.kind, p=self.p, u=self.u)

    @classmethod
    def from_schema(cls, schema: SpecSchema) -> "CaviarSpec":
        return cls(SpecKind(schema.kind), schema.p, schema.u)


@dataclass(frozen=True, eq=False)
class CaviarParams:
    beta: np.ndarray

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise InputError("CAViaR coefficients must be a finite vector")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)


def check_length(beta: np.ndarray, expected: int, what: str) -> None:
    if len(beta) != expected:
        raise InputError(f"{what} has {len(beta)} coefficients, expected {expected}")


def raise_for_status(status: int, index: int, what: str) -> None:
    if status != STATUS_OK:
        raise FilterDivergenceError(f"{what} diverged at t={index}", index)


def caviar_filter(params: CaviarParams | ArrayLike, spec: CaviarSpec, y: SeriesLike, q0: float,
                  include_next: bool = False) -> np.ndarray:
    """
    VaR path of length T (T + 1 with include_next). Times below max(p, u) carry q0.

    Raises:
        FilterDivergenceError: If the path leaves the divergence bound.
        DomainError: If an IG recursion reaches a negative squared quantile.
    """
    beta = params.beta if isinstance(params, CaviarParams) else np.asarray(params, dtype=float)
    check_length(beta, spec.n_params, "CAViaR beta")
    if not np.isfinite(q0):
        raise InputError("q0 must be finite")

    values = as_array(y)
    n_out = len(values) + int(include_next)
    z, status, index = linear_state_kernel(np.ascontiguousarray(beta.reshape(1, -1)),
                                           regressors(values, spec.kind), spec.p, spec.u,
                                           np.array([latent_seed(q0, spec.kind)]), n_out,
                                           DIVERGENCE_BOUND)
    raise_for_status(status, index, "CAViaR filter")
    q, valid = from_latent(z[:, 0], spec.kind)
    if not valid:
        raise DomainError("IG recursion produced a negative squared quantile")
    return q


@dataclass(frozen=True, eq=False)
class CaviarModel:
    spec: CaviarSpec
    params: CaviarParams
    theta: float
    q0: float
    fit_loss: float
    degenerate: bool = False

    def filter(self, y: SeriesLike, include_next: bool = False) -> np.ndarray:
        return caviar_filter(self.params, self.spec, y, self.q0, include_next)

    def to_schema(self) -> CaviarModelSchema:
        return CaviarModelSchema(kind=self.spec.kind, p=self.spec.p, u=self.spec.u,
                                 theta=self.theta, beta=self.params.beta.tolist(), q0=self.q0,
                                 fit_loss=self.fit_loss, degenerate=self.degenerate)

    @classmethod
    def from_schema(cls, schema: CaviarModelSchema) -> "CaviarModel":
        spec = CaviarSpec(SpecKind(schema.kind), schema.p, schema.u)
        params = CaviarParams(np.asarray(schema.beta))
        check_length(params.beta, spec.n_params, "CAViaR beta")
        return cls(spec, params, schema.theta, schema.q0, schema.fit_loss, schema.degenerate)


def train_slice(y: SeriesLike, train_range: Optional[range]) -> np.ndarray:
    values = as_array(y)
    if train_range is None:
        return values
    if train_range.start < 0 or train_range.stop > len(values) or len(train_range) == 0:
        raise InputError(f"Training range {train_range} outside series of length {len(values)}")
    return values[train_range.start:train_range.stop]


def check_train_length(train: np.ndarray) -> None:
    if len(train) < MIN_TRAIN_LENGTH:
        raise InputError(f"Training segment of {len(train)} points is below the floor of "
                         f"{MIN_TRAIN_LENGTH}")


def is_degenerate(train: np.ndarray) -> bool:
    return bool(np.ptp(train) == 0.0)


def make_var_objective(train: np.ndarray, theta: float, spec: CaviarSpec, q0: float):
    """Pinball loss of a coefficient vector; +inf whenever the filter fails."""
    feats = regressors(train, spec.kind)
    z0 = np.array([latent_seed(q0, spec.kind)])
    n_out = len(train)

    def objective(beta: np.ndarray) -> float:
        z, status, _ = linear_state_kernel(np.ascontiguousarray(beta.reshape(1, -1)), feats,
                                           spec.p, spec.u, z0, n_out, DIVERGENCE_BOUND)
        if status != STATUS_OK:
            return np.inf
        q, valid = from_latent(z[:, 0], spec.kind)
        if not valid:
            return np.inf
        value = float(np.mean(pinball_terms(q, train, theta)))
        return value if np.isfinite(value) else np.inf

    return objective


def heuristic_beta(train: np.ndarray, spec: CaviarSpec, q0: float) -> np.ndarray:
    """
    Persistent start whose long-run level equals q0: persistence 0.85 on the
    first estimate lag and tail-widening loadings on the first observation lag.
    """
    beta = np.zeros(spec.n_params)
    persistence = 0.85
    beta[1 + spec.p * spec.d] = persistence
    if spec.kind is SpecKind.AS:
        loadings = (-0.05, -0.2)
        beta[1:3] = loadings
        beta[0] = ((1 - persistence) * q0 - loadings[0] * np.mean(np.maximum(train, 0.0))
                   - loadings[1] * np.mean(np.maximum(-train, 0.0)))
    elif spec.kind is SpecKind.SAV:
        beta[1] = -0.2
        beta[0] = (1 - persistence) * q0 + 0.2 * np.mean(np.abs(train))
    else:
        beta[1] = 0.1
        beta[0] = max((1 - persistence) * q0 ** 2 - 0.1 * np.mean(train ** 2), 1e-3 * q0 ** 2)
    return beta


def caviar_fit(y: SeriesLike, theta: float, spec: Optional[CaviarSpec] = None,
               config: Optional[EstimationConfig] = None, train_range: Optional[range] = None,
               seed: Optional[int] = None) -> CaviarModel:
    """
    Fits CAViaR coefficients by pinball-loss minimization on the training range
    only. q0 is the empirical quantile of the training prefix.

    Raises:
        InputError: If the training segment is shorter than the floor.
        EstimationError: If every multistart candidate diverges.
    """
    theta = validate_theta(theta)
    spec = spec or CaviarSpec()
    config = config or EstimationConfig()
    train = train_slice(y, train_range)
    check_train_length(train)

    q0 = prefix_var_es(train, theta, config.prefix_fraction).q

    if is_degenerate(train):
        logger.warning("Constant training segment, CAViaR fit skipped")
        beta = np.zeros(spec.n_params)
        beta[0] = latent_seed(q0, spec.kind)
        loss = float(np.mean(pinball_terms(np.full_like(train, q0), train, theta)))
        return CaviarModel(spec, CaviarParams(beta), theta, q0, loss, degenerate=True)

    objective = make_var_objective(train, theta, spec, q0)
    result = multistart_minimize(objective, spec.n_params,
                                 MultistartConfig.from_estimation(config, seed),
                                 initial_guesses=[heuristic_beta(train, spec, q0)])

    logger.info("CAViaR %s(%d,%d) fitted at theta=%g, pinball=%.6g",
                spec.kind.value, spec.p, spec.u, theta, result.fun)
    return CaviarModel(spec, CaviarParams(result.x), theta, q0, result.fun)
