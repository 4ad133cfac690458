# gas.py
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .caviar import check_train_length, is_degenerate, raise_for_status, train_slice
from .config import DIVERGENCE_BOUND, GAS_INSTABILITY_FACTOR, GAS_MAX_FACTOR
from .core import ForecastPath, SeriesLike, as_array, prefix_var_es
from .exceptions import InfeasibleStartError, InputError
from .losses import safe_joint_objective
from .models import GasVariant
from .optimizer import MultistartConfig, chain_minimize, multistart_minimize
from .recursions import STATUS_OK, gas1_kernel, gas2_kernel
from .schemas import EstimationConfig, Gas1ParamsSchema, Gas2ParamsSchema, GasModelSchema
from .utils import validate_theta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Gas1Params:
    """One latent factor k_t; q_t = a e^{k_t} and e_t = b e^{k_t} with b < a < 0."""
    a: float
    b: float
    beta: float
    gamma: float
    k0: float = 0.0

    def __post_init__(self) -> None:
        values = (self.a, self.b, self.beta, self.gamma, self.k0)
        if not all(np.isfinite(v) for v in values):
            raise InputError("GAS1 parameters must be finite")
        if not self.b < self.a < 0:
            raise InputError(f"GAS1 requires b < a < 0, got a={self.a}, b={self.b}")

    @classmethod
    def from_free(cls, free: np.ndarray, k0: float = 0.0) -> "Gas1Params":
        """(alpha, delta, beta, gamma) with a = -exp(alpha) and b = a - exp(delta)."""
        a = -np.exp(free[0])
        return cls(float(a), float(a - np.exp(free[1])), float(free[2]), float(free[3]), k0)

    def to_free(self) -> np.ndarray:
        return np.array([np.log(-self.a), np.log(self.a - self.b), self.beta, self.gamma])

    def to_schema(self) -> Gas1ParamsSchema:
        return Gas1ParamsSchema(a=self.a, b=self.b, beta=self.beta, gamma=self.gamma, k0=self.k0)


@dataclass(frozen=True, eq=False)
class Gas2Params:
    w: np.ndarray
    b1: float
    b2: float
    A: np.ndarray
    q_init: float
    e_init: float

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float).reshape(2)
        A = np.ascontiguousarray(np.array(self.A, dtype=float).reshape(2, 2))
        scalars = (self.b1, self.b2, self.q_init, self.e_init)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(A))
                and all(np.isfinite(v) for v in scalars)):
            raise InputError("GAS2 parameters must be finite")
        if not self.e_init <= self.q_init <= 0:
            raise InputError("GAS2 requires e_init <= q_init <= 0")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_free(cls, free: np.ndarray, q_init: float, e_init: float) -> "Gas2Params":
        """(w_q, w_e, b1, b2, A11, A12, A21, A22)."""
        return cls(free[0:2], float(free[2]), float(free[3]), free[4:8], q_init, e_init)

    def to_free(self) -> np.ndarray:
        return np.concatenate((self.w, [self.b1, self.b2], self.A.ravel()))

    def to_schema(self) -> Gas2ParamsSchema:
        return Gas2ParamsSchema(w=self.w.tolist(), b1=self.b1, b2=self.b2, A=self.A.tolist(),
                                q_init=self.q_init, e_init=self.e_init)


def gas1_filter(params: Gas1Params, y: SeriesLike, theta: float,
                include_next: bool = False) -> ForecastPath:
    """
    Raises:
        FilterDivergenceError: If |k_t| exceeds the overflow guard.
    """
    theta = validate_theta(theta)
    values = np.ascontiguousarray(as_array(y))
    n_out = len(values) + int(include_next)
    q, e, status, index = gas1_kernel(values, params.a, params.b, params.beta, params.gamma,
                                      params.k0, theta, n_out, GAS_MAX_FACTOR)
    raise_for_status(status, index, "GAS1 filter")
    return ForecastPath(q, e, theta)


def gas2_filter(params: Gas2Params, y: SeriesLike, theta: float,
                include_next: bool = False) -> ForecastPath:
    """
    Raises:
        FilterDivergenceError: If a state leaves the divergence bound.
    """
    theta = validate_theta(theta)
    values = np.ascontiguousarray(as_array(y))
    n_out = len(values) + int(include_next)
    q, e, status, index = gas2_kernel(values, params.w, params.b1, params.b2, params.A,
                                      params.q_init, params.e_init, theta, n_out,
                                      DIVERGENCE_BOUND)
    raise_for_status(status, index, "GAS2 filter")
    return ForecastPath(q, e, theta)


@dataclass(frozen=True, eq=False)
class GasModel:
    variant: GasVariant
    theta: float
    params: Gas1Params | Gas2Params
    fit_loss: float
    unstable: bool = False
    degenerate: bool = False

    def filter(self, y: SeriesLike, include_next: bool = False) -> ForecastPath:
        if GasVariant(self.variant) is GasVariant.ONE:
            return gas1_filter(self.params, y, self.theta, include_next)  # type: ignore
        return gas2_filter(self.params, y, self.theta, include_next)  # type: ignore

    def to_schema(self) -> GasModelSchema:
        one = GasVariant(self.variant) is GasVariant.ONE
        return GasModelSchema(variant=self.variant, theta=self.theta,
                              gas1=self.params.to_schema() if one else None,
                              gas2=None if one else self.params.to_schema(),
                              fit_loss=self.fit_loss, unstable=self.unstable,
                              degenerate=self.degenerate)

    @classmethod
    def from_schema(cls, schema: GasModelSchema) -> "GasModel":
        variant = GasVariant(schema.variant)
        if variant is GasVariant.ONE:
            if schema.gas1 is None:
                raise InputError("GAS1 model JSON lacks its parameters")
            g1 = schema.gas1
            params: Gas1Params | Gas2Params = Gas1Params(g1.a, g1.b, g1.beta, g1.gamma, g1.k0)
        else:
            if schema.gas2 is None:
                raise InputError("GAS2 model JSON lacks its parameters")
            g2 = schema.gas2
            params = Gas2Params(np.asarray(g2.w), g2.b1, g2.b2, np.asarray(g2.A),
                                g2.q_init, g2.e_init)
        return cls(variant, schema.theta, params, schema.fit_loss, schema.unstable,
                   schema.degenerate)


def path_is_unstable(path: ForecastPath, train: np.ndarray, factor: float) -> bool:
    """True when the filtered path spans more than factor times the range of the returns."""
    spread = max(np.ptp(path.q), np.ptp(path.e))
    return bool(spread > factor * np.ptp(train))


def _gas1_default(q0: float, e0: float) -> Gas1Params:
    a = q0 if q0 < 0 else -1e-3
    gap = a - e0 if e0 < a else 1e-3 * abs(a)
    return Gas1Params(a, a - gap, 0.9, 0.05, 0.0)


def _gas2_defaults(q0: float, e0: float) -> list[np.ndarray]:
    q_init = min(q0, 0.0)
    e_init = min(e0, q_init)
    diagonal = [0.05, 0.0, 0.0, 0.05]
    zero_level = np.array([0.0, 0.0, 0.9, 0.9, *diagonal])
    matched_level = np.array([0.1 * q_init, 0.1 * e_init, 0.9, 0.9, *diagonal])
    return [zero_level, matched_level]


def _degenerate_model(variant: GasVariant, theta: float, train: np.ndarray,
                      q0: float, e0: float) -> GasModel:
    logger.warning("Constant training segment, GAS fit skipped")
    if variant is GasVariant.ONE:
        base = _gas1_default(q0, e0)
        params: Gas1Params | Gas2Params = Gas1Params(base.a, base.b, 1.0, 0.0, 0.0)
        path = gas1_filter(params, train, theta)  # type: ignore
    else:
        q_init = min(q0, 0.0)
        e_init = min(e0, q_init)
        params = Gas2Params(np.array([q_init, e_init]), 0.0, 0.0, np.zeros((2, 2)), q_init, e_init)
        path = gas2_filter(params, train, theta)  # type: ignore
    loss = safe_joint_objective(path.e, path.q, train, theta, 0.0, 0.0)
    return GasModel(variant, theta, params, loss if np.isfinite(loss) else 0.0, degenerate=True)


def gas_fit(y: SeriesLike, theta: float, variant: GasVariant = GasVariant.ONE,
            config: Optional[EstimationConfig] = None, train_range: Optional[range] = None,
            seed: Optional[int] = None,
            instability_factor: float = GAS_INSTABILITY_FACTOR) -> GasModel:
    """
    Fits GAS1 under the Patton loss (b < a < 0 through a = -e^alpha,
    b = a - e^delta) or GAS2 under the penalized Patton loss. Chained local
    searches start from fixed defaults; multistart is the fallback when no
    default start is feasible.

    Raises:
        InputError: If the training segment is shorter than the floor.
        EstimationError: If no feasible parameter vector is found.
    """
    theta = validate_theta(theta)
    variant = GasVariant(variant)
    config = config or EstimationConfig()
    seed = config.seed if seed is None else seed
    train = train_slice(y, train_range)
    check_train_length(train)
    tail = prefix_var_es(train, theta, config.prefix_fraction)

    if is_degenerate(train):
        return _degenerate_model(variant, theta, train, tail.q, tail.e)

    values = np.ascontiguousarray(train)
    n_out = len(values)

    if variant is GasVariant.ONE:
        def build(free: np.ndarray) -> Gas1Params | Gas2Params:
            return Gas1Params.from_free(free)

        def objective(free: np.ndarray) -> float:
            a = -np.exp(free[0])
            b = a - np.exp(free[1])
            q, e, status, _ = gas1_kernel(values, a, b, free[2], free[3], 0.0, theta, n_out,
                                          GAS_MAX_FACTOR)
            if status != STATUS_OK or not b < a < 0:
                return np.inf
            return safe_joint_objective(e, q, values, theta, 0.0, 0.0)

        starts = [_gas1_default(tail.q, tail.e).to_free()]
    else:
        _, lambda_q, lambda_e = config.penalties(len(train))
        q_init = min(tail.q, 0.0)
        e_init = min(tail.e, q_init)

        def build(free: np.ndarray) -> Gas1Params | Gas2Params:
            return Gas2Params.from_free(free, q_init, e_init)

        def objective(free: np.ndarray) -> float:
            A = np.ascontiguousarray(free[4:8].reshape(2, 2))
            q, e, status, _ = gas2_kernel(values, np.ascontiguousarray(free[0:2]), free[2],
                                          free[3], A, q_init, e_init, theta, n_out,
                                          DIVERGENCE_BOUND)
            if status != STATUS_OK:
                return np.inf
            return safe_joint_objective(e, q, values, theta, lambda_e, lambda_q)

        starts = _gas2_defaults(tail.q, tail.e)

    best_x, best_f = None, np.inf
    for start in starts:
        try:
            x, f, _ = chain_minimize(objective, start, config.n_chained, config.max_iter,
                                     config.tol, config.bound)
        except InfeasibleStartError:
            continue
        if f < best_f:
            best_x, best_f = x, f

    if best_x is None:
        logger.warning("No feasible GAS default start, falling back to multistart")
        result = multistart_minimize(objective, len(starts[0]),
                                     MultistartConfig.from_estimation(config, seed))
        best_x, best_f = result.x, result.fun

    params = build(best_x)
    model = GasModel(variant, theta, params, float(best_f))
    unstable = path_is_unstable(model.filter(train), train, instability_factor)
    if unstable:
        logger.warning("GAS %s path range exceeds %gx the return range at theta=%g",
                       variant.value, instability_factor, theta)
    logger.info("GAS %s fitted at theta=%g, loss=%.6g", variant.value, theta, best_f)
    return GasModel(variant, theta, params, float(best_f), unstable=unstable)
