# caesar.py
"""
Joint VaR/ES estimation by the three-step procedure: a CAViaR fit for the
quantile, a penalized least-squares fit of the ES-VaR residual with the
quantile path held fixed, and a joint refinement of the lifted coefficients
under the penalized Patton loss.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike

from .caviar import (CaviarModel, CaviarSpec, caviar_fit, check_length, check_train_length,
                     raise_for_status, train_slice)
from .config import DEFAULT_THETAS, DIVERGENCE_BOUND
from .core import ForecastPath, SeriesLike, as_array, prefix_var_es
from .exceptions import DomainError, InfeasibleStartError, InputError
from .losses import safe_joint_objective, safe_r_objective
from .models import LossVariant, SpecKind
from .optimizer import MultistartConfig, chain_minimize, multistart_minimize
from .recursions import (STATUS_OK, from_latent, latent_seed, linear_state_kernel, regressors,
                         residual_kernel)
from .schemas import CaesarModelSchema, EstimationConfig, StepLossesSchema
from .utils import validate_theta

logger = logging.getLogger(__name__)


def _joint_length(spec: CaviarSpec) -> int:
    return 1 + spec.p * spec.d + 2 * spec.u


@dataclass(frozen=True, eq=False)
class CaesarParams:
    """VaR (beta) and ES (gamma) coefficients: intercept, p*d loadings, u VaR lags, u ES lags."""
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float)
        gamma = np.array(self.gamma, dtype=float)
        if beta.shape != gamma.shape or beta.ndim != 1:
            raise InputError("beta and gamma must be vectors of the same length")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
            raise InputError("CAESar coefficients must be finite")
        beta.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def matrix(self) -> np.ndarray:
        return np.ascontiguousarray(np.vstack((self.beta, self.gamma)))


@dataclass(frozen=True, eq=False)
class ResidualParams:
    gamma_tilde: np.ndarray

    def __post_init__(self) -> None:
        gamma_tilde = np.array(self.gamma_tilde, dtype=float)
        if gamma_tilde.ndim != 1 or not np.all(np.isfinite(gamma_tilde)):
            raise InputError("Residual coefficients must be a finite vector")
        gamma_tilde.setflags(write=False)
        object.__setattr__(self, "gamma_tilde", gamma_tilde)


@dataclass(frozen=True, eq=False)
class JointState:
    """Most recent observations and estimates, oldest first."""
    y: np.ndarray
    q: np.ndarray
    e: np.ndarray

    def __post_init__(self) -> None:
        for name in ("y", "q", "e"):
            values = np.array(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(values)):
                raise InputError(f"State '{name}' must be finite")
            object.__setattr__(self, name, values)


def caesar_filter(params: CaesarParams, y: SeriesLike, q0: float, e0: float,
                  spec: Optional[CaviarSpec] = None, theta: float = DEFAULT_THETAS[0],
                  include_next: bool = False) -> ForecastPath:
    """
    Joint recursion of VaR and ES. Times below max(p, u) carry (q0, e0).

    Raises:
        InputError: If the seeds are not finite or e0 > q0.
        FilterDivergenceError: If a state leaves the divergence bound.
        DomainError: If an IG recursion reaches a negative squared value.
    """
    spec = spec or CaviarSpec()
    check_length(params.beta, _joint_length(spec), "CAESar beta")
    if not (np.isfinite(q0) and np.isfinite(e0)):
        raise InputError("q0 and e0 must be finite")
    if e0 > q0:
        raise InputError(f"e0={e0} lies above q0={q0}")

    values = as_array(y)
    n_out = len(values) + int(include_next)
    z0 = np.array([latent_seed(q0, spec.kind), latent_seed(e0, spec.kind)])
    z, status, index = linear_state_kernel(params.matrix, regressors(values, spec.kind),
                                           spec.p, spec.u, z0, n_out, DIVERGENCE_BOUND)
    raise_for_status(status, index, "CAESar filter")

    q, q_valid = from_latent(z[:, 0], spec.kind)
    e, e_valid = from_latent(z[:, 1], spec.kind)
    if not (q_valid and e_valid):
        raise DomainError("IG recursion produced a negative squared value")
    return ForecastPath(q, e, theta)


def _residual_output(zq: np.ndarray, r_latent: np.ndarray, kind: SpecKind) -> Optional[np.ndarray]:
    if SpecKind(kind) is not SpecKind.IG:
        return r_latent
    ze = zq + r_latent
    if np.any(ze < 0.0):
        return None
    return np.sqrt(zq) - np.sqrt(ze)


def residual_filter(gamma_tilde: ResidualParams | ArrayLike, y: SeriesLike, q: ArrayLike,
                    r0: float, spec: Optional[CaviarSpec] = None,
                    include_next: bool = False) -> np.ndarray:
    """
    ES-VaR residual path r, so that e = q + r. The VaR path q is exogenous and
    must cover the series; for IG the recursion runs on e^2 - q^2.
    """
    spec = spec or CaviarSpec()
    coef = (gamma_tilde.gamma_tilde if isinstance(gamma_tilde, ResidualParams)
            else np.asarray(gamma_tilde, dtype=float))
    check_length(coef, _joint_length(spec), "Residual gamma")

    values = as_array(y)
    q = np.asarray(q, dtype=float)
    if len(q) < len(values):
        raise InputError("The VaR path must be at least as long as the series")
    n_out = len(values) + int(include_next)
    q = q[:n_out]
    if len(q) < n_out:
        raise InputError("include_next needs the VaR path one step beyond the series")

    zq = np.array([latent_seed(v, spec.kind) for v in q])
    r_latent0 = latent_seed(q[0] + r0, spec.kind) - zq[0]
    r_latent, status, index = residual_kernel(coef, regressors(values, spec.kind), zq,
                                              spec.p, spec.u, r_latent0, n_out, DIVERGENCE_BOUND)
    raise_for_status(status, index, "Residual filter")

    r = _residual_output(zq, r_latent, spec.kind)
    if r is None:
        raise DomainError("IG residual recursion produced a negative squared ES")
    return r


def lift_residual_params(gamma_tilde: ResidualParams | ArrayLike, beta_caviar: ArrayLike,
                         spec: Optional[CaviarSpec] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Maps a CAViaR vector (1 + p*d + u) and a residual vector (1 + p*d + 2u)
    to the joint (beta, gamma) pair. The returned beta carries zeros on the
    lagged-ES slots.
    """
    gt = (gamma_tilde.gamma_tilde if isinstance(gamma_tilde, ResidualParams)
          else np.asarray(gamma_tilde, dtype=float))
    beta = np.asarray(beta_caviar, dtype=float)
    u = len(gt) - len(beta)
    pd_ = len(beta) - 1 - u
    if u < 1 or pd_ < 1:
        raise InputError(f"Inconsistent dimensions: residual {len(gt)}, CAViaR {len(beta)}")
    if spec is not None and (spec.u != u or spec.p * spec.d != pd_):
        raise InputError("Coefficient dimensions do not match the specification")

    gamma = np.empty(len(gt))
    q_lags = slice(1 + pd_, 1 + pd_ + u)
    e_lags = slice(1 + pd_ + u, 1 + pd_ + 2 * u)
    gamma[:1 + pd_] = gt[:1 + pd_] + beta[:1 + pd_]
    gamma[q_lags] = gt[q_lags] + beta[q_lags] - gt[e_lags]
    gamma[e_lags] = gt[e_lags]
    return np.concatenate((beta, np.zeros(u))), gamma


@dataclass(frozen=True, eq=False)
class CaesarModel:
    spec: CaviarSpec
    theta: float
    params: CaesarParams
    q0: float
    e0: float
    step_losses: Optional[StepLossesSchema] = None
    config_echo: dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False
    caviar: Optional[CaviarModel] = None  # step-1 model, kept for pinball comparisons

    def filter(self, y: SeriesLike, include_next: bool = False) -> ForecastPath:
        return caesar_filter(self.params, y, self.q0, self.e0, self.spec, self.theta, include_next)

    def to_schema(self) -> CaesarModelSchema:
        return CaesarModelSchema(spec=self.spec.to_schema(), theta=self.theta,
                                 beta=self.params.beta.tolist(), gamma=self.params.gamma.tolist(),
                                 q0=self.q0, e0=self.e0, step_losses=self.step_losses,
                                 config_echo=self.config_echo, degenerate=self.degenerate)

    @classmethod
    def from_schema(cls, schema: CaesarModelSchema) -> "CaesarModel":
        spec = CaviarSpec.from_schema(schema.spec)
        params = CaesarParams(np.asarray(schema.beta), np.asarray(schema.gamma))
        check_length(params.beta, _joint_length(spec), "CAESar beta")
        return cls(spec, schema.theta, params, schema.q0, schema.e0, schema.step_losses,
                   dict(schema.config_echo), schema.degenerate)


def caesar_forecast(model: CaesarModel, recent_state: JointState) -> tuple[float, float]:
    """
    One application of the joint recursion to the latest p observations and
    u VaR/ES estimates.

    Raises:
        InputError: If the state holds fewer lags than the model needs.
    """
    spec = model.spec
    state = recent_state
    if len(state.y) < spec.p or len(state.q) < spec.u or len(state.e) < spec.u:
        raise InputError(f"State needs {spec.p} observations and {spec.u} VaR/ES estimates")

    feats = regressors(state.y[-spec.p:], spec.kind)
    lags = (np.array([latent_seed(v, spec.kind) for v in state.q[-spec.u:]]),
            np.array([latent_seed(v, spec.kind) for v in state.e[-spec.u:]]))
    z_next = []
    for coef in (model.params.beta, model.params.gamma):
        acc = coef[0]
        for i in range(1, spec.p + 1):
            base = 1 + (i - 1) * spec.d
            for k in range(spec.d):
                acc += coef[base + k] * feats[-i, k]
        for s, lagged in enumerate(lags):
            base = 1 + spec.p * spec.d + s * spec.u
            for j in range(1, spec.u + 1):
                acc += coef[base + j - 1] * lagged[-j]
        z_next.append(acc)

    out, valid = from_latent(np.array(z_next), spec.kind)
    if not valid:
        raise DomainError("IG recursion produced a negative squared value")
    return float(out[0]), float(out[1])


def _residual_objective(train: np.ndarray, q_path: np.ndarray, theta: float, spec: CaviarSpec,
                        r0: float, lambda_r: float, expand):
    feats = regressors(train, spec.kind)
    zq = np.array([latent_seed(v, spec.kind) for v in q_path])
    r_latent0 = latent_seed(q_path[0] + r0, spec.kind) - zq[0]
    n_out = len(train)

    def objective(free: np.ndarray) -> float:
        coef = expand(free)
        r_latent, status, _ = residual_kernel(coef, feats, zq, spec.p, spec.u, r_latent0,
                                              n_out, DIVERGENCE_BOUND)
        if status != STATUS_OK:
            return np.inf
        r = _residual_output(zq, r_latent, spec.kind)
        if r is None:
            return np.inf
        return safe_r_objective(r, train, q_path, theta, lambda_r)

    return objective


def _joint_objective(train: np.ndarray, theta: float, spec: CaviarSpec, q0: float, e0: float,
                     lambda_e: float, lambda_q: float, expand):
    feats = regressors(train, spec.kind)
    z0 = np.array([latent_seed(q0, spec.kind), latent_seed(e0, spec.kind)])
    n_out = len(train)

    def objective(free: np.ndarray) -> float:
        coef = expand(free)
        z, status, _ = linear_state_kernel(coef, feats, spec.p, spec.u, z0, n_out,
                                           DIVERGENCE_BOUND)
        if status != STATUS_OK:
            return np.inf
        q, q_valid = from_latent(z[:, 0], spec.kind)
        e, e_valid = from_latent(z[:, 1], spec.kind)
        if not (q_valid and e_valid):
            return np.inf
        return safe_joint_objective(e, q, train, theta, lambda_e, lambda_q)

    return objective


def _joint_free_mask(spec: CaviarSpec, no_cross: bool) -> np.ndarray:
    """Free entries of the stacked (beta, gamma) vector; cross slots are pinned to zero without cross terms."""
    n = _joint_length(spec)
    mask = np.ones(2 * n, dtype=bool)
    if no_cross:
        lag0 = 1 + spec.p * spec.d
        mask[lag0 + spec.u:n] = False  # beta on lagged ES
        mask[n + lag0:n + lag0 + spec.u] = False  # gamma on lagged VaR
    return mask


def _heuristic_residual(spec: CaviarSpec, r_latent0: float) -> np.ndarray:
    persistence = 0.9
    gt = np.zeros(_joint_length(spec))
    gt[0] = (1 - persistence) * r_latent0
    gt[1 + spec.p * spec.d + spec.u] = persistence
    return gt


def caesar_fit(y: SeriesLike, theta: float, spec: Optional[CaviarSpec] = None,
               config: Optional[EstimationConfig] = None, train_range: Optional[range] = None,
               seed: Optional[int] = None) -> CaesarModel:
    """
    Three-step CAESar estimation on the training range.

    Step 1 fits CAViaR. Step 2 fits the residual recursion under the
    penalized Barrera loss with the VaR path fixed. Step 3 lifts the residual
    coefficients and, depending on the loss variant, refines them jointly
    under the penalized Patton loss.

    Raises:
        InputError: If the training segment is shorter than the floor.
        EstimationError: If a step has no feasible candidate.
    """
    theta = validate_theta(theta)
    spec = spec or CaviarSpec()
    config = config or EstimationConfig()
    seed = config.seed if seed is None else seed
    variant = LossVariant(config.loss_variant)
    train = train_slice(y, train_range)
    check_train_length(train)
    lambda_r, lambda_q, lambda_e = config.penalties(len(train))
    echo = config.model_dump(mode="json")
    echo.update(lambda_r=lambda_r, lambda_q=lambda_q, lambda_e=lambda_e,
                step2_ranking="penalized_r_loss")

    step1 = caviar_fit(train, theta, spec, config, seed=seed)
    tail = prefix_var_es(train, theta, config.prefix_fraction)
    q0, e0 = step1.q0, tail.e
    n = _joint_length(spec)

    if step1.degenerate:
        logger.warning("Constant training segment, CAESar fit skipped")
        beta, gamma = np.zeros(n), np.zeros(n)
        beta[0], gamma[0] = latent_seed(q0, spec.kind), latent_seed(e0, spec.kind)
        return CaesarModel(spec, theta, CaesarParams(beta, gamma), q0, e0,
                           StepLossesSchema(step1_pinball=step1.fit_loss), echo,
                           degenerate=True, caviar=step1)

    q_path = step1.filter(train)
    r0 = e0 - q0
    r_latent0 = latent_seed(e0, spec.kind) - latent_seed(q0, spec.kind)
    beta_caviar = step1.params.beta
    q_lags = slice(1 + spec.p * spec.d, 1 + spec.p * spec.d + spec.u)

    def expand_residual(free: np.ndarray) -> np.ndarray:
        if not config.no_cross:
            return free
        # lifted gamma on lagged VaR vanishes when the residual q-lags equal r-lags minus beta
        gt = np.empty(n)
        head = 1 + spec.p * spec.d
        gt[:head] = free[:head]
        gt[head + spec.u:] = free[head:]
        gt[q_lags] = free[head:] - beta_caviar[q_lags]
        return gt

    def shrink_residual(gt: np.ndarray) -> np.ndarray:
        if not config.no_cross:
            return gt
        return np.delete(gt, np.arange(q_lags.start, q_lags.stop))

    residual_guess = _heuristic_residual(spec, r_latent0)
    step2_loss: Optional[float] = None
    if variant is LossVariant.PATTON_ONLY:
        gamma_tilde = expand_residual(shrink_residual(residual_guess))
    else:
        objective = _residual_objective(train, q_path, theta, spec, r0, lambda_r, expand_residual)
        result = multistart_minimize(objective, n - (spec.u if config.no_cross else 0),
                                     MultistartConfig.from_estimation(config, seed + 1),
                                     initial_guesses=[shrink_residual(residual_guess)])
        gamma_tilde = expand_residual(result.x)
        step2_loss = result.fun
        logger.info("CAESar residual step at theta=%g, penalized loss=%.6g", theta, step2_loss)

    beta, gamma = lift_residual_params(gamma_tilde, beta_caviar, spec)
    mask = _joint_free_mask(spec, config.no_cross)
    stacked = np.concatenate((beta, gamma))
    stacked[~mask] = 0.0

    def expand_joint(free: np.ndarray) -> np.ndarray:
        full = np.zeros(2 * n)
        full[mask] = free
        return np.ascontiguousarray(full.reshape(2, n))

    joint = _joint_objective(train, theta, spec, q0, e0, lambda_e, lambda_q, expand_joint)
    start = stacked[mask]
    start_loss = joint(start)
    step3_loss: Optional[float] = None

    if variant is LossVariant.BARRERA_ONLY:
        final = start
    elif variant is LossVariant.BOTH:
        try:
            final, step3_loss, _ = chain_minimize(joint, start, config.n_chained, config.max_iter,
                                                  config.tol, config.bound)
        except InfeasibleStartError:
            logger.warning("Lifted start is infeasible for the joint loss, falling back to multistart")
            result = multistart_minimize(joint, int(mask.sum()),
                                         MultistartConfig.from_estimation(config, seed + 2))
            final, step3_loss = result.x, result.fun
    else:
        result = multistart_minimize(joint, int(mask.sum()),
                                     MultistartConfig.from_estimation(config, seed + 2),
                                     initial_guesses=[start])
        final, step3_loss = result.x, result.fun

    coef = expand_joint(final)
    losses = StepLossesSchema(step1_pinball=step1.fit_loss,
                              step2_penalized_r=step2_loss,
                              step3_start=start_loss if np.isfinite(start_loss) else None,
                              step3_penalized_joint=step3_loss)
    if step3_loss is not None:
        logger.info("CAESar joint step at theta=%g, penalized loss=%.6g", theta, step3_loss)
    return CaesarModel(spec, theta, CaesarParams(coef[0], coef[1]), q0, e0, losses, echo,
                       caviar=step1)
