# losses.py
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .core import SeriesLike, as_array
from .exceptions import DomainError, InputError
from .utils import validate_theta

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LossValue:
    """A scalar score and, when available, its per-time addends (value == per_time.mean())."""
    value: float
    per_time: Optional[np.ndarray] = None

    def __float__(self) -> float:
        return self.value


def _aligned(*paths: ArrayLike) -> list[np.ndarray]:
    arrays = [as_array(p) for p in paths]
    length = len(arrays[0])
    if length == 0:
        raise InputError("Loss inputs must not be empty")
    if any(len(a) != length for a in arrays):
        raise InputError(f"Loss inputs differ in length: {[len(a) for a in arrays]}")
    return arrays


def _from_terms(terms: np.ndarray) -> LossValue:
    return LossValue(float(np.mean(terms)), terms)


# Term helpers below skip validation; objectives call them directly.

def pinball_terms(q: np.ndarray, y: np.ndarray, theta: float) -> np.ndarray:
    return (y - q) * (theta - (y < q))


def barrera_terms(r: np.ndarray, y: np.ndarray, q: np.ndarray, theta: float) -> np.ndarray:
    return (r + np.maximum(q - y, 0.0) / theta) ** 2


def patton_terms(e: np.ndarray, q: np.ndarray, y: np.ndarray, theta: float) -> np.ndarray:
    hit = y <= q
    return q / e - (q - y) * hit / (theta * e) + np.log(-e)


def r_penalty_terms(r: np.ndarray) -> np.ndarray:
    return np.maximum(r, 0.0)


def joint_penalty_terms(e: np.ndarray, q: np.ndarray,
                        lambda_e: float, lambda_q: float) -> np.ndarray:
    return lambda_e * np.maximum(e - q, 0.0) + lambda_q * np.maximum(q, 0.0)


def pinball_loss(q: ArrayLike, y: SeriesLike, theta: float) -> LossValue:
    """Quantile loss (y_t - q_t)(theta - 1{y_t < q_t}) averaged over t."""
    theta = validate_theta(theta)
    q, y = _aligned(q, y)
    return _from_terms(pinball_terms(q, y, theta))


def barrera_loss(r: ArrayLike, y: SeriesLike, q: ArrayLike, theta: float) -> LossValue:
    """Mean squared distance between the ES-VaR gap r_t and its tail proxy -(q_t - y_t)^+ / theta."""
    theta = validate_theta(theta)
    r, y, q = _aligned(r, y, q)
    return _from_terms(barrera_terms(r, y, q, theta))


def patton_loss(e: ArrayLike, q: ArrayLike, y: SeriesLike, theta: float) -> LossValue:
    """
    Joint VaR/ES loss with log barrier. Every e_t must be strictly negative.

    Raises:
        DomainError: If any e_t >= 0.
    """
    theta = validate_theta(theta)
    e, q, y = _aligned(e, q, y)
    if np.any(e >= 0.0):
        raise DomainError("The Patton loss requires strictly negative ES values")
    return _from_terms(patton_terms(e, q, y, theta))


def penalized_r_loss(r: ArrayLike, y: SeriesLike, q: ArrayLike, theta: float,
                     lambda_r: float) -> LossValue:
    """
    Barrera loss plus lambda_r * sum_t (r_t)^+. The penalty is a sum, so the
    per-time addends carry lambda_r * T * (r_t)^+ to keep the mean identity.
    """
    if lambda_r < 0:
        raise InputError("Penalty weights must be nonnegative")
    theta = validate_theta(theta)
    r, y, q = _aligned(r, y, q)
    terms = barrera_terms(r, y, q, theta)
    if lambda_r > 0:
        terms = terms + lambda_r * len(r) * r_penalty_terms(r)
    return _from_terms(terms)


def penalized_joint_loss(e: ArrayLike, q: ArrayLike, y: SeriesLike, theta: float,
                         lambda_e: float, lambda_q: float) -> LossValue:
    """
    Patton loss plus lambda_e * sum_t (e_t - q_t)^+ + lambda_q * sum_t (q_t)^+.

    Raises:
        DomainError: If any e_t >= 0.
    """
    if lambda_e < 0 or lambda_q < 0:
        raise InputError("Penalty weights must be nonnegative")
    base = patton_loss(e, q, y, theta)
    if lambda_e == 0 and lambda_q == 0:
        return base
    e, q = as_array(e), as_array(q)
    terms = base.per_time + len(e) * joint_penalty_terms(e, q, lambda_e, lambda_q)
    return _from_terms(terms)


def safe_r_objective(r: np.ndarray, y: np.ndarray, q: np.ndarray, theta: float,
                     lambda_r: float) -> float:
    value = np.mean(barrera_terms(r, y, q, theta)) + lambda_r * np.sum(r_penalty_terms(r))
    return float(value) if np.isfinite(value) else np.inf


def safe_joint_objective(e: np.ndarray, q: np.ndarray, y: np.ndarray, theta: float,
                         lambda_e: float, lambda_q: float) -> float:
    if np.any(e >= 0.0):
        return np.inf
    value = (np.mean(patton_terms(e, q, y, theta))
             + np.sum(joint_penalty_terms(e, q, lambda_e, lambda_q)))
    return float(value) if np.isfinite(value) else np.inf
