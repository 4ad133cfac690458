# backtest.py
"""
ES backtests on violations (McNeil-Frey, Acerbi-Szekely Z1/Z2) and pairwise
forecast comparisons (Diebold-Mariano, Nadeau-Bengio, Loss Difference,
Encompassing). Bootstrap tests recentre the sample to the null and draw
replicates in fixed-size chunks from one seeded generator.
"""
import logging
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import linprog, nnls
from scipy.stats import t as student_t

from .config import BOOT_CHUNK, DEFAULT_N_BOOT, MIN_MNF_VIOLATIONS
from .core import ForecastPath, SeriesLike, as_array
from .exceptions import DomainError, InputError
from .losses import patton_terms
from .models import ZVariant
from .schemas import TestReport
from .utils import validate_theta

logger = logging.getLogger(__name__)

LEVEL = 0.05
# spreads below this share of the largest difference are rounding noise
SPREAD_RTOL = 1e-12


def _report(name: str, statistic: float, p_value: float, n_boot: int = 0,
            **diagnostics: Any) -> TestReport:
    p_value = float(min(max(p_value, 0.0), 1.0))
    return TestReport(name=name, statistic=float(statistic), p_value=p_value, n_boot=n_boot,
                      reject_at_5pct=p_value < LEVEL, diagnostics=diagnostics)


def _flat(variance: float, d: np.ndarray) -> bool:
    return variance <= (SPREAD_RTOL * float(np.max(np.abs(d)))) ** 2


def _aligned(*paths: ArrayLike) -> list[np.ndarray]:
    arrays = [as_array(p) for p in paths]
    if len({len(a) for a in arrays}) != 1:
        raise InputError(f"Inputs differ in length: {[len(a) for a in arrays]}")
    return arrays


def bootstrap_means(x: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    """Means of n_boot resamples with replacement, drawn BOOT_CHUNK at a time."""
    if n_boot < 1:
        raise InputError("n_boot must be at least 1")
    rng = np.random.default_rng(seed)
    n = len(x)
    means = np.empty(n_boot)
    for start in range(0, n_boot, BOOT_CHUNK):
        size = min(BOOT_CHUNK, n_boot - start)
        idx = rng.integers(0, n, size=(size, n))
        means[start:start + size] = x[idx].mean(axis=1)
    return means


def violation_set(y: SeriesLike, q: ArrayLike) -> np.ndarray:
    """Indices with y_t strictly below the VaR forecast."""
    y, q = _aligned(y, q)
    return np.flatnonzero(y < q)


def mnf_test(y: SeriesLike, q: ArrayLike, e: ArrayLike, n_boot: int = DEFAULT_N_BOOT,
             seed: int = 0) -> TestReport:
    """
    One-sided bootstrap test on x_t = y_t - e_t over violations. A small p
    means the residual mean is too negative, i.e. the ES underestimates risk.
    """
    y, q, e = _aligned(y, q, e)
    hits = violation_set(y, q)
    x = y[hits] - e[hits]
    if len(hits) < MIN_MNF_VIOLATIONS:
        observed = float(np.mean(x)) if len(x) else 0.0
        return _report("MNF", observed, 1.0, 0, n_violations=len(hits), inconclusive=True)

    observed = float(np.mean(x))
    means = bootstrap_means(x - observed, n_boot, seed)
    p_value = float(np.mean(means <= observed))
    return _report("MNF", observed, p_value, n_boot, n_violations=len(hits))


def acerbi_szekely_test(y: SeriesLike, q: ArrayLike, e: ArrayLike,
                        variant: ZVariant = ZVariant.Z1, theta: float = 0.05,
                        n_boot: int = DEFAULT_N_BOOT, seed: int = 0) -> TestReport:
    """
    Z1 = mean of y_t / e_t over violations; Z2 = (1/T) sum over violations of
    y_t / (theta e_t). Both equal 1 under the null; the bootstrap shifts the
    per-term contributions so the resampled statistic is centred at 1.

    Raises:
        DomainError: If an ES value used by the statistic is zero.
    """
    theta = validate_theta(theta)
    variant = ZVariant(variant)
    name = f"AS-{variant.value}"
    y, q, e = _aligned(y, q, e)
    hits = violation_set(y, q)
    if np.any(e[hits] == 0.0):
        raise DomainError("Acerbi-Szekely statistics divide by the ES, which is zero")

    if variant is ZVariant.Z1:
        if len(hits) == 0:
            return _report(name, 0.0, 1.0, 0, n_violations=0, inconclusive=True)
        terms = y[hits] / e[hits]
    else:
        terms = np.zeros(len(y))
        terms[hits] = y[hits] / (theta * e[hits])

    observed = float(np.mean(terms))
    means = bootstrap_means(terms - observed + 1.0, n_boot, seed)
    p_value = float(np.mean(np.abs(means - 1.0) >= abs(observed - 1.0)))
    return _report(name, observed, p_value, n_boot, n_violations=len(hits))


def direct_tests(y: SeriesLike, q: ArrayLike, e: ArrayLike, theta: float,
                 n_boot: int = DEFAULT_N_BOOT, seed: int = 0) -> list[TestReport]:
    """MNF, Z1 and Z2 on the same forecasts, in that order."""
    return [mnf_test(y, q, e, n_boot, seed),
            acerbi_szekely_test(y, q, e, ZVariant.Z1, theta, n_boot, seed),
            acerbi_szekely_test(y, q, e, ZVariant.Z2, theta, n_boot, seed)]


def dm_test(loss_a: ArrayLike, loss_b: ArrayLike, h: int = 1) -> TestReport:
    """
    Diebold-Mariano test with the Harvey small-sample correction and a
    Student-t reference with T - 1 degrees of freedom. Negative statistics
    favour A.
    """
    a, b = _aligned(loss_a, loss_b)
    T = len(a)
    if T < 10:
        raise InputError("The DM test needs at least 10 loss pairs")
    if h < 1:
        raise InputError("Forecast horizon h must be at least 1")
    d = a - b
    if np.all(d == 0.0):
        return _report("DM", 0.0, 1.0, degenerate=True, equal_losses=True)

    mean_d = float(np.mean(d))
    centred = d - mean_d
    gamma = [float(np.dot(centred[k:], centred[:T - k]) / T) for k in range(h)]
    variance = gamma[0] + 2.0 * sum(gamma[1:])
    harvey = np.sqrt((T + 1 - 2 * h + h * (h - 1) / T) / T)

    if _flat(variance, d):
        statistic = np.copysign(np.inf, mean_d)
        p_value = 0.0
    else:
        statistic = harvey * mean_d / np.sqrt(variance / T)
        p_value = float(2.0 * student_t.sf(abs(statistic), T - 1))
    return _report("DM", statistic, p_value, mean_difference=mean_d,
                   better="A" if mean_d < 0 else "B", h=h)


def nadeau_bengio_test(fold_loss_a: ArrayLike, fold_loss_b: ArrayLike, n_train: int,
                       n_test: int) -> TestReport:
    """Corrected resampled t-test over J folds; variance rescaled by (1/J + n_test/n_train)."""
    a, b = _aligned(fold_loss_a, fold_loss_b)
    J = len(a)
    if J < 2:
        raise InputError("The Nadeau-Bengio test needs at least 2 folds")
    if n_train < 1 or n_test < 1:
        raise InputError("n_train and n_test must be positive")
    d = a - b
    variance = float(np.var(d, ddof=1))
    if _flat(variance, d):
        return _report("NB", 0.0, 1.0, degenerate=True, n_folds=J)

    factor = 1.0 / J + n_test / n_train
    statistic = float(np.mean(d)) / np.sqrt(factor * variance)
    p_value = float(2.0 * student_t.sf(abs(statistic), J - 1))
    return _report("NB", statistic, p_value, n_folds=J, correction=factor,
                   better="A" if statistic < 0 else "B")


def loss_difference_test(loss_a: ArrayLike, loss_b: ArrayLike, n_boot: int = DEFAULT_N_BOOT,
                         seed: int = 0, name: str = "LD") -> TestReport:
    """One-sided bootstrap of mean(loss_a - loss_b) against H0: mean >= 0; rejection favours A."""
    a, b = _aligned(loss_a, loss_b)
    d = a - b
    if np.all(d == 0.0):
        return _report(name, 0.0, 1.0, degenerate=True)
    observed = float(np.mean(d))
    means = bootstrap_means(d - observed, n_boot, seed)
    p_value = float(np.mean(means <= observed))
    return _report(name, observed, p_value, n_boot)


def _quantile_weights(X: np.ndarray, y: np.ndarray, theta: float) -> Optional[np.ndarray]:
    """Nonnegative linear quantile regression of y on the columns of X."""
    n, k = X.shape
    cost = np.concatenate((np.zeros(k), np.full(n, theta), np.full(n, 1.0 - theta)))
    A_eq = np.hstack((X, np.eye(n), -np.eye(n)))
    result = linprog(cost, A_eq=A_eq, b_eq=y, bounds=[(0, None)] * (k + 2 * n), method="highs")
    return result.x[:k] if result.success else None


def encompassing_test(path_a: ForecastPath, path_b: ForecastPath, y: SeriesLike,
                      theta: Optional[float] = None, n_boot: int = DEFAULT_N_BOOT,
                      seed: int = 0) -> TestReport:
    """
    Fits a nonnegative combination C of A and B on the first half of the range,
    then tests on the second half whether A beats C under the Patton loss.
    Rejection means B adds only noise to A.
    """
    theta = validate_theta(path_a.theta if theta is None else theta)
    y = as_array(y)
    if not len(path_a) == len(path_b) == len(y):
        raise InputError("Forecast paths and returns differ in length")
    T = len(y)
    if T < 20:
        raise InputError("The encompassing test needs at least 20 observations")

    half = T // 2
    qa, qb, ea, eb = path_a.q, path_b.q, path_a.e, path_b.e
    Xe = np.column_stack((ea[:half], eb[:half]))
    Xq = np.column_stack((qa[:half], qb[:half]))
    if (np.array_equal(qa, qb) and np.array_equal(ea, eb)) \
            or np.linalg.matrix_rank(Xe) < 2 or np.linalg.matrix_rank(Xq) < 2:
        return _report("ENC", 0.0, 1.0, degenerate=True, collinear=True)

    y_fit = y[:half]
    proxy = qa[:half] + (y_fit - qa[:half]) * (y_fit <= qa[:half]) / theta
    w_e, _ = nnls(Xe, proxy)
    w_q = _quantile_weights(Xq, y_fit, theta)
    if w_q is None:
        logger.warning("Quantile combination LP failed, keeping A's VaR")
        w_q = np.array([1.0, 0.0])

    qc = w_q[0] * qa[half:] + w_q[1] * qb[half:]
    ec = w_e[0] * ea[half:] + w_e[1] * eb[half:]
    weights = {"es_weights": w_e.tolist(), "var_weights": w_q.tolist()}
    if np.any(ec >= 0.0) or np.any(ea[half:] >= 0.0):
        return _report("ENC", 0.0, 1.0, degenerate=True, invalid_combination=True, **weights)

    y_test = y[half:]
    report = loss_difference_test(patton_terms(ea[half:], qa[half:], y_test, theta),
                                  patton_terms(ec, qc, y_test, theta), n_boot, seed, name="ENC")
    return report.model_copy(update={"diagnostics": {**report.diagnostics, **weights}})
