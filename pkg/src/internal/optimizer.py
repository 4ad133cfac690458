# optimizer.py
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import minimize

from .exceptions import EstimationError, InfeasibleStartError, InputError
from .schemas import EstimationConfig

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class MultistartConfig:
    n_starts: int = 100
    n_keep: int = 3
    n_chained: int = 6
    seed: int = 0
    max_iter: int = 2000
    tol: float = 1e-8
    bound: float = 100.0
    uniform_fraction: float = 0.5
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_starts < 1 or self.n_keep < 1 or self.n_chained < 1:
            raise InputError("n_starts, n_keep and n_chained must be positive")
        if self.n_keep > self.n_starts:
            raise InputError("n_keep cannot exceed n_starts")
        if self.tol <= 0 or self.bound <= 0:
            raise InputError("tol and bound must be positive")

    @classmethod
    def from_estimation(cls, config: EstimationConfig, seed: Optional[int] = None) -> "MultistartConfig":
        return cls(n_starts=config.n_starts,
                   n_keep=config.n_keep,
                   n_chained=config.n_chained,
                   seed=config.seed if seed is None else seed,
                   max_iter=config.max_iter,
                   tol=config.tol,
                   bound=config.bound,
                   uniform_fraction=config.uniform_fraction,
                   n_jobs=config.n_jobs)


@dataclass
class CandidateTrace:
    index: int
    start: np.ndarray
    start_value: float
    kept: bool = False
    chain_values: list[float] = field(default_factory=list)


@dataclass
class MultistartResult:
    x: np.ndarray
    fun: float
    audit: list[CandidateTrace]


def _total(objective: Objective) -> Objective:
    def wrapped(x: np.ndarray) -> float:
        try:
            value = float(objective(x))
        except (ArithmeticError, ValueError):
            return np.inf
        return value if np.isfinite(value) else np.inf
    return wrapped


def local_minimize(objective: Objective, x0: ArrayLike, max_iter: int = 2000,
                   tol: float = 1e-8, bound: float = 100.0) -> tuple[np.ndarray, float]:
    """
    Bounded Nelder-Mead descent from x0. The returned value never exceeds
    objective(x0); when the search does not improve on it, x0 is returned.

    Raises:
        InfeasibleStartError: If objective(x0) is infinite.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise InputError("Starting point must be finite")

    fun = _total(objective)
    f0 = fun(x0)
    if not np.isfinite(f0):
        raise InfeasibleStartError("Objective is infinite at the starting point",
                                   {"x0": x0.tolist()})

    start = np.clip(x0, -bound, bound)
    result = minimize(fun, start, method="Nelder-Mead",
                      bounds=[(-bound, bound)] * len(x0),
                      options={"maxiter": max_iter, "xatol": tol, "fatol": tol})
    if np.isfinite(result.fun) and result.fun < f0:
        return np.asarray(result.x, dtype=float), float(result.fun)
    return x0, f0


def chain_minimize(objective: Objective, x0: ArrayLike, n_chained: int, max_iter: int = 2000,
                   tol: float = 1e-8, bound: float = 100.0) -> tuple[np.ndarray, float, list[float]]:
    """Runs n_chained local searches, each starting where the previous stopped."""
    x = np.asarray(x0, dtype=float)
    values = []
    f = np.inf
    for _ in range(n_chained):
        x, f = local_minimize(objective, x, max_iter, tol, bound)
        values.append(f)
    return x, f, values


def draw_candidates(dim: int, config: MultistartConfig) -> np.ndarray:
    """First round(uniform_fraction * n_starts) rows uniform on [-1, 1], the rest standard normal."""
    rng = np.random.default_rng(config.seed)
    n_uniform = int(round(config.uniform_fraction * config.n_starts))
    uniform = rng.uniform(-1.0, 1.0, size=(n_uniform, dim))
    normal = rng.standard_normal(size=(config.n_starts - n_uniform, dim))
    return np.vstack((uniform, normal))


def multistart_minimize(objective: Objective, dim: int, config: MultistartConfig,
                        initial_guesses: Sequence[ArrayLike] = ()) -> MultistartResult:
    """
    Draws random candidates (plus any heuristic guesses), ranks them by objective,
    and refines the n_keep best with chained local searches. The audit trail
    lists every candidate's start value and, for kept ones, the chain values.

    Raises:
        EstimationError: If every candidate has an infinite objective.
    """
    if dim < 1:
        raise InputError("dim must be at least 1")

    pool = draw_candidates(dim, config)
    guesses = [np.asarray(g, dtype=float).ravel() for g in initial_guesses]
    for guess in guesses:
        if guess.shape != (dim,):
            raise InputError(f"Initial guess has shape {guess.shape}, expected ({dim},)")
    if guesses:
        pool = np.vstack([pool, *guesses])

    fun = _total(objective)
    with ThreadPoolExecutor(max_workers=config.n_jobs) as executor:
        start_values = list(executor.map(fun, pool))

    audit = [CandidateTrace(i, pool[i], v) for i, v in enumerate(start_values)]
    finite = [i for i in np.argsort(start_values, kind="stable") if np.isfinite(start_values[i])]
    if not finite:
        raise EstimationError("Every multistart candidate is infeasible",
                              {"n_candidates": len(pool), "dim": dim})

    kept = finite[:config.n_keep]
    logger.debug("Multistart kept candidates %s with values %s",
                 kept, [start_values[i] for i in kept])

    def refine(index: int) -> tuple[np.ndarray, float, list[float]]:
        return chain_minimize(fun, pool[index], config.n_chained, config.max_iter,
                              config.tol, config.bound)

    with ThreadPoolExecutor(max_workers=config.n_jobs) as executor:
        chains = list(executor.map(refine, kept))

    best_x, best_f = None, np.inf
    for index, (x, f, values) in zip(kept, chains):
        audit[index].kept = True
        audit[index].chain_values = values
        if best_x is None or f < best_f:
            best_x, best_f = x, f

    logger.debug("Multistart finished at %.6g", best_f)
    return MultistartResult(np.asarray(best_x), float(best_f), audit)
