# simulate.py
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from numba import njit
from numpy.typing import ArrayLike
from scipy.special import gammaln
from scipy.stats import norm
from scipy.stats import t as student_t

from .config import DEFAULT_THETAS
from .core import ReturnSeries
from .exceptions import DomainError, InputError
from .models import Innovation, ReturnUnits
from .schemas import DgpSchema, GarchParams
from .utils import theta_label, validate_theta

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]

VARIANCE_RECURSION = "sigma2_t = omega + alpha * y_{t-1}^2 + beta_g * sigma2_{t-1}"


@njit(cache=True, nogil=True)
def _garch_kernel(eps, omega, alpha, beta_g, sigma2_0):  # pragma: no cover
    n = eps.shape[0]
    y = np.empty(n)
    sigma = np.empty(n)
    sigma2 = sigma2_0
    for i in range(n):
        if i > 0:
            sigma2 = omega + alpha * y[i - 1] * y[i - 1] + beta_g * sigma2
        sigma[i] = np.sqrt(sigma2)
        y[i] = sigma[i] * eps[i]
    return y, sigma


def standardized_innovations(params: GarchParams, size: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Unit-variance draws; Student-t draws are scaled by sqrt((nu - 2) / nu)."""
    if Innovation(params.innovation) is Innovation.NORMAL:
        return rng.standard_normal(size)
    nu = float(params.nu)  # type: ignore
    return rng.standard_t(nu, size) * np.sqrt((nu - 2.0) / nu)


def garch_simulate(params: GarchParams, T: int, seed: Seed = 0,
                   name: str = "garch") -> tuple[ReturnSeries, np.ndarray]:
    """
    GARCH(1,1) returns y_t = sigma_t * eps_t started at the unconditional variance.
    Returns the series and the conditional standard deviation path.

    Raises:
        InputError: If T < 2.
    """
    if T < 2:
        raise InputError("A simulated series needs at least 2 points")
    rng = np.random.default_rng(seed)
    eps = standardized_innovations(params, T, rng)
    y, sigma = _garch_kernel(eps, params.omega, params.alpha, params.beta_g,
                             params.unconditional_variance)
    return ReturnSeries(y, None, ReturnUnits.RAW, name), sigma


def _check_sigma(sigma: ArrayLike) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("Volatility must be finite and nonnegative")
    return s


def _shape(value: np.ndarray, scalar: bool) -> Union[float, np.ndarray]:
    return float(value) if scalar else value


def true_var_es_normal(sigma_t: ArrayLike, theta: float):
    """VaR sigma * Phi^-1(theta) and ES -(sigma / theta) * phi(Phi^-1(1 - theta))."""
    theta = validate_theta(theta)
    s = _check_sigma(sigma_t)
    q = s * norm.ppf(theta)
    e = -(s / theta) * norm.pdf(norm.ppf(1.0 - theta))
    scalar = s.ndim == 0
    return _shape(q, scalar), _shape(e, scalar)


def student_unit_var_es(nu: float, theta: float) -> tuple[float, float]:
    """
    VaR and ES of the plain Student-t distribution with nu degrees of freedom.

    Raises:
        DomainError: If nu <= 1, where the tail mean does not exist.
    """
    if nu <= 1:
        raise DomainError(f"Student-t ES needs nu > 1, got {nu}")
    z = student_t.ppf(theta, nu)
    log_c = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * np.log(np.pi * nu)
    density_term = np.exp(log_c - (nu + 1.0) / 2.0 * np.log1p(z * z / nu))
    e = -(nu + z * z) / ((nu - 1.0) * theta) * density_term
    return float(z), float(e)


def true_var_es_student(sigma_t: ArrayLike, nu: float, theta: float, standardized: bool = True):
    """
    Student-t VaR and ES scaled by sigma. With standardized=True the innovation
    has unit variance, so both values also carry sqrt((nu - 2) / nu).

    Raises:
        DomainError: If nu <= 2 with standardized=True, or nu <= 1.
    """
    theta = validate_theta(theta)
    s = _check_sigma(sigma_t)
    if standardized and nu <= 2:
        raise DomainError(f"Unit-variance Student-t innovations need nu > 2, got {nu}")
    z, es = student_unit_var_es(nu, theta)
    scale = np.sqrt((nu - 2.0) / nu) if standardized else 1.0
    scalar = s.ndim == 0
    return _shape(s * scale * z, scalar), _shape(s * scale * es, scalar)


def true_var_es(params: GarchParams, sigma_t: ArrayLike, theta: float):
    if Innovation(params.innovation) is Innovation.NORMAL:
        return true_var_es_normal(sigma_t, theta)
    return true_var_es_student(sigma_t, float(params.nu), theta)  # type: ignore


@dataclass(frozen=True)
class NormalDist:
    mu: float = 0.0
    sigma: float = 1.0


@dataclass(frozen=True)
class StudentDist:
    nu: float


def var_es_ratio(dist: Union[NormalDist, StudentDist], theta: float) -> float:
    """
    VaR(theta) / ES(theta). Scale cancels for centred distributions.

    Raises:
        DomainError: If the ES is zero or the parameters are invalid.
    """
    theta = validate_theta(theta)
    if isinstance(dist, NormalDist):
        if dist.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        z = norm.ppf(theta)
        q = dist.mu + dist.sigma * z
        e = dist.mu - dist.sigma * norm.pdf(z) / theta
    else:
        q, e = student_unit_var_es(dist.nu, theta)
    if e == 0:
        raise DomainError("The ES is zero, the ratio is undefined")
    return float(q / e)


def ratio_curves(theta: float = 0.05, sigmas: Optional[Sequence[float]] = None,
                 nus: Optional[Sequence[float]] = None, mu: float = 0.05) -> pd.DataFrame:
    """
    VaR/ES ratio of a non-centred normal over sigma and of a centred
    Student-t over nu. Columns: family, parameter, ratio.
    """
    sigmas = list(np.linspace(0.5, 3.0, 26)) if sigmas is None else list(sigmas)
    nus = list(np.arange(3, 101)) if nus is None else list(nus)
    rows = [("NORMAL", float(s), var_es_ratio(NormalDist(mu, float(s)), theta)) for s in sigmas]
    rows += [("STUDENT", float(v), var_es_ratio(StudentDist(float(v)), theta)) for v in nus]
    return pd.DataFrame(rows, columns=["family", "parameter", "ratio"])


def default_dgps(nu: float = 6.0) -> list[DgpSchema]:
    """
    Two innovations times three representative equity-index coefficient sets,
    omega = 5e-6 * c with c in (1, 0.8, 1.2), alpha = 0.08, beta_g = 0.90.
    """
    dgps = []
    for innovation in (Innovation.NORMAL, Innovation.STUDENT):
        for label, c in (("I", 1.0), ("II", 0.8), ("III", 1.2)):
            params = GarchParams(omega=5e-6 * c, alpha=0.08, beta_g=0.90, innovation=innovation,
                                 nu=nu if innovation is Innovation.STUDENT else None)
            dgps.append(DgpSchema(name=f"{innovation.value}-{label}", params=params,
                                  stand_in=True))
    return dgps


@dataclass(frozen=True, eq=False)
class SimulatedSeries:
    dgp: str
    index: int
    seed: tuple[int, ...]
    y: ReturnSeries
    sigma: np.ndarray
    truth: dict[float, tuple[np.ndarray, np.ndarray]]
    split: int

    @property
    def train_range(self) -> range:
        return range(0, self.split)

    @property
    def test_range(self) -> range:
        return range(self.split, len(self.y))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": np.arange(len(self.y)), "y": self.y.values, "sigma": self.sigma})
        for theta, (q, e) in self.truth.items():
            frame[f"q_true@{theta_label(theta)}"] = q
            frame[f"e_true@{theta_label(theta)}"] = e
        return frame


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    dgps: list[DgpSchema]
    thetas: tuple[float, ...]
    n_series: int
    T: int
    split: int
    seed: int
    series: list[SimulatedSeries]

    def by_dgp(self, name: str) -> list[SimulatedSeries]:
        return [s for s in self.series if s.dgp == name]

    def manifest(self) -> dict:
        return {
            "dgps": [d.model_dump(mode="json") for d in self.dgps],
            "thetas": list(self.thetas),
            "n_series": self.n_series,
            "T": self.T,
            "split": {"train": self.split, "test": self.T - self.split},
            "seed": self.seed,
            "variance_recursion": VARIANCE_RECURSION,
            "garch_form_substituted": True,
            "student_innovations": "unit variance, scaled by sqrt((nu - 2) / nu)",
            "coefficients_stand_in": any(d.stand_in for d in self.dgps),
            "series": [{"dgp": s.dgp, "index": s.index, "seed": list(s.seed),
                        "file": f"{s.dgp}_{s.index:03d}.csv"} for s in self.series],
        }


def run_dgp_suite(coeff_sets: Optional[Sequence[DgpSchema]] = None, n_series: int = 20,
                  T: int = 1750, split: int = 1500,
                  thetas: Sequence[float] = DEFAULT_THETAS, seed: int = 0,
                  n_jobs: int = 1) -> DatasetBundle:
    """
    Seeded series for every DGP with aligned volatility and true VaR/ES paths.
    Series i of DGP k is drawn from the seed (seed, k, i).
    """
    if not 0 < split < T:
        raise InputError("split must lie strictly between 0 and T")
    dgps = list(coeff_sets) if coeff_sets is not None else default_dgps()
    thetas = tuple(validate_theta(th) for th in thetas)

    def simulate_one(job: tuple[int, int]) -> SimulatedSeries:
        k, i = job
        dgp = dgps[k]
        cell_seed = (seed, k, i)
        y, sigma = garch_simulate(dgp.params, T, list(cell_seed), name=f"{dgp.name}_{i:03d}")
        truth = {th: tuple(np.asarray(v) for v in true_var_es(dgp.params, sigma, th))
                 for th in thetas}
        return SimulatedSeries(dgp.name, i, cell_seed, y, sigma, truth, split)  # type: ignore

    jobs = [(k, i) for k in range(len(dgps)) for i in range(n_series)]
    with ThreadPoolExecutor(max_workers=n_jobs) as executor:
        series = list(executor.map(simulate_one, jobs))

    logger.info("Simulated %d series over %d DGPs", len(series), len(dgps))
    return DatasetBundle(dgps, thetas, n_series, T, split, seed, series)


def write_bundle(bundle: DatasetBundle, out_dir: Union[str, Path]) -> Path:
    """One CSV per series plus manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in bundle.series:
        s.to_frame().to_csv(out / f"{s.dgp}_{s.index:03d}.csv", index=False)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(bundle.manifest(), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Wrote simulation bundle to %s", out)
    return manifest
