# recursions.py
"""
Compiled sequential filters shared by every model.

Kernels never raise: they return the filled buffer together with a status
code and the index at which filtering stopped. Public wrappers in the model
modules translate the status into exceptions, objectives translate it into
an infinite loss.
"""
import numpy as np
from numba import njit

from .models import SpecKind

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_DOMAIN = 2


def feature_count(kind: SpecKind) -> int:
    return 2 if SpecKind(kind) is SpecKind.AS else 1


def regressors(y: np.ndarray, kind: SpecKind) -> np.ndarray:
    """
    Regressor matrix (T, d) of a return series: AS gives ((y)^+, (y)^-),
    SAV gives |y| and IG gives y^2.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    kind = SpecKind(kind)
    if kind is SpecKind.AS:
        return np.column_stack((np.maximum(y, 0.0), np.maximum(-y, 0.0)))
    if kind is SpecKind.SAV:
        return np.abs(y).reshape(-1, 1)
    return (y * y).reshape(-1, 1)


@njit(cache=True, nogil=True)
def linear_state_kernel(coef, feats, p, u, z0, n_out, bound):  # pragma: no cover
    """
    Vector recursion z_t = c0 + sum_i C_i f(y_{t-i}) + sum_s sum_j D_{s,j} z_{t-j, s}.

    coef has one row per state laid out as (intercept, p*d feature weights,
    then u lags of every state in turn). Times below max(p, u) hold z0.
    """
    n_states = z0.shape[0]
    d = feats.shape[1]
    m = max(p, u)
    z = np.empty((n_out, n_states))
    for t in range(min(m, n_out)):
        for s in range(n_states):
            z[t, s] = z0[s]

    for t in range(m, n_out):
        for s in range(n_states):
            acc = coef[s, 0]
            for i in range(1, p + 1):
                base = 1 + (i - 1) * d
                for k in range(d):
                    acc += coef[s, base + k] * feats[t - i, k]
            for s2 in range(n_states):
                base = 1 + p * d + s2 * u
                for j in range(1, u + 1):
                    acc += coef[s, base + j - 1] * z[t - j, s2]
            if not np.isfinite(acc) or abs(acc) > bound:
                return z, STATUS_DIVERGED, t
            z[t, s] = acc
    return z, STATUS_OK, n_out


@njit(cache=True, nogil=True)
def residual_kernel(coef, feats, zq, p, u, r0, n_out, bound):  # pragma: no cover
    """
    r_t = g0 + sum_i G_i f(y_{t-i}) + sum_j H_j zq_{t-j} + sum_j K_j r_{t-j}
    with zq an exogenous path at least n_out - 1 long.
    """
    d = feats.shape[1]
    m = max(p, u)
    r = np.empty(n_out)
    for t in range(min(m, n_out)):
        r[t] = r0

    for t in range(m, n_out):
        acc = coef[0]
        for i in range(1, p + 1):
            base = 1 + (i - 1) * d
            for k in range(d):
                acc += coef[base + k] * feats[t - i, k]
        base_q = 1 + p * d
        base_r = base_q + u
        for j in range(1, u + 1):
            acc += coef[base_q + j - 1] * zq[t - j] + coef[base_r + j - 1] * r[t - j]
        if not np.isfinite(acc) or abs(acc) > bound:
            return r, STATUS_DIVERGED, t
        r[t] = acc
    return r, STATUS_OK, n_out


@njit(cache=True, nogil=True)
def gas1_kernel(y, a, b, beta, gamma, k0, theta, n_out, k_max):  # pragma: no cover
    k = np.empty(n_out)
    q = np.empty(n_out)
    e = np.empty(n_out)
    k[0] = k0
    if abs(k0) > k_max:
        return q, e, STATUS_DIVERGED, 0
    q[0] = a * np.exp(k0)
    e[0] = b * np.exp(k0)

    for t in range(1, n_out):
        hit = 1.0 if y[t - 1] <= q[t - 1] else 0.0
        kt = beta * k[t - 1] + (gamma / e[t - 1]) * (hit * y[t - 1] / theta - e[t - 1])
        if not np.isfinite(kt) or abs(kt) > k_max:
            return q, e, STATUS_DIVERGED, t
        k[t] = kt
        scale = np.exp(kt)
        q[t] = a * scale
        e[t] = b * scale
    return q, e, STATUS_OK, n_out


@njit(cache=True, nogil=True)
def gas2_kernel(y, w, b1, b2, A, q_init, e_init, theta, n_out, bound):  # pragma: no cover
    q = np.empty(n_out)
    e = np.empty(n_out)
    q[0] = q_init
    e[0] = e_init

    for t in range(1, n_out):
        hit = 1.0 if y[t - 1] <= q[t - 1] else 0.0
        s1 = q[t - 1] * (theta - hit)
        s2 = hit * y[t - 1] / theta - e[t - 1]
        qt = w[0] + b1 * q[t - 1] + A[0, 0] * s1 + A[0, 1] * s2
        et = w[1] + b2 * e[t - 1] + A[1, 0] * s1 + A[1, 1] * s2
        if not (np.isfinite(qt) and np.isfinite(et)) or abs(qt) > bound or abs(et) > bound:
            return q, e, STATUS_DIVERGED, t
        q[t] = qt
        e[t] = et
    return q, e, STATUS_OK, n_out


def latent_seed(value: float, kind: SpecKind) -> float:
    """Maps an output-scale seed onto the scale the recursion runs on."""
    return value * value if SpecKind(kind) is SpecKind.IG else value


def from_latent(z: np.ndarray, kind: SpecKind) -> tuple[np.ndarray, bool]:
    """
    Output-scale values of a latent path; IG paths are -sqrt(z). The flag is
    False when a latent IG value is negative.
    """
    if SpecKind(kind) is not SpecKind.IG:
        return z, True
    if np.any(z < 0.0):
        return z, False
    return -np.sqrt(z), True
