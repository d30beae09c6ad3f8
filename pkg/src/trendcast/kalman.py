"""Exact inference for a :class:`~trendcast.model.StateSpace`.

Covariance-form Kalman filter with forced symmetrisation, the fixed-interval
smoother, and posterior state draws.  Missing observations (NaN) skip the
update step.  The log-likelihood and one-step-ahead errors exclude the first
``burn`` observed positions (state dimension by default) because the
approximately diffuse start makes those innovations uninformative.
An observation with zero predicted variance that matches its prediction
exactly (a noiseless model on consistent data) carries no information and
is passed over rather than treated as a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericalError
from .model import StateSpace, psd_sqrt
from .rng import generator
from .series import Series

_LOG_2PI = math.log(2.0 * math.pi)
_EPS = np.finfo(float).eps


@njit(cache=True)
def _predicted_exactly(f, vt, yt):
    # F = 0 means y_t is a known function of the state; a matching value
    # carries no information, anything else is a contradiction
    return f == 0.0 and abs(vt) <= 8.0 * _EPS * max(1.0, abs(yt))


@njit(cache=True)
def _filter_kernel(Z, T, RQR, H, a1, P1, y, burn):
    n = y.shape[0]
    m = Z.shape[0]
    a_pred = np.empty((n, m))
    P_pred = np.empty((n, m, m))
    a_filt = np.empty((n, m))
    P_filt = np.empty((n, m, m))
    v = np.full(n, np.nan)
    F = np.full(n, np.nan)
    loglik = 0.0
    a = a1.copy()
    P = P1.copy()
    seen = 0
    for t in range(n):
        a_pred[t] = a
        P_pred[t] = P
        if np.isnan(y[t]):
            af = a
            Pf = P
        else:
            PZ = np.dot(P, Z)
            f = np.dot(Z, PZ) + H
            vt = y[t] - np.dot(Z, a)
            if _predicted_exactly(f, vt, y[t]):
                v[t] = vt
                F[t] = 0.0
                seen += 1
                a_filt[t] = a
                P_filt[t] = P
                a = np.dot(T, a)
                P = np.dot(np.dot(T, P), T.T) + RQR
                P = 0.5 * (P + P.T)
                continue
            if not f > 0.0:
                return a_pred, P_pred, a_filt, P_filt, v, F, loglik, t
            K = PZ / f
            af = a + K * vt
            Pf = P - np.outer(K, PZ)
            Pf = 0.5 * (Pf + Pf.T)
            v[t] = vt
            F[t] = f
            if seen >= burn:
                loglik += -0.5 * (math.log(2.0 * math.pi * f) + vt * vt / f)
            seen += 1
        a_filt[t] = af
        P_filt[t] = Pf
        a = np.dot(T, af)
        P = np.dot(np.dot(T, Pf), T.T) + RQR
        P = 0.5 * (P + P.T)
    return a_pred, P_pred, a_filt, P_filt, v, F, loglik, -1


@njit(cache=True)
def _predict_step(T, RQR, a, P, a_tmp, P_tmp):
    """In place: a <- T a, P <- T P T' + RQR (symmetrised)."""
    m = a.shape[0]
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += T[i, j] * a[j]
        a_tmp[i] = acc
    for i in range(m):
        a[i] = a_tmp[i]
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += T[i, k] * P[k, j]
            P_tmp[i, j] = acc
    for i in range(m):
        for j in range(i + 1):
            acc = 0.0
            acc2 = 0.0
            for k in range(m):
                acc += P_tmp[i, k] * T[j, k]
                acc2 += P_tmp[j, k] * T[i, k]
            value = 0.5 * (acc + acc2) + 0.5 * (RQR[i, j] + RQR[j, i])
            P[i, j] = value
            P[j, i] = value


@njit(cache=True)
def _loglik_kernel(Z, T, RQR, H, a1, P1, y, burn):
    # the filter without stored moments, written as loops to avoid
    # temporaries; it runs several times per sampler sweep
    n = y.shape[0]
    m = Z.shape[0]
    v = np.full(n, np.nan)
    loglik = 0.0
    a = a1.copy()
    P = P1.copy()
    PZ = np.empty(m)
    a_tmp = np.empty(m)
    P_tmp = np.empty((m, m))
    seen = 0
    for t in range(n):
        if not np.isnan(y[t]):
            f = H
            za = 0.0
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += P[i, j] * Z[j]
                PZ[i] = acc
            for i in range(m):
                f += Z[i] * PZ[i]
                za += Z[i] * a[i]
            vt = y[t] - za
            v[t] = vt
            seen += 1
            if not _predicted_exactly(f, vt, y[t]):
                if not f > 0.0:
                    return loglik, v, t
                if seen > burn:
                    loglik += -0.5 * (math.log(2.0 * math.pi * f) + vt * vt / f)
                for i in range(m):
                    a[i] += PZ[i] * vt / f
                for i in range(m):
                    for j in range(m):
                        P[i, j] -= PZ[i] * PZ[j] / f
        _predict_step(T, RQR, a, P, a_tmp, P_tmp)
    return loglik, v, -1


@njit(cache=True)
def _smoother_kernel(Z, T, a_pred, P_pred, v, F):
    # Backward recursion on (r, N) avoids inverting predicted covariances,
    # which are singular whenever a state has no noise.
    n, m = a_pred.shape
    means = np.empty((n, m))
    covs = np.empty((n, m, m))
    r = np.zeros(m)
    N = np.zeros((m, m))
    ZZ = np.outer(Z, Z)
    for t in range(n - 1, -1, -1):
        P = P_pred[t]
        if np.isnan(v[t]) or F[t] == 0.0:
            r = np.dot(T.T, r)
            N = np.dot(np.dot(T.T, N), T)
        else:
            K = np.dot(T, np.dot(P, Z)) / F[t]
            L = T - np.outer(K, Z)
            r = Z * (v[t] / F[t]) + np.dot(L.T, r)
            N = ZZ / F[t] + np.dot(np.dot(L.T, N), L)
        N = 0.5 * (N + N.T)
        means[t] = a_pred[t] + np.dot(P, r)
        V = P - np.dot(np.dot(P, N), P)
        covs[t] = 0.5 * (V + V.T)
    return means, covs


@njit(cache=True)
def _simulation_smoother_kernel(Z, T, R, q_sd, RQR, H, a1, P1, P1_sqrt, y, z0, zeta, zeps):
    """One exact draw of the state path plus the filter innovations of ``y``.

    Draws an unconditional path, then adds the smoothed mean of the data
    minus the simulated observations (Durbin & Koopman's simulation smoother).
    """
    n = y.shape[0]
    m = Z.shape[0]
    q = R.shape[1]
    h_sd = math.sqrt(H)
    alpha_plus = np.empty((n, m))
    y_star = np.empty(n)
    x = np.empty(m)
    x_tmp = np.empty(m)
    for i in range(m):
        acc = a1[i]
        for j in range(m):
            acc += P1_sqrt[i, j] * z0[j]
        x[i] = acc
    for t in range(n):
        zx = 0.0
        for i in range(m):
            alpha_plus[t, i] = x[i]
            zx += Z[i] * x[i]
        y_star[t] = y[t] - (zx + h_sd * zeps[t])
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += T[i, j] * x[j]
            for k in range(q):
                acc += R[i, k] * q_sd[k] * zeta[t, k]
            x_tmp[i] = acc
        for i in range(m):
            x[i] = x_tmp[i]

    K_all = np.zeros((n, m))
    F = np.full(n, np.nan)
    v_star = np.full(n, np.nan)
    v = np.full(n, np.nan)
    a = a1.copy()
    a_s = np.zeros(m)
    P = P1.copy()
    PZ = np.empty(m)
    TPZ = np.empty(m)
    a_tmp = np.empty(m)
    P_tmp = np.empty((m, m))
    for t in range(n):
        update = False
        f = H
        if not np.isnan(y[t]):
            za = 0.0
            zs = 0.0
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += P[i, j] * Z[j]
                PZ[i] = acc
            for i in range(m):
                f += Z[i] * PZ[i]
                za += Z[i] * a[i]
                zs += Z[i] * a_s[i]
            vt = y[t] - za
            v[t] = vt
            if _predicted_exactly(f, vt, y[t]):
                F[t] = 0.0
            elif not f > 0.0:
                return alpha_plus, v, t
            else:
                update = True
                F[t] = f
                v_star[t] = y_star[t] - zs
                for i in range(m):
                    acc = 0.0
                    for j in range(m):
                        acc += T[i, j] * PZ[j]
                    TPZ[i] = acc / f
                    K_all[t, i] = TPZ[i]
        # a <- T a (+ K v), a_s likewise, P <- T P T' + RQR (- f K K')
        _predict_step(T, RQR, a_s, P, a_tmp, P_tmp)
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += T[i, j] * a[j]
            a_tmp[i] = acc
        for i in range(m):
            a[i] = a_tmp[i]
        if update:
            for i in range(m):
                a[i] += TPZ[i] * v[t]
                a_s[i] += TPZ[i] * v_star[t]
                for j in range(m):
                    P[i, j] -= f * TPZ[i] * TPZ[j]

    back = np.zeros((n + 1, m))
    r = np.zeros(m)
    r_tmp = np.empty(m)
    for t in range(n - 1, -1, -1):
        # r <- Z v*/F + (T - K Z')' r
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += T[j, i] * r[j]
            r_tmp[i] = acc
        if not (np.isnan(y[t]) or F[t] == 0.0):
            kr = 0.0
            for i in range(m):
                kr += K_all[t, i] * r[i]
            for i in range(m):
                r_tmp[i] += Z[i] * (v_star[t] / F[t] - kr)
        for i in range(m):
            r[i] = r_tmp[i]
            back[t, i] = r[i]

    draw = np.empty((n, m))
    s = np.empty(m)
    s_tmp = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += P1[i, j] * back[0, j]
        s[i] = acc
    for t in range(n):
        for i in range(m):
            draw[t, i] = alpha_plus[t, i] + s[i]
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += T[i, j] * s[j] + RQR[i, j] * back[t + 1, j]
            s_tmp[i] = acc
        for i in range(m):
            s[i] = s_tmp[i]
    return draw, v, -1


def _as_array(y) -> np.ndarray:
    if isinstance(y, Series):
        return np.ascontiguousarray(y.values, dtype=float)
    return np.ascontiguousarray(np.asarray(y, dtype=float).reshape(-1))


def burn_mask(y: np.ndarray, burn: int) -> np.ndarray:
    """Boolean mask of the first ``burn`` observed positions."""
    observed = ~np.isnan(y)
    return observed & (np.cumsum(observed) <= burn)


@dataclass(frozen=True, eq=False)
class FilterResult:
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    innovations: np.ndarray
    innovation_variances: np.ndarray
    loglik: float
    burn: int

    @property
    def one_step_errors(self) -> np.ndarray:
        """Innovations with missing and burn-in positions set to NaN."""
        out = self.innovations.copy()
        out[burn_mask(self.innovations, self.burn)] = np.nan
        return out


@dataclass(frozen=True, eq=False)
class SmoothResult:
    means: np.ndarray
    covs: np.ndarray


def filter(ss: StateSpace, y, burn: int | None = None) -> FilterResult:
    """Run the Kalman filter over ``y`` (Series or array, NaN = missing)."""
    arr = _as_array(y)
    if arr.size < 1:
        raise ValueError("need at least one observation")
    burn = ss.m if burn is None else int(burn)
    a_pred, P_pred, a_filt, P_filt, v, F, loglik, fail = _filter_kernel(
        ss.Z, ss.T, ss.RQR, ss.H, ss.a1, ss.P1, arr, burn
    )
    if fail >= 0:
        raise NumericalError(f"non-positive innovation variance at t={fail}")
    return FilterResult(a_pred, P_pred, a_filt, P_filt, v, F, float(loglik), burn)


def log_likelihood(ss: StateSpace, y, burn: int = 0) -> tuple[float, np.ndarray]:
    """Log-likelihood and raw innovations, without storing the moments."""
    loglik, v, fail = _loglik_kernel(ss.Z, ss.T, ss.RQR, ss.H, ss.a1, ss.P1, _as_array(y), int(burn))
    if fail >= 0:
        raise NumericalError(f"non-positive innovation variance at t={fail}")
    return float(loglik), v


def smooth(ss: StateSpace, y, burn: int | None = None) -> SmoothResult:
    fr = filter(ss, y, burn)
    means, covs = _smoother_kernel(ss.Z, ss.T, fr.predicted_means, fr.predicted_covs,
                                   fr.innovations, fr.innovation_variances)
    return SmoothResult(means, covs)


def simulation_smoother(ss: StateSpace, y, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return (state draw ``(n, m)``, raw innovations ``(n,)``) using ``rng``."""
    arr = _as_array(y)
    n = arr.shape[0]
    z0 = rng.standard_normal(ss.m)
    zeta = rng.standard_normal((n, ss.q))
    zeps = rng.standard_normal(n)
    q_sd = np.sqrt(np.diag(ss.Q))
    draw, v, fail = _simulation_smoother_kernel(
        ss.Z, ss.T, ss.R, q_sd, ss.RQR, ss.H, ss.a1, ss.P1, np.ascontiguousarray(psd_sqrt(ss.P1)),
        arr, z0, zeta, zeps,
    )
    if fail >= 0:
        raise NumericalError(f"non-positive innovation variance at t={fail}")
    return draw, v


def sample_states(ss: StateSpace, y, seed=None) -> np.ndarray:
    """Draw one state path from ``p(alpha | y)``; deterministic given ``seed``."""
    draw, _ = simulation_smoother(ss, y, generator(seed))
    return draw
