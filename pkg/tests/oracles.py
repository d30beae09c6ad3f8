"""Brute-force reference computations used to check the fast code paths.

Everything here forms the full joint Gaussian of states and observations
explicitly and conditions with dense linear algebra.  It is slow and only
meant for tiny problems.
"""

from __future__ import annotations

import math

import numpy as np


def joint_moments(Z, T, R, Q, H, a1, P1, n):
    """Mean and covariance of ``(alpha_1..alpha_n, y_1..y_n)`` stacked.

    The model is written as a linear map of independent pieces
    ``u = (alpha_1, eta_1..eta_{n-1}, eps_1..eps_n)``.
    """
    Z = np.asarray(Z, float)
    T = np.asarray(T, float)
    R = np.asarray(R, float)
    Q = np.asarray(Q, float)
    m, q = R.shape
    size_u = m + (n - 1) * q + n
    A = np.zeros((n * m, size_u))
    # alpha_1 = alpha_1; alpha_{t+1} = T alpha_t + R eta_t
    A[0:m, 0:m] = np.eye(m)
    for t in range(1, n):
        A[t * m:(t + 1) * m] = T @ A[(t - 1) * m:t * m]
        col = m + (t - 1) * q
        A[t * m:(t + 1) * m, col:col + q] += R
    Y = np.zeros((n, size_u))
    for t in range(n):
        Y[t] = Z @ A[t * m:(t + 1) * m]
        Y[t, m + (n - 1) * q + t] = 1.0
    M = np.vstack([A, Y])
    cov_u = np.zeros((size_u, size_u))
    cov_u[:m, :m] = P1
    for t in range(n - 1):
        s = m + t * q
        cov_u[s:s + q, s:s + q] = Q
    idx = np.arange(m + (n - 1) * q, size_u)
    cov_u[idx, idx] = H
    mean_u = np.zeros(size_u)
    mean_u[:m] = a1
    return M @ mean_u, M @ cov_u @ M.T


def _logpdf(x, mean, cov):
    if x.size == 0:
        return 0.0
    d = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (x.size * math.log(2 * math.pi) + logdet + d @ np.linalg.solve(cov, d))


def loglik(ss, y, burn=0):
    """Log density of the observed y, conditional on the first ``burn`` observed values."""
    y = np.asarray(y, float)
    n, m = y.size, ss.m
    mean, cov = joint_moments(ss.Z, ss.T, ss.R, ss.Q, ss.H, ss.a1, ss.P1, n)
    obs = np.flatnonzero(~np.isnan(y)) + n * m
    mu, S = mean[obs], cov[np.ix_(obs, obs)]
    x = y[~np.isnan(y)]
    head = slice(0, min(burn, x.size))
    return _logpdf(x, mu, S) - _logpdf(x[head], mu[head], S[head, head])


def smoothed(ss, y):
    """E[alpha_t | y] and Var[alpha_t | y] for every t, shapes ``(n, m)`` and ``(n, m, m)``."""
    y = np.asarray(y, float)
    n, m = y.size, ss.m
    mean, cov = joint_moments(ss.Z, ss.T, ss.R, ss.Q, ss.H, ss.a1, ss.P1, n)
    states = np.arange(n * m)
    obs = np.flatnonzero(~np.isnan(y)) + n * m
    S_yy = cov[np.ix_(obs, obs)]
    S_ay = cov[np.ix_(states, obs)]
    gain = np.linalg.solve(S_yy, S_ay.T).T
    cond_mean = mean[states] + gain @ (y[~np.isnan(y)] - mean[obs])
    cond_cov = cov[np.ix_(states, states)] - gain @ S_ay.T
    means = cond_mean.reshape(n, m)
    covs = np.stack([cond_cov[t * m:(t + 1) * m, t * m:(t + 1) * m] for t in range(n)])
    return means, covs


def relative_error(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def random_model(rng, m, q):
    """A random StateSpace with ``m`` states and ``q`` disturbances."""
    from trendcast.model import StateSpace

    T = rng.normal(size=(m, m)) * 0.6
    R = rng.normal(size=(m, q))
    Q = np.diag(rng.uniform(0.05, 2.0, q))
    L = rng.normal(size=(m, m))
    P1 = L @ L.T + 0.1 * np.eye(m)
    return StateSpace(rng.normal(size=m), T, R, Q, rng.uniform(0.05, 2.0), rng.normal(size=m), 0.5 * (P1 + P1.T))
