"""Posterior-predictive forecasts and one-step-error model comparison."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError
from .model import StateSpace
from .rng import generator
from .sampler import PosteriorDraws
from .series import TimeIndex

DEFAULT_QUANTILES = (0.025, 0.5, 0.975)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Summary of ``trajectories`` (one row per simulated future path)."""

    index: TimeIndex
    mean: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    trajectories: np.ndarray
    level: float = 0.95

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("period,mean,lo,hi\n")
        for label, m, lo, hi in zip(self.index.labels(), self.mean, self.lower, self.upper):
            out.write(f"{label},{float(m)!r},{float(lo)!r},{float(hi)!r}\n")
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "periods": self.index.labels(),
            "mean": self.mean.tolist(),
            "lower": self.lower.tolist(),
            "median": self.median.tolist(),
            "upper": self.upper.tolist(),
            "level": self.level,
            "trajectories": int(self.trajectories.shape[0]),
        }


def _future_index(draws: PosteriorDraws, horizon: int) -> TimeIndex:
    return draws.y.index.shifted(draws.y.index.length, horizon)


def simulate_paths(ss: StateSpace, start_state: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Observation paths driven by standard-normal ``noise`` of shape ``(k, h, q + 1)``.

    Step ``t`` uses ``noise[:, t, :q]`` for the state shocks and
    ``noise[:, t, q]`` for the observation shock, so a longer horizon only
    appends columns.
    """
    q_sd = np.sqrt(np.diag(ss.Q))
    h_sd = np.sqrt(ss.H)
    k, h, _ = noise.shape
    x = np.broadcast_to(start_state, (k, ss.m)).copy()
    out = np.empty((k, h))
    for t in range(h):
        x = x @ ss.T.T + (noise[:, t, :ss.q] * q_sd) @ ss.R.T
        out[:, t] = x @ ss.Z + h_sd * noise[:, t, ss.q]
    return out


def predict(
    draws: PosteriorDraws,
    horizon: int,
    trajectories_per_draw: int = 1,
    seed=None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> ForecastResult:
    """Simulate ``horizon`` steps ahead from every retained draw's final state.

    Trajectory ``j`` of draw ``i`` uses its own stream
    ``generator(seed, "trajectory", i, j)``; ``seed`` defaults to the
    sampler seed.
    """
    if horizon < 1:
        raise ArgumentError("horizon must be at least 1")
    if trajectories_per_draw < 1:
        raise ArgumentError("trajectories_per_draw must be at least 1")
    if draws.count < 1:
        raise ArgumentError("no retained draws")
    lo_q, mid_q, hi_q = quantiles
    if not 0.0 < lo_q <= mid_q <= hi_q < 1.0:
        raise ArgumentError("quantiles must be increasing inside (0, 1)")
    seed = draws.config.seed if seed is None else seed
    k = trajectories_per_draw
    paths = np.empty((draws.count * k, horizon))
    for i in range(draws.count):
        ss = draws.state_space(i)
        noise = np.stack([
            generator(seed, "trajectory", i, j).standard_normal((horizon, ss.q + 1)) for j in range(k)
        ])
        paths[i * k:(i + 1) * k] = simulate_paths(ss, draws.states[i, -1], noise)
    lower, median, upper = np.quantile(paths, [lo_q, mid_q, hi_q], axis=0)
    return ForecastResult(
        index=_future_index(draws, horizon),
        mean=paths.mean(axis=0),
        lower=lower,
        median=median,
        upper=upper,
        trajectories=paths,
        level=hi_q - lo_q,
    )


def predictive_variance(ss: StateSpace, horizon: int, initial_cov: np.ndarray | None = None) -> np.ndarray:
    """Variance of ``y_{n+1..n+h}`` given the state at ``n`` (known exactly unless ``initial_cov``)."""
    if horizon < 1:
        raise ArgumentError("horizon must be at least 1")
    P = np.zeros((ss.m, ss.m)) if initial_cov is None else np.asarray(initial_cov, dtype=float)
    RQR = ss.RQR
    out = np.empty(horizon)
    for t in range(horizon):
        P = ss.T @ P @ ss.T.T + RQR
        P = 0.5 * (P + P.T)
        out[t] = ss.Z @ P @ ss.Z + ss.H
    return out


# ------------------------------------------------------------ error curves


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    index: TimeIndex
    values: np.ndarray
    label: str = "model"

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("period,cumerr\n")
        for label, v in zip(self.index.labels(), self.values):
            out.write(f"{label},{float(v)!r}\n")
        return out.getvalue()


def cumulative_abs_error(errors: np.ndarray) -> np.ndarray:
    """Mean |error| across rows at each t (NaN counts as 0), then cumulated."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    return np.cumsum(np.nan_to_num(np.abs(errors), nan=0.0).mean(axis=0))


def error_curve(draws: PosteriorDraws, label: str | None = None) -> ErrorCurve:
    """Cumulative posterior-mean absolute one-step error; burn-in and gaps add nothing."""
    if draws.count < 1:
        raise ArgumentError("no retained draws")
    return ErrorCurve(draws.y.index, cumulative_abs_error(draws.errors), draws.label if label is None else label)


@dataclass(frozen=True, eq=False)
class Comparison:
    labels: tuple[str, ...]
    finals: Mapping[str, float]
    winner: str
    gaps: Mapping[str, float]
    # per-t curve minus the winner's curve
    differences: Mapping[str, np.ndarray]
    index: TimeIndex

    def to_dict(self) -> dict:
        return {
            "models": list(self.labels),
            "final_cumulative_error": dict(self.finals),
            "winner": self.winner,
            "gap_to_winner": dict(self.gaps),
            "differences": {k: v.tolist() for k, v in self.differences.items()},
            "periods": self.index.labels(),
        }


def compare_models(curves: Sequence[ErrorCurve]) -> Comparison:
    """Rank models by final cumulative error; ties go to the lexicographically first label."""
    curves = list(curves)
    if not curves:
        raise ArgumentError("nothing to compare")
    labels = [c.label for c in curves]
    if len(set(labels)) != len(labels):
        raise ArgumentError(f"duplicate model labels {labels}; give each model spec its own \"label\"")
    n = curves[0].values.shape[0]
    if any(c.values.shape[0] != n for c in curves):
        raise ArgumentError("error curves differ in length")
    finals = {c.label: float(c.values[-1]) for c in curves}
    winner = min(labels, key=lambda lab: (finals[lab], lab))
    best = next(c for c in curves if c.label == winner).values
    return Comparison(
        labels=tuple(labels),
        finals=finals,
        winner=winner,
        gaps={lab: finals[lab] - finals[winner] for lab in labels},
        differences={c.label: c.values - best for c in curves},
        index=curves[0].index,
    )


def curves_csv(curves: Sequence[ErrorCurve]) -> str:
    """Tidy ``model,period,cumerr`` rows for every curve."""
    out = io.StringIO()
    out.write("model,period,cumerr\n")
    for c in curves:
        for label, v in zip(c.index.labels(), c.values):
            out.write(f"{c.label},{label},{float(v)!r}\n")
    return out.getvalue()
