"""Counterfactual impact of an intervention on a single series.

The model is fitted to the pre-period only and forecast through the end of
the post-period; the effect is the gap between what happened and the
simulated counterfactual trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ArgumentError, ParseError
from .forecast import predict
from .model import ComponentSpec, state_dim
from .sampler import McmcConfig, Priors, gibbs_fit
from .series import Series

DEFAULT_COMPONENTS = (ComponentSpec("local_linear_trend"),)


@dataclass(frozen=True)
class ImpactConfig:
    """Pre and post periods are inclusive ``(first, last)`` positions in the series."""

    pre: tuple[int, int]
    post: tuple[int, int]
    level: float = 0.95
    components: tuple[ComponentSpec, ...] = DEFAULT_COMPONENTS
    priors: Priors | Mapping | None = None
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    trajectories_per_draw: int = 1

    def __post_init__(self):
        pre = tuple(int(v) for v in self.pre)
        post = tuple(int(v) for v in self.post)
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)
        object.__setattr__(self, "components", tuple(self.components))
        if not 0 <= pre[0] <= pre[1]:
            raise ArgumentError(f"bad pre-period {pre}")
        if not post[0] <= post[1]:
            raise ArgumentError(f"bad post-period {post}")
        if post[0] <= pre[1]:
            raise ArgumentError("post-period must start after the pre-period ends")
        if not 0.0 < self.level < 1.0:
            raise ArgumentError("level must lie in (0, 1)")
        m = state_dim(self.components)
        if pre[1] - pre[0] + 1 < 3 * m:
            raise ArgumentError(f"pre-period needs at least {3 * m} points for a {m}-state model")
        if self.trajectories_per_draw < 1:
            raise ArgumentError("trajectories_per_draw must be at least 1")


@dataclass(frozen=True)
class Estimate:
    """Point value with posterior sd and an equal-tailed interval."""

    value: float
    sd: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"estimate": self.value, "sd": self.sd, "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class ImpactReport:
    periods: tuple[str, ...]
    actual: np.ndarray
    predicted: np.ndarray
    predicted_lower: np.ndarray
    predicted_upper: np.ndarray
    point_effect: np.ndarray
    point_effect_lower: np.ndarray
    point_effect_upper: np.ndarray
    actual_average: float
    actual_cumulative: float
    predicted_average: Estimate
    predicted_cumulative: Estimate
    average_effect: Estimate
    cumulative_effect: Estimate
    # None when the counterfactual total is not positive
    relative_effect: Estimate | None
    p_value: float
    significant: bool
    level: float
    trajectories: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        rel = self.relative_effect
        return {
            "periods": list(self.periods),
            "actual": _listed(self.actual),
            "predicted": self.predicted.tolist(),
            "predicted_lower": self.predicted_lower.tolist(),
            "predicted_upper": self.predicted_upper.tolist(),
            "point_effect": _listed(self.point_effect),
            "point_effect_lower": _listed(self.point_effect_lower),
            "point_effect_upper": _listed(self.point_effect_upper),
            "actual_average": self.actual_average,
            "actual_cumulative": self.actual_cumulative,
            "predicted_average": self.predicted_average.to_dict(),
            "predicted_cumulative": self.predicted_cumulative.to_dict(),
            "average_effect": self.average_effect.to_dict(),
            "cumulative_effect": self.cumulative_effect.to_dict(),
            "relative_effect": None if rel is None else rel.value,
            "relative_effect_sd": None if rel is None else rel.sd,
            "relative_effect_lower": None if rel is None else rel.lower,
            "relative_effect_upper": None if rel is None else rel.upper,
            "tail_probability": self.p_value,
            "significant": self.significant,
            "level": self.level,
            "trajectories": self.trajectories,
            "warnings": list(self.warnings),
        }

    def summary(self) -> str:
        """Plain-text report: actual vs prediction, effects and tail probability."""
        pct = f"{100 * self.level:g}%"
        avg, cum = self.predicted_average, self.predicted_cumulative
        rows = [
            ("Actual", _num(self.actual_average), _num(self.actual_cumulative)),
            ("Prediction (s.d.)", _est(avg), _est(cum)),
            (f"{pct} CI", _ci(avg), _ci(cum)),
            ("", "", ""),
            ("Absolute effect (s.d.)", _est(self.average_effect), _est(self.cumulative_effect)),
            (f"{pct} CI", _ci(self.average_effect), _ci(self.cumulative_effect)),
            ("", "", ""),
        ]
        rel = self.relative_effect
        if rel is None:
            rows += [("Relative effect (s.d.)", "undefined", "undefined")]
        else:
            rel_text = f"{_pct(rel.value)} ({100 * rel.sd:.1f}%)"
            rel_ci = f"[{_pct(rel.lower)}, {_pct(rel.upper)}]"
            rows += [("Relative effect (s.d.)", rel_text, rel_text), (f"{pct} CI", rel_ci, rel_ci)]
        lines = ["Posterior inference", "", f"{'':26}{'Average':<24}{'Cumulative'}"]
        lines += [f"{a:26}{b:<24}{c}".rstrip() for a, b, c in rows]
        lines += [
            "",
            f"Posterior tail-area probability p: {self.p_value:.3f}",
            f"Posterior prob. of a causal effect: {100 * (1 - self.p_value):.1f}%",
            f"Interval excludes zero: {'yes' if self.significant else 'no'}",
        ]
        lines += [f"Warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


def _listed(a: np.ndarray) -> list:
    return [None if math.isnan(v) else float(v) for v in a]


def _num(x: float) -> str:
    return f"{x:.4g}"


def _est(e: Estimate) -> str:
    return f"{e.value:.4g} ({e.sd:.3g})"


def _ci(e: Estimate) -> str:
    return f"[{e.lower:.4g}, {e.upper:.4g}]"


def _pct(x: float) -> str:
    return f"{100 * x:+.1f}%"


def _estimate(point: float, samples: np.ndarray, level: float) -> Estimate:
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [tail, 1.0 - tail])
    sd = float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0
    return Estimate(float(point), sd, float(lo), float(hi))


def tail_probability(actual_total: float, trajectory_totals: np.ndarray) -> float:
    """Add-one one-sided tail-area probability of ``actual_total``.

    Counts trajectories at least as extreme as the actual on the side where
    fewer of them lie, so ``p`` never exceeds one half by more than ties allow.
    """
    totals = np.asarray(trajectory_totals, dtype=float)
    below = int(np.count_nonzero(totals <= actual_total))
    above = int(np.count_nonzero(totals >= actual_total))
    return (1 + min(below, above)) / (1 + totals.size)


def effects(actual: np.ndarray, trajectories: np.ndarray, level: float = 0.95) -> dict:
    """Effect statistics of ``actual`` (NaN = missing) against ``trajectories`` ``(N, h)``.

    Missing actual positions are left out of every total.
    """
    actual = np.asarray(actual, dtype=float)
    S = np.asarray(trajectories, dtype=float)
    observed = ~np.isnan(actual)
    if not observed.any():
        raise ArgumentError("post-period has no observed values")
    tail = 0.5 * (1.0 - level)
    mean = S.mean(axis=0)
    lo, hi = np.quantile(S, [tail, 1.0 - tail], axis=0)
    warnings = []

    n_obs = int(observed.sum())
    A_total = float(actual[observed].sum())
    S_totals = S[:, observed].sum(axis=1)
    mean_total = float(mean[observed].sum())
    cum_samples = A_total - S_totals

    relative = None
    if mean_total > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel_samples = cum_samples / S_totals
        rel_samples = rel_samples[np.isfinite(rel_samples)]
        relative = _estimate((A_total - mean_total) / mean_total, rel_samples, level)
        if np.any(S_totals <= 0):
            warnings.append("some counterfactual totals are not positive; relative interval is unreliable")
    else:
        warnings.append("counterfactual total is not positive; relative effect undefined")

    cumulative = _estimate(A_total - mean_total, cum_samples, level)
    if relative is not None:
        significant = not (relative.lower <= 0.0 <= relative.upper)
    else:
        significant = not (cumulative.lower <= 0.0 <= cumulative.upper)

    return {
        "actual": actual,
        "predicted": mean,
        "predicted_lower": lo,
        "predicted_upper": hi,
        "point_effect": actual - mean,
        "point_effect_lower": actual - hi,
        "point_effect_upper": actual - lo,
        "actual_average": A_total / n_obs,
        "actual_cumulative": A_total,
        "predicted_average": _estimate(mean_total / n_obs, S_totals / n_obs, level),
        "predicted_cumulative": _estimate(mean_total, S_totals, level),
        "average_effect": _estimate((A_total - mean_total) / n_obs, cum_samples / n_obs, level),
        "cumulative_effect": cumulative,
        "relative_effect": relative,
        "p_value": tail_probability(A_total, S_totals),
        "significant": significant,
        "level": level,
        "trajectories": int(S.shape[0]),
        "warnings": tuple(warnings),
    }


def causal_impact(y: Series, cfg: ImpactConfig) -> ImpactReport:
    """Fit on ``cfg.pre``, forecast to the end of ``cfg.post`` and report the effect."""
    if cfg.post[1] >= len(y):
        raise ArgumentError(f"post-period ends at {cfg.post[1]} but the series has {len(y)} points")
    pre = y.slice(cfg.pre[0], cfg.pre[1] + 1)
    priors = cfg.priors
    if priors is None or isinstance(priors, Mapping):
        priors = Priors.from_config(dict(priors or {}), pre, cfg.components)
    draws = gibbs_fit(pre, cfg.components, priors, cfg.mcmc, label="counterfactual")
    horizon = cfg.post[1] - cfg.pre[1]
    fc = predict(draws, horizon, cfg.trajectories_per_draw, seed=cfg.mcmc.seed)
    skip = cfg.post[0] - cfg.pre[1] - 1
    trajectories = fc.trajectories[:, skip:]
    actual = np.asarray(y.values[cfg.post[0]:cfg.post[1] + 1], dtype=float)
    periods = tuple(y.index.label(i) for i in range(cfg.post[0], cfg.post[1] + 1))
    return ImpactReport(periods=periods, **effects(actual, trajectories, cfg.level))


def parse_range(text: str, y: Series) -> tuple[int, int]:
    """``"A..B"`` with period labels or zero-based positions, inclusive."""
    if ".." not in text:
        raise ArgumentError(f"expected a range like A..B, got {text!r}")
    a, b = (part.strip() for part in text.split("..", 1))
    return _position(a, y), _position(b, y)


def _position(token: str, y: Series) -> int:
    # an annual series reads four-digit tokens as years, not positions
    if token.isdigit() and not (y.frequency == "annual" and len(token) == 4):
        pos = int(token)
        if not pos < len(y):
            raise ArgumentError(f"position {pos} outside the series")
        return pos
    try:
        return y.index.position(token)
    except ParseError:
        raise ArgumentError(f"cannot read {token!r} as a period or position") from None
