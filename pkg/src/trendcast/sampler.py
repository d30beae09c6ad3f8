"""Gibbs sampling for structural time-series models.

Each sweep draws the state path given the parameters, then every variance
from its (truncated) inverse-gamma full conditional, then - for the semilocal
trend - the slope AR coefficient by slice sampling and the long-run slope from
its normal full conditional.

Before the state draw, each variance (and the AR coefficient) also gets one
Metropolis move on the posterior with the states integrated out by the
Kalman filter.  Conditional on a state path a small variance can barely
move, so without these moves the chain creeps in and out of the region
near zero.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import kalman
from .errors import ArgumentError, DomainError, NumericalError
from .model import (
    OBS,
    ComponentSpec,
    StateSpace,
    build,
    check_components,
    data_initialisation,
    is_semilocal,
    state_dim,
    variance_names,
)
from .rng import generator
from .series import Series, TimeIndex

# rejection attempts before switching to an inverse-CDF draw
_MAX_REJECTIONS = 64

# Default variance prior, in units of var(y).  A small shape keeps the prior
# close to flat on the log scale so it does not drag small variances upward.
DEFAULT_SHAPE = 0.005
DEFAULT_SCALE_FRACTION = 1e-5
DEFAULT_LIMIT_FRACTION = 1.5
SLOPE_SCALE_RATIO = 0.01

# random-walk scales of the collapsed moves: log-variance steps are drawn
# from a 50/50 mix of a short and a long scale
_LOG_STEPS = (0.5, 2.0)
_RHO_STEP = 0.3


@dataclass(frozen=True)
class InverseGammaPrior:
    """Inverse-gamma(shape, scale) truncated above at ``limit``."""

    shape: float
    scale: float
    limit: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0 and self.limit > 0):
            raise DomainError("inverse-gamma prior needs positive shape, scale and limit")

    def to_dict(self) -> dict:
        return {"shape": self.shape, "scale": self.scale, "limit": self.limit}


@dataclass(frozen=True)
class Priors:
    variances: Mapping[str, InverseGammaPrior]
    slope_mean_sd: float = 1.0

    def __post_init__(self):
        if not self.slope_mean_sd > 0:
            raise DomainError("slope_mean_sd must be positive")

    @classmethod
    def default(
        cls,
        y,
        components: Sequence[ComponentSpec],
        shape: float = DEFAULT_SHAPE,
        scale_fraction: float = DEFAULT_SCALE_FRACTION,
        limit_fraction: float = DEFAULT_LIMIT_FRACTION,
        slope_scale_fraction: float | None = None,
    ) -> "Priors":
        """Data-scaled priors: IG(shape, scale_fraction * var(y)) capped at limit_fraction * var(y).

        The slope variance uses ``slope_scale_fraction`` (a hundredth of
        ``scale_fraction`` unless given) because slope shocks accumulate
        twice and are typically orders of magnitude smaller than level shocks.
        """
        values = _values(y)
        obs = values[~np.isnan(values)]
        var_y = float(np.var(obs, ddof=1)) if obs.size > 1 else 0.0
        if not var_y > 0:
            raise NumericalError("constant series: data-scaled priors are degenerate")
        if slope_scale_fraction is None:
            slope_scale_fraction = SLOPE_SCALE_RATIO * scale_fraction
        out = {}
        for name in variance_names(components):
            frac = slope_scale_fraction if name == "slope" else scale_fraction
            out[name] = InverseGammaPrior(shape, frac * var_y, limit_fraction * var_y)
        return cls(out, _slope_mean_sd(values))

    @classmethod
    def from_config(cls, config: Mapping, y, components: Sequence[ComponentSpec]) -> "Priors":
        """Build priors from the ``priors`` block of a model spec.

        Recognised keys: ``shape``, ``scale_fraction``, ``slope_scale_fraction``,
        ``limit_fraction`` (data-scaled defaults), ``slope_mean_sd`` and
        ``overrides`` mapping a variance name to an absolute ``{shape, scale, limit}``.
        """
        known = {"shape", "scale_fraction", "slope_scale_fraction", "limit_fraction", "slope_mean_sd", "overrides"}
        unknown = set(config) - known
        if unknown:
            raise ArgumentError(f"unknown prior keys {sorted(unknown)}")
        slope_frac = config.get("slope_scale_fraction")
        try:
            base = cls.default(
                y,
                components,
                shape=float(config.get("shape", DEFAULT_SHAPE)),
                scale_fraction=float(config.get("scale_fraction", DEFAULT_SCALE_FRACTION)),
                limit_fraction=float(config.get("limit_fraction", DEFAULT_LIMIT_FRACTION)),
                slope_scale_fraction=None if slope_frac is None else float(slope_frac),
            )
            variances = dict(base.variances)
            for name, spec in dict(config.get("overrides", {})).items():
                if name not in variances:
                    raise ArgumentError(f"no variance named {name!r} in this model")
                variances[name] = InverseGammaPrior(float(spec["shape"]), float(spec["scale"]), float(spec["limit"]))
            sd = float(config.get("slope_mean_sd", base.slope_mean_sd))
        except (KeyError, TypeError) as exc:
            raise ArgumentError(f"malformed prior block: {exc}") from None
        return cls(variances, sd)

    def to_dict(self) -> dict:
        return {
            "variances": {k: v.to_dict() for k, v in sorted(self.variances.items())},
            "slope_mean_sd": self.slope_mean_sd,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Priors":
        return cls(
            {k: InverseGammaPrior(**v) for k, v in data["variances"].items()},
            float(data["slope_mean_sd"]),
        )


def _slope_mean_sd(values: np.ndarray) -> float:
    diffs = np.diff(values)
    diffs = diffs[~np.isnan(diffs)]
    if diffs.size == 0:
        return 1.0
    sd = 10.0 * abs(float(diffs.mean()))
    if sd > 0:
        return sd
    # flat on average: fall back to the spread of the increments
    spread = float(diffs.std())
    return spread if spread > 0 else 1.0


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 2000
    burn_in: int = 500
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ArgumentError("need iterations > burn_in >= 0")
        if self.thinning < 1:
            raise ArgumentError("thinning must be at least 1")

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "burn_in": self.burn_in, "thinning": self.thinning, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained Gibbs iterations together with the data and model they came from.

    ``errors`` holds one-step-ahead prediction errors at each draw's
    parameters, NaN at missing and burn-in positions.
    """

    y: Series
    components: tuple[ComponentSpec, ...]
    priors: Priors
    config: McmcConfig
    variances: Mapping[str, np.ndarray]
    states: np.ndarray
    errors: np.ndarray
    slope_mean: np.ndarray | None = None
    slope_ar: np.ndarray | None = None
    burn_positions: int = 0
    initial_level: float = 0.0
    diffuse_variance: float = 1.0
    label: str = "model"

    @property
    def count(self) -> int:
        return self.states.shape[0]

    def parameters(self, i: int) -> tuple[dict, dict | None]:
        variances = {k: float(v[i]) for k, v in self.variances.items()}
        trend = None
        if self.slope_ar is not None:
            trend = {"D": float(self.slope_mean[i]), "rho": float(self.slope_ar[i])}
        return variances, trend

    def state_space(self, i: int) -> StateSpace:
        variances, trend = self.parameters(i)
        return build(self.components, variances, trend,
                     initial_level=self.initial_level, diffuse_variance=self.diffuse_variance)

    # -- persistence ---------------------------------------------------

    def save(self, path) -> None:
        arrays = {
            "y": self.y.values,
            "states": self.states,
            "errors": self.errors,
        }
        for name, arr in self.variances.items():
            arrays[f"var_{name}"] = np.asarray(arr, dtype=float)
        if self.slope_ar is not None:
            arrays["slope_mean"] = self.slope_mean
            arrays["slope_ar"] = self.slope_ar
        meta = {
            "label": self.label,
            "components": [c.to_dict() for c in self.components],
            "priors": self.priors.to_dict(),
            "config": self.config.to_dict(),
            "index": {"frequency": self.y.index.frequency, "start": list(self.y.index.start),
                      "length": self.y.index.length},
            "y_name": self.y.name,
            "variance_names": list(self.variances),
            "burn_positions": self.burn_positions,
            "initial_level": self.initial_level,
            "diffuse_variance": self.diffuse_variance,
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        write_npz(path, arrays)

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            idx = meta["index"]
            y = Series(TimeIndex(idx["frequency"], tuple(idx["start"]), idx["length"]), data["y"], meta["y_name"])
            variances = {name: data[f"var_{name}"] for name in meta["variance_names"]}
            has_trend = "slope_ar" in data.files
            return cls(
                y=y,
                components=tuple(ComponentSpec.from_dict(c) for c in meta["components"]),
                priors=Priors.from_dict(meta["priors"]),
                config=McmcConfig(**meta["config"]),
                variances=variances,
                states=data["states"],
                errors=data["errors"],
                slope_mean=data["slope_mean"] if has_trend else None,
                slope_ar=data["slope_ar"] if has_trend else None,
                burn_positions=meta["burn_positions"],
                initial_level=meta["initial_level"],
                diffuse_variance=meta["diffuse_variance"],
                label=meta["label"],
            )


def write_npz(path, arrays: Mapping[str, np.ndarray]) -> None:
    """``np.savez`` with fixed zip timestamps so equal inputs give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


@dataclass(frozen=True)
class FitSummary:
    residual_sd: float
    prediction_sd: float
    r_square: float
    draws: int
    burn_in_positions: int
    y_variance: float

    def to_dict(self, label: str | None = None) -> dict:
        out = {
            "residual.sd": self.residual_sd,
            "prediction.sd": self.prediction_sd,
            "r.square": self.r_square,
            "draws": self.draws,
            "burn_in_positions": self.burn_in_positions,
        }
        if label is not None:
            out["model"] = label
        return out


def summarize(draws: PosteriorDraws) -> FitSummary:
    """residual.sd, prediction.sd and R-square of a fit.

    residual.sd is the square root of the posterior mean observation variance;
    prediction.sd the standard deviation of every retained one-step error;
    R-square is ``1 - residual.sd**2 / var(y)``.
    """
    if draws.count < 1:
        raise ArgumentError("no retained draws")
    residual_sd = math.sqrt(float(np.mean(draws.variances[OBS])))
    pooled = draws.errors[~np.isnan(draws.errors)]
    prediction_sd = float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0
    obs = draws.y.observed()
    y_variance = float(np.var(obs, ddof=1))
    r_square = 1.0 - residual_sd**2 / y_variance
    return FitSummary(residual_sd, prediction_sd, r_square, draws.count, draws.burn_positions, y_variance)


# ------------------------------------------------------------ full conditionals


def draw_truncated_inverse_gamma(rng: np.random.Generator, shape: float, scale: float, limit: float) -> float:
    """One draw from IG(shape, scale) restricted to (0, limit]."""
    if not scale > 0:
        raise NumericalError("degenerate variance update (zero residual sum and zero prior scale)")
    for _ in range(_MAX_REJECTIONS):
        x = scale / rng.gamma(shape)
        if x <= limit:
            return x
    # almost all mass sits above the limit: invert the truncated CDF instead
    top = stats.invgamma.cdf(limit, shape, scale=scale)
    if top <= 0.0:
        return limit
    x = float(stats.invgamma.ppf(rng.uniform(0.0, top), shape, scale=scale))
    return min(max(x, np.finfo(float).tiny), limit)


def slice_sample(rng: np.random.Generator, logf, x0: float, lower: float, upper: float, max_steps: int = 200) -> float:
    """Univariate slice sampling with shrinkage on the open interval (lower, upper)."""
    log_y = logf(x0) - rng.exponential()
    lo, hi = lower, upper
    for _ in range(max_steps):
        x = rng.uniform(lo, hi)
        if lower < x < upper and logf(x) >= log_y:
            return x
        if x < x0:
            lo = x
        else:
            hi = x
    return x0


def _values(y) -> np.ndarray:
    return np.asarray(y.values if isinstance(y, Series) else y, dtype=float)


def _disturbance_groups(ss: StateSpace) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for j, name in enumerate(ss.disturbances):
        groups.setdefault(name, []).append(j)
    return groups


def gibbs_fit(
    y: Series,
    components: Sequence[ComponentSpec],
    priors: Priors | None = None,
    cfg: McmcConfig | None = None,
    label: str = "model",
) -> PosteriorDraws:
    """Sample the posterior of a structural model for ``y``."""
    components = check_components(components)
    cfg = cfg or McmcConfig()
    values = np.ascontiguousarray(_values(y))
    observed = ~np.isnan(values)
    if not observed.any():
        raise ArgumentError("series has no observed values")
    m = state_dim(components)
    if observed.sum() < 2 * m:
        raise ArgumentError(f"need at least {2 * m} observations for a {m}-state model")
    priors = priors or Priors.default(values, components)
    names = variance_names(components)
    missing_priors = [n for n in names if n not in priors.variances]
    if missing_priors:
        raise ArgumentError(f"no prior for variances {missing_priors}")

    init = data_initialisation(values)
    var_y = float(np.var(values[observed], ddof=1))
    rng = generator(cfg.seed, "chain")

    current = {n: min(0.1 * var_y, 0.5 * priors.variances[n].limit) for n in names}
    semilocal = is_semilocal(components)
    trend = None
    if semilocal:
        diffs = np.diff(values)
        diffs = diffs[~np.isnan(diffs)]
        trend = {"D": float(diffs.mean()) if diffs.size else 0.0, "rho": 0.0}

    kept_var = {n: [] for n in names}
    kept_states, kept_errors, kept_D, kept_rho = [], [], [], []
    pending = False
    burn_positions = m
    mask = kalman.burn_mask(values, burn_positions)

    def errors_from(innov):
        e = innov.copy()
        e[mask] = np.nan
        return e

    for it in range(cfg.iterations):
        alpha, innov, current, trend = gibbs_sweep(rng, values, components, priors, current, trend, init)
        if pending:
            kept_errors.append(errors_from(innov))
            pending = False

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            for n in names:
                kept_var[n].append(current[n])
            kept_states.append(alpha)
            if semilocal:
                kept_D.append(trend["D"])
                kept_rho.append(trend["rho"])
            pending = True

    if pending:
        ss = build(components, current, trend, **init)
        kept_errors.append(errors_from(kalman.filter(ss, values, burn_positions).innovations))

    series = y if isinstance(y, Series) else Series.from_values(values)
    return PosteriorDraws(
        y=series,
        components=components,
        priors=priors,
        config=cfg,
        variances={n: np.array(v) for n, v in kept_var.items()},
        states=np.array(kept_states),
        errors=np.array(kept_errors),
        slope_mean=np.array(kept_D) if semilocal else None,
        slope_ar=np.array(kept_rho) if semilocal else None,
        burn_positions=burn_positions,
        initial_level=init["initial_level"],
        diffuse_variance=init["diffuse_variance"],
        label=label,
    )


def gibbs_sweep(
    rng: np.random.Generator,
    values: np.ndarray,
    components: Sequence[ComponentSpec],
    priors: Priors,
    current: Mapping[str, float],
    trend: Mapping[str, float] | None,
    init: Mapping[str, float],
) -> tuple[np.ndarray, np.ndarray, dict, dict | None]:
    """One full sweep.

    Runs the collapsed Metropolis moves, draws the states at the resulting
    parameters, then every variance, then (semilocal only) rho and D.
    Returns the state draw, the filter innovations at the incoming
    parameters and the updated parameters.
    ``init`` holds the ``initial_level`` and ``diffuse_variance`` of the
    state prior.
    """
    current, trend, innov = collapsed_moves(rng, values, components, priors, current, trend, init)
    ss = build(components, current, trend, **init)
    alpha, _ = kalman.simulation_smoother(ss, values, rng)
    observed = ~np.isnan(values)

    resid = values[observed] - alpha[observed] @ ss.Z
    prior = priors.variances[OBS]
    current[OBS] = draw_truncated_inverse_gamma(
        rng, prior.shape + 0.5 * resid.size, prior.scale + 0.5 * float(resid @ resid), prior.limit
    )
    # state disturbances: R has orthonormal selection columns
    eta = (alpha[1:] - alpha[:-1] @ ss.T.T) @ ss.R
    for name, cols in _disturbance_groups(ss).items():
        block = eta[:, cols]
        prior = priors.variances[name]
        current[name] = draw_truncated_inverse_gamma(
            rng, prior.shape + 0.5 * block.size, prior.scale + 0.5 * float(np.sum(block * block)), prior.limit
        )
    if trend is not None:
        trend = _update_slope_params(rng, alpha, ss, current["slope"], trend, priors.slope_mean_sd)
    return alpha, innov, current, trend


def collapsed_moves(
    rng: np.random.Generator,
    values: np.ndarray,
    components: Sequence[ComponentSpec],
    priors: Priors,
    current: Mapping[str, float],
    trend: Mapping[str, float] | None,
    init: Mapping[str, float],
) -> tuple[dict, dict | None, np.ndarray]:
    """Metropolis moves on p(parameters | y) with the states integrated out.

    One random-walk proposal per variance on the log scale, then one for rho
    when the trend is semilocal.  Returns the updated parameters and the
    innovations at the incoming ones.
    """
    current = dict(current)
    trend = None if trend is None else dict(trend)

    def loglik(variances, trend_params):
        try:
            return kalman.log_likelihood(build(components, variances, trend_params, **init), values)
        except NumericalError:
            return -math.inf, None

    ll, innov = loglik(current, trend)
    if innov is None:
        raise NumericalError("likelihood undefined at the current parameters")
    for name in variance_names(components):
        prior = priors.variances[name]
        u = math.log(current[name])
        step = _LOG_STEPS[0] if rng.uniform() < 0.5 else _LOG_STEPS[1]
        u_new = u + step * rng.standard_normal()
        log_u = math.log(rng.uniform())
        if math.exp(u_new) > prior.limit:
            continue
        proposal = dict(current)
        proposal[name] = math.exp(u_new)
        ll_new, _ = loglik(proposal, trend)
        # inverse-gamma density on the log scale: -shape * u - scale * exp(-u)
        ratio = ll_new - ll - prior.shape * (u_new - u) - prior.scale * (math.exp(-u_new) - math.exp(-u))
        if log_u < ratio:
            current, ll = proposal, ll_new
    if trend is not None:
        rho_new = trend["rho"] + _RHO_STEP * rng.standard_normal()
        log_u = math.log(rng.uniform())
        if abs(rho_new) < 1.0:
            proposal = {"D": trend["D"], "rho": rho_new}
            ll_new, _ = loglik(current, proposal)
            if log_u < ll_new - ll:
                trend, ll = proposal, ll_new
    return current, trend, innov


def _update_slope_params(rng, alpha, ss, slope_var, trend, prior_sd):
    start = ss.layout["semilocal_linear_trend"][0]
    slope = alpha[:, start + 1]
    D = trend["D"]
    prev, nxt = slope[:-1], slope[1:]

    def logf(rho):
        r = (nxt - D) - rho * (prev - D)
        return -0.5 * float(r @ r) / slope_var

    rho = slice_sample(rng, logf, trend["rho"], -1.0, 1.0)
    # slope_{t+1} - rho * slope_t = (1 - rho) D + noise
    w = nxt - rho * prev
    c = 1.0 - rho
    precision = 1.0 / prior_sd**2 + w.size * c * c / slope_var
    mean = (c * float(w.sum()) / slope_var) / precision
    D = mean + rng.standard_normal() / math.sqrt(precision)
    return {"D": D, "rho": rho}
