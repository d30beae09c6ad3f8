"""Structural components and their linear-Gaussian state-space assembly.

Observation: ``y_t = Z . alpha_t + eps_t``, ``eps_t ~ N(0, H)``.
Transition: ``alpha_{t+1} = T alpha_t + R eta_t``, ``eta_t ~ N(0, Q)`` with Q diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError, DomainError, SpecError
from .rng import generator
from .series import Series, TimeIndex

TREND_VARIANTS = ("local_linear_trend", "semilocal_linear_trend")
SEASONAL_VARIANTS = ("seasonal_dummy", "seasonal_trig")
VARIANTS = TREND_VARIANTS + SEASONAL_VARIANTS

OBS = "obs"
DEFAULT_SEASONS = 12
DIFFUSE_FACTOR = 1e6


@dataclass(frozen=True)
class ComponentSpec:
    """One structural block.

    Seasonal variants need ``season_count``; the trigonometric form uses
    ``floor(season_count / 2)`` harmonics unless told otherwise.
    """

    variant: str
    season_count: int | None = None
    harmonics: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown component variant {self.variant!r}")
        if self.variant in TREND_VARIANTS:
            if self.season_count is not None or self.harmonics is not None:
                raise SpecError(f"{self.variant} takes no seasonal parameters")
            return
        if self.season_count is None:
            object.__setattr__(self, "season_count", DEFAULT_SEASONS)
        if int(self.season_count) < 2:
            raise SpecError("season_count must be at least 2")
        object.__setattr__(self, "season_count", int(self.season_count))
        if self.variant == "seasonal_dummy":
            if self.harmonics is not None:
                raise SpecError("seasonal_dummy takes no harmonics")
            return
        if self.harmonics is None:
            object.__setattr__(self, "harmonics", self.season_count // 2)
        if not 1 <= int(self.harmonics) <= self.season_count // 2:
            raise SpecError(f"harmonics must lie in 1..{self.season_count // 2}")
        object.__setattr__(self, "harmonics", int(self.harmonics))

    @property
    def kind(self) -> str:
        return "trend" if self.variant in TREND_VARIANTS else "seasonal"

    @property
    def state_dim(self) -> int:
        if self.variant == "local_linear_trend":
            return 2
        if self.variant == "semilocal_linear_trend":
            return 3
        if self.variant == "seasonal_dummy":
            return self.season_count - 1
        S, h = self.season_count, self.harmonics
        return 2 * h - (1 if S % 2 == 0 and h == S // 2 else 0)

    @property
    def variance_names(self) -> tuple[str, ...]:
        return ("level", "slope") if self.kind == "trend" else ("seasonal",)

    def to_dict(self) -> dict:
        out = {"variant": self.variant}
        if self.season_count is not None:
            out["season_count"] = self.season_count
        if self.harmonics is not None:
            out["harmonics"] = self.harmonics
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ComponentSpec":
        unknown = set(data) - {"variant", "season_count", "harmonics"}
        if unknown:
            raise SpecError(f"unknown component keys {sorted(unknown)}")
        if "variant" not in data:
            raise SpecError("component needs a 'variant'")
        return cls(data["variant"], data.get("season_count"), data.get("harmonics"))


def check_components(components: Sequence[ComponentSpec]) -> tuple[ComponentSpec, ...]:
    components = tuple(components)
    if not components:
        raise SpecError("a model needs at least one component")
    kinds = [c.kind for c in components]
    if kinds.count("trend") > 1:
        raise SpecError("at most one trend component is allowed")
    if kinds.count("seasonal") > 1:
        raise SpecError("at most one seasonal component is allowed")
    return components


def variance_names(components: Sequence[ComponentSpec]) -> tuple[str, ...]:
    """Names of every variance parameter, observation noise first."""
    names = [OBS]
    for c in components:
        names.extend(c.variance_names)
    return tuple(names)


def is_semilocal(components: Sequence[ComponentSpec]) -> bool:
    return any(c.variant == "semilocal_linear_trend" for c in components)


def state_dim(components: Sequence[ComponentSpec]) -> int:
    return sum(c.state_dim for c in components)


@dataclass(frozen=True, eq=False)
class StateSpace:
    Z: np.ndarray
    T: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    H: float
    a1: np.ndarray
    P1: np.ndarray
    # component name -> (start, stop) within the state vector
    layout: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    # variance parameter driving each column of R
    disturbances: tuple[str, ...] = ()

    def __post_init__(self):
        Z = np.ascontiguousarray(self.Z, dtype=float).reshape(-1)
        m = Z.shape[0]
        T = np.ascontiguousarray(self.T, dtype=float).reshape(m, m)
        R = np.ascontiguousarray(self.R, dtype=float).reshape(m, -1)
        q = R.shape[1]
        Q = np.ascontiguousarray(self.Q, dtype=float).reshape(q, q)
        a1 = np.ascontiguousarray(self.a1, dtype=float).reshape(m)
        P1 = np.ascontiguousarray(self.P1, dtype=float).reshape(m, m)
        if np.any(Q != np.diag(np.diag(Q))) or np.any(np.diag(Q) < 0):
            raise DomainError("Q must be diagonal with nonnegative entries")
        if not self.H >= 0:
            raise DomainError("observation variance must be nonnegative")
        if np.any(P1 != P1.T):
            raise DomainError("P1 must be symmetric")
        for name, arr in (("Z", Z), ("T", T), ("R", R), ("Q", Q), ("a1", a1), ("P1", P1)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "H", float(self.H))
        object.__setattr__(self, "disturbances", tuple(self.disturbances))

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def q(self) -> int:
        return self.R.shape[1]

    @property
    def RQR(self) -> np.ndarray:
        return self.R @ self.Q @ self.R.T


def _trend_block(spec, level_var, slope_var, slope_mean, slope_ar):
    if spec.variant == "local_linear_trend":
        T = np.array([[1.0, 1.0], [0.0, 1.0]])
        R = np.eye(2)
    else:
        # state (level, slope, long-run slope); the last one is constant
        T = np.array([[1.0, 1.0, 0.0], [0.0, slope_ar, 1.0 - slope_ar], [0.0, 0.0, 1.0]])
        R = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    Z = np.zeros(T.shape[0])
    Z[0] = 1.0
    return Z, T, R, [level_var, slope_var], ["level", "slope"]


def _dummy_block(S, var):
    m = S - 1
    T = np.zeros((m, m))
    T[0, :] = -1.0
    T[1:, :-1] = np.eye(m - 1)
    Z = np.zeros(m)
    Z[0] = 1.0
    R = np.zeros((m, 1))
    R[0, 0] = 1.0
    return Z, T, R, [var], ["seasonal"]


def _trig_block(S, harmonics, var):
    blocks, zs = [], []
    for j in range(1, harmonics + 1):
        if S % 2 == 0 and j == S // 2:
            blocks.append(np.array([[-1.0]]))
            zs.append([1.0])
        else:
            lam = 2.0 * math.pi * j / S
            c, s = math.cos(lam), math.sin(lam)
            blocks.append(np.array([[c, s], [-s, c]]))
            zs.append([1.0, 0.0])
    T = _block_diag(blocks)
    m = T.shape[0]
    return np.concatenate(zs), T, np.eye(m), [var] * m, ["seasonal"] * m


def _block_diag(blocks):
    size = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((size, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def build(
    components: Sequence[ComponentSpec],
    variances: Mapping[str, float],
    trend_params: Mapping[str, float] | None = None,
    *,
    initial_level: float = 0.0,
    diffuse_variance: float = 1.0,
) -> StateSpace:
    """Assemble the state space for ``components``.

    ``variances`` maps every name in :func:`variance_names` to a value.
    ``trend_params`` carries ``D`` (long-run slope) and ``rho`` (slope AR
    coefficient) for the semilocal trend.  The initial state mean is zero
    apart from the level (``initial_level``) and the long-run slope, which
    is held at ``D`` with zero variance; every other state starts with
    variance ``diffuse_variance``.
    """
    components = check_components(components)
    needed = variance_names(components)
    missing = [n for n in needed if n not in variances]
    if missing:
        raise ArgumentError(f"missing variances: {missing}")
    for name in needed:
        if not variances[name] >= 0:
            raise DomainError(f"variance {name!r} must be nonnegative")

    slope_mean = slope_ar = 0.0
    if is_semilocal(components):
        if trend_params is None or "D" not in trend_params or "rho" not in trend_params:
            raise ArgumentError("semilocal trend needs trend_params D and rho")
        slope_mean = float(trend_params["D"])
        slope_ar = float(trend_params["rho"])
        if not abs(slope_ar) < 1.0:
            raise DomainError(f"|rho| must be below 1, got {slope_ar}")

    Zs, Ts, Rs, qs, names = [], [], [], [], []
    layout = {}
    a1_parts, p1_parts = [], []
    offset = 0
    for spec in components:
        if spec.kind == "trend":
            Z, T, R, q, d = _trend_block(spec, variances["level"], variances["slope"], slope_mean, slope_ar)
            a = np.zeros(T.shape[0])
            a[0] = initial_level
            p = np.full(T.shape[0], diffuse_variance)
            if spec.variant == "semilocal_linear_trend":
                a[2] = slope_mean
                p[2] = 0.0
        elif spec.variant == "seasonal_dummy":
            Z, T, R, q, d = _dummy_block(spec.season_count, variances["seasonal"])
            a, p = np.zeros(T.shape[0]), np.full(T.shape[0], diffuse_variance)
        else:
            Z, T, R, q, d = _trig_block(spec.season_count, spec.harmonics, variances["seasonal"])
            a, p = np.zeros(T.shape[0]), np.full(T.shape[0], diffuse_variance)
        layout[spec.variant] = (offset, offset + T.shape[0])
        offset += T.shape[0]
        Zs.append(Z)
        Ts.append(T)
        Rs.append(R)
        qs.extend(q)
        names.extend(d)
        a1_parts.append(a)
        p1_parts.append(p)

    return StateSpace(
        Z=np.concatenate(Zs),
        T=_block_diag(Ts),
        R=_block_diag(Rs),
        Q=np.diag(np.asarray(qs, dtype=float)),
        H=float(variances[OBS]),
        a1=np.concatenate(a1_parts),
        P1=np.diag(np.concatenate(p1_parts)),
        layout=layout,
        disturbances=tuple(names),
    )


def data_initialisation(y: np.ndarray) -> dict:
    """Initial level and diffuse variance derived from the observed data."""
    y = np.asarray(y, dtype=float)
    obs = y[~np.isnan(y)]
    if obs.size == 0:
        raise ArgumentError("series has no observed values")
    var = float(np.var(obs, ddof=1)) if obs.size > 1 else 0.0
    return {"initial_level": float(obs[0]), "diffuse_variance": DIFFUSE_FACTOR * (var if var > 0 else 1.0)}


def psd_sqrt(P: np.ndarray) -> np.ndarray:
    """A matrix ``L`` with ``L @ L.T == P`` for symmetric PSD ``P``."""
    P = np.asarray(P, dtype=float)
    if np.all(P == np.diag(np.diag(P))):
        d = np.diag(P)
        if np.any(d < 0):
            raise DomainError("covariance has negative diagonal")
        return np.diag(np.sqrt(d))
    w, V = np.linalg.eigh(P)
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise DomainError("covariance is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(ss: StateSpace, n: int, seed=None, start: str = "2004-01", name: str = "simulated") -> Series:
    """Draw one series of length ``n`` from the model."""
    if n < 1:
        raise ArgumentError("n must be at least 1")
    states, y = simulate_states(ss, n, seed)
    return Series(TimeIndex.from_label(start, n), y, name)


def simulate_states(ss: StateSpace, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Return (states ``(n, m)``, observations ``(n,)``) from one simulation."""
    rng = generator(seed)
    z0 = rng.standard_normal(ss.m)
    eta = rng.standard_normal((n, ss.q)) * np.sqrt(np.diag(ss.Q))
    eps = rng.standard_normal(n) * math.sqrt(ss.H)
    alpha = np.empty((n, ss.m))
    x = ss.a1 + psd_sqrt(ss.P1) @ z0
    for t in range(n):
        alpha[t] = x
        x = ss.T @ x + ss.R @ eta[t]
    return alpha, alpha @ ss.Z + eps


@dataclass(frozen=True)
class ModelSpec:
    """Serializable model description used by the command line."""

    components: tuple[ComponentSpec, ...]
    label: str = "model"
    priors: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", check_components(self.components))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "components": [c.to_dict() for c in self.components],
            "priors": dict(self.priors),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        if "components" not in data:
            raise SpecError("model spec needs a 'components' list")
        comps = tuple(ComponentSpec.from_dict(c) for c in data["components"])
        return cls(comps, str(data.get("label", "model")), dict(data.get("priors", {})))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid model JSON: {exc}") from None
        return cls.from_dict(data)
