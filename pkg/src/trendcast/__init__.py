"""Bayesian structural time-series models for search-intensity nowcasting."""

from .errors import (
    ArgumentError,
    DomainError,
    GapError,
    NumericalError,
    ParseError,
    SpecError,
    TrendcastError,
)
from .forecast import ErrorCurve, ForecastResult, compare_models, error_curve, predict, predictive_variance
from .impact import ImpactConfig, ImpactReport, causal_impact
from .kalman import FilterResult, SmoothResult, sample_states
from .model import ComponentSpec, ModelSpec, StateSpace, build, simulate
from .sampler import FitSummary, McmcConfig, PosteriorDraws, Priors, gibbs_fit, summarize
from .series import (
    QueryPanel,
    Series,
    TimeIndex,
    ingest_trends_csv,
    pearson_correlation,
    rank_queries,
    rescale_0_100,
    simple_average,
    to_annual,
)

__version__ = "0.1.0"
