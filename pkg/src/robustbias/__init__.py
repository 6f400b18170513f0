"""Robust Bayesian bias-adjusted random-effects meta-analysis."""

__version__ = "0.1.0"

from .model import Hyperparameters, ParameterState, StudyData, StudyRecord, log_posterior_unnorm
from .quality_sets import (
    CutoffPolicy,
    EnumerationConfig,
    QualitySetSpec,
    RoBTable,
    build_set_spec,
    enumerate_quality_vectors,
    extreme_points,
)
from .robust import QuantitySpec, RobustBounds, analyze_over_set, analyze_unadjusted, compare_to_unadjusted
from .sampler import McmcSettings, PosteriorSummary, run_chain, summarize
