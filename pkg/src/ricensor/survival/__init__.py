"""Censoring-aware statistical primitives."""

from .aft import AftFit, aft_loglik, aft_mle, aft_score, design_matrix, fit_aft_batch, lraft, lraft_difference
from .km import ArmCensoring, StepCdf, km_censoring_by_group, km_cdf, sample_truncated
from .stats import ks_batch, ks_stat, logrank, logrank_batch

__all__ = [
    "AftFit",
    "ArmCensoring",
    "StepCdf",
    "aft_loglik",
    "aft_mle",
    "aft_score",
    "design_matrix",
    "fit_aft_batch",
    "km_censoring_by_group",
    "km_cdf",
    "ks_batch",
    "ks_stat",
    "logrank",
    "logrank_batch",
    "lraft",
    "lraft_difference",
    "sample_truncated",
]
