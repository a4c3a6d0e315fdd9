"""Hypothesis tests, kernel density estimation and MCMC curve fitting."""

from .kde import gaussian_kde
from .mcmc import MODELS, FitResult, mcmc_curve_fit
from .testing import (
    DEFAULT_ALPHA,
    STRICT_ALPHA,
    InsufficientDataError,
    TestResult,
    average_ranks,
    kruskal_wallis,
    ks_statistic,
    ks_two_sample,
    mann_whitney_u,
    mood_median,
    run_battery,
    spearman_test,
    welch_t,
)

__all__ = [
    "DEFAULT_ALPHA",
    "STRICT_ALPHA",
    "MODELS",
    "FitResult",
    "InsufficientDataError",
    "TestResult",
    "average_ranks",
    "gaussian_kde",
    "kruskal_wallis",
    "ks_statistic",
    "ks_two_sample",
    "mann_whitney_u",
    "mcmc_curve_fit",
    "mood_median",
    "run_battery",
    "spearman_test",
    "welch_t",
]
