"""Tail probabilities of the reference distributions used by the tests.

The regularized incomplete beta/gamma functions come from ``scipy.special``;
everything here is a thin, scalar-friendly wrapper around them.
"""

from __future__ import annotations

import math

from scipy import special


def student_t_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for a Student-t variable with ``df`` degrees of freedom."""
    if math.isnan(t) or not df > 0:
        return math.nan
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, special.betainc(0.5 * df, 0.5, x)))


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-squared distribution."""
    if math.isnan(x) or not df > 0:
        return math.nan
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def normal_two_sided(z: float) -> float:
    if math.isnan(z):
        return math.nan
    return float(min(1.0, 2.0 * special.ndtr(-abs(z))))


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the limiting Kolmogorov distribution."""
    if math.isnan(lam):
        return math.nan
    if lam <= 0:
        return 1.0
    return float(min(1.0, max(0.0, special.kolmogorov(lam))))
