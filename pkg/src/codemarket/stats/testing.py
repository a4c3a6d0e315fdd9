"""Two-sample and k-sample hypothesis tests.

All tests are two-sided and return a :class:`TestResult`. Samples are
one-dimensional; NaNs are dropped before testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import chi2_sf, kolmogorov_sf, normal_two_sided, student_t_two_sided

DEFAULT_ALPHA = 0.05
STRICT_ALPHA = 0.001

# exact Mann-Whitney null distribution is used up to this smaller-sample size
MWU_EXACT_MAX_N = 8


class InsufficientDataError(ValueError):
    """Raised when a sample is too small for the requested test."""


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    __test__ = False  # keep pytest from collecting this class

    test: str
    statistic: float
    p_value: float
    sizes: tuple[int, ...]
    alpha: float = DEFAULT_ALPHA
    method: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def reject(self) -> bool:
        return bool(self.p_value < self.alpha) if not math.isnan(self.p_value) else False

    @property
    def defined(self) -> bool:
        return not math.isnan(self.p_value)

    def to_record(self) -> dict:
        rec = {
            "test": self.test,
            "statistic": _json_float(self.statistic),
            "p": _json_float(self.p_value),
            "alpha": self.alpha,
            "reject": self.reject,
            "sizes": list(self.sizes),
            "method": self.method,
        }
        rec.update({k: _json_float(v) if isinstance(v, float) else v for k, v in self.extra.items()})
        return rec


def _json_float(v: float):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else float(v)


def _clean(a: Sequence[float]) -> np.ndarray:
    arr = np.asarray(a, dtype=float).ravel()
    return arr[~np.isnan(arr)]


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of their positions."""
    values = np.asarray(values, dtype=float)
    n = values.size
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(n, dtype=float)
    if n == 0:
        return ranks
    # boundaries between runs of equal values
    change = np.concatenate(([True], sorted_vals[1:] != sorted_vals[:-1], [True]))
    idx = np.flatnonzero(change)
    starts, ends = idx[:-1], idx[1:]
    run_rank = 0.5 * (starts + ends - 1) + 1.0
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def _tie_sizes(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts[counts > 1].astype(float)


def welch_t(a, b, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Welch's unequal-variance t-test."""
    x, y = _clean(a), _clean(b)
    nx, ny = x.size, y.size
    if nx < 2 or ny < 2:
        raise InsufficientDataError(f"welch_t needs n >= 2 per sample, got {nx} and {ny}")
    vx, vy = x.var(ddof=1) / nx, y.var(ddof=1) / ny
    diff = x.mean() - y.mean()
    se2 = vx + vy
    if se2 == 0.0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        df = float(nx + ny - 2)
        p = 1.0 if diff == 0 else 0.0
    else:
        t = diff / math.sqrt(se2)
        # scaled by the larger variance so tiny variances do not underflow
        sx, sy = vx / max(vx, vy), vy / max(vx, vy)
        df = (sx + sy) ** 2 / (sx**2 / (nx - 1) + sy**2 / (ny - 1))
        p = student_t_two_sided(t, df)
    return TestResult("welch", float(t), p, (nx, ny), alpha, "student-t", {"df": float(df)})


def _mwu_exact_cdf(n: int, m: int) -> np.ndarray:
    """Cumulative null distribution of U for sample sizes n, m (no ties).

    Coefficients of the Gaussian binomial [n+m choose n]_q, built as the
    product of (1 - q^(m+i)) / (1 - q^i) for i = 1..n.
    """
    size = n * m + 1
    poly = np.zeros(size)
    poly[0] = 1.0
    for i in range(1, n + 1):
        shift = m + i
        if shift < size:
            poly[shift:] -= poly[: size - shift].copy()
        # divide by (1 - q^i): running sum with stride i
        for r in range(i):
            poly[r::i] = np.cumsum(poly[r::i])
    poly = np.maximum(poly, 0.0)
    return np.cumsum(poly) / poly.sum()


def mann_whitney_u(a, b, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Mann-Whitney U test; U is reported for the first sample.

    Exact null distribution when the smaller sample has at most 8 values and
    there are no ties, otherwise a tie-corrected normal approximation
    without continuity correction.
    """
    x, y = _clean(a), _clean(b)
    n, m = x.size, y.size
    if n < 1 or m < 1:
        raise InsufficientDataError("mann_whitney_u needs non-empty samples")
    pooled = np.concatenate([x, y])
    ranks = average_ranks(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    ties = _tie_sizes(pooled)
    big_n = n + m
    mu = n * m / 2.0
    if min(n, m) <= MWU_EXACT_MAX_N and ties.size == 0:
        cdf = _mwu_exact_cdf(n, m)
        k = int(round(u))
        lower = cdf[k]
        upper = 1.0 - (cdf[k - 1] if k > 0 else 0.0)
        p = float(min(1.0, 2.0 * min(lower, upper)))
        return TestResult("mann_whitney_u", u, p, (n, m), alpha, "exact")
    tie_term = float((ties**3 - ties).sum()) / (big_n * (big_n - 1)) if big_n > 1 else 0.0
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        return TestResult("mann_whitney_u", u, 1.0, (n, m), alpha, "all tied", {"z": 0.0})
    z = (u - mu) / math.sqrt(var)
    return TestResult("mann_whitney_u", u, normal_two_sided(z), (n, m), alpha, "normal", {"z": z})


def ks_statistic(a, b) -> float:
    x, y = np.sort(_clean(a)), np.sort(_clean(b))
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def ks_two_sample(a, b, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    x, y = _clean(a), _clean(b)
    n, m = x.size, y.size
    if n < 1 or m < 1:
        raise InsufficientDataError("ks_two_sample needs non-empty samples")
    d = ks_statistic(x, y)
    n_eff = n * m / (n + m)
    return TestResult("kolmogorov_smirnov", d, kolmogorov_sf(math.sqrt(n_eff) * d), (n, m), alpha, "asymptotic")


def kruskal_wallis(groups: Sequence[Sequence[float]], alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Kruskal-Wallis H test with tie correction."""
    samples = [_clean(g) for g in groups]
    sizes = tuple(s.size for s in samples)
    if len(samples) < 2 or min(sizes) < 1:
        raise InsufficientDataError("kruskal_wallis needs >= 2 non-empty groups")
    pooled = np.concatenate(samples)
    big_n = pooled.size
    ranks = average_ranks(pooled)
    bounds = np.cumsum((0,) + sizes)
    h = sum(ranks[lo:hi].sum() ** 2 / (hi - lo) for lo, hi in zip(bounds[:-1], bounds[1:]))
    h = 12.0 / (big_n * (big_n + 1)) * h - 3.0 * (big_n + 1)
    ties = _tie_sizes(pooled)
    correction = 1.0 - float((ties**3 - ties).sum()) / (big_n**3 - big_n) if big_n > 1 else 0.0
    if correction <= 0:
        return TestResult("kruskal_wallis", math.nan, math.nan, sizes, alpha, "undefined: all values tied")
    h /= correction
    return TestResult("kruskal_wallis", float(h), chi2_sf(h, len(samples) - 1), sizes, alpha, "chi2")


def mood_median(groups: Sequence[Sequence[float]], alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Mood's median test; values equal to the grand median are dropped."""
    samples = [_clean(g) for g in groups]
    sizes = tuple(s.size for s in samples)
    if len(samples) < 2 or min(sizes) < 1:
        raise InsufficientDataError("mood_median needs >= 2 non-empty groups")
    grand = float(np.median(np.concatenate(samples)))
    table = np.array([[np.sum(s > grand), np.sum(s < grand)] for s in samples], dtype=float)
    row, col = table.sum(axis=1), table.sum(axis=0)
    if np.any(row == 0) or np.any(col == 0):
        return TestResult("mood_median", math.nan, math.nan, sizes, alpha, "undefined: degenerate table",
                          {"grand_median": grand})
    expected = np.outer(row, col) / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    return TestResult("mood_median", stat, chi2_sf(stat, len(samples) - 1), sizes, alpha, "chi2",
                      {"grand_median": grand})


def spearman_test(x, y, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Spearman correlation with the usual t approximation for the p-value."""
    from ..series import spearman

    xa, ya = np.asarray(x, float), np.asarray(y, float)
    ok = ~(np.isnan(xa) | np.isnan(ya))
    n = int(ok.sum())
    rho = spearman(xa, ya)
    if math.isnan(rho):
        raise InsufficientDataError("spearman_test: correlation undefined")
    if abs(rho) >= 1.0:
        return TestResult("spearman", rho, 0.0, (n,), alpha, "t-approximation")
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return TestResult("spearman", rho, student_t_two_sided(t, n - 2), (n,), alpha, "t-approximation")


TWO_SAMPLE_BATTERY = ("welch", "mann_whitney_u", "kolmogorov_smirnov", "kruskal_wallis", "mood_median")


def run_battery(a, b, alpha: float = DEFAULT_ALPHA) -> list[TestResult]:
    """Run every two-sample test; undersized samples yield explicit placeholders."""
    runners = {
        "welch": lambda: welch_t(a, b, alpha),
        "mann_whitney_u": lambda: mann_whitney_u(a, b, alpha),
        "kolmogorov_smirnov": lambda: ks_two_sample(a, b, alpha),
        "kruskal_wallis": lambda: kruskal_wallis([a, b], alpha),
        "mood_median": lambda: mood_median([a, b], alpha),
    }
    sizes = (_clean(a).size, _clean(b).size)
    out = []
    for name in TWO_SAMPLE_BATTERY:
        try:
            out.append(runners[name]())
        except InsufficientDataError as exc:
            out.append(TestResult(name, math.nan, math.nan, sizes, alpha, f"insufficient data: {exc}"))
    return out
