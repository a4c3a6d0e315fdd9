"""Event-time alignment of standardized correlations and the statistics on it.

Event day ``d`` counts calendar days from a pair's connection day (d = 0).
Randomized procedures draw from per-day random streams derived from one
master seed, so their output does not depend on how work is scheduled.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .stats import mcmc_curve_fit, run_battery
from .stats.mcmc import FitResult
from .stats.testing import DEFAULT_ALPHA, TestResult

DEFAULT_D_RANGE = (-180, 400)
BEFORE_WINDOW = (-120, -1)
AFTER_WINDOW = (75, 195)
BASELINE_DAYS = 90
KEEP_HORIZON_DAYS = 90
TOP_K = 10

_STREAM_TAGS = {"mean": 1, "median": 2, "statistic": 3}
_RESAMPLE_BLOCK = 1000


def day_rng(seed: int, tag: str, d: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, event day)."""
    ss = np.random.SeedSequence(seed, spawn_key=(_STREAM_TAGS[tag], 0 if d >= 0 else 1, abs(int(d))))
    return np.random.Generator(np.random.PCG64(ss))


def pair_id(pair: tuple[str, str]) -> str:
    return f"{pair[0]}|{pair[1]}"


@dataclass
class AlignedPanel:
    pair_ids: list[str]
    offsets: np.ndarray
    values: np.ndarray
    connection_days: list[np.datetime64] = field(default_factory=list)

    @property
    def n_d(self) -> np.ndarray:
        return (~np.isnan(self.values)).sum(axis=0)

    def column(self, d: int) -> np.ndarray:
        return self.values[:, int(d - self.offsets[0])]

    def window(self, lo: int, hi: int) -> np.ndarray:
        if lo < self.offsets[0] or hi > self.offsets[-1] or lo > hi:
            raise ValueError(f"window [{lo}, {hi}] outside event-day range [{self.offsets[0]}, {self.offsets[-1]}]")
        return self.values[:, lo - self.offsets[0]: hi - self.offsets[0] + 1]

    def subset(self, rows: Sequence[int]) -> "AlignedPanel":
        rows = list(rows)
        days = [self.connection_days[r] for r in rows] if self.connection_days else []
        return AlignedPanel([self.pair_ids[r] for r in rows], self.offsets, self.values[rows], days)

    def select(self, ids: Iterable[str]) -> "AlignedPanel":
        wanted = set(ids)
        return self.subset([k for k, p in enumerate(self.pair_ids) if p in wanted])


def align_series(
    series: np.ndarray,
    calendar_start: np.datetime64,
    connection_days: Sequence,
    d_range: tuple[int, int] = DEFAULT_D_RANGE,
) -> np.ndarray:
    """Row k of the result is ``series[k]`` re-indexed so that column 0 is d_range[0]."""
    series = np.atleast_2d(np.asarray(series, dtype=float))
    lo, hi = d_range
    offsets = np.arange(lo, hi + 1)
    start = np.datetime64(calendar_start, "D")
    conn = np.array([int((np.datetime64(c, "D") - start).astype(int)) for c in connection_days], dtype=np.int64)
    cols = conn[:, None] + offsets[None, :]
    inside = (cols >= 0) & (cols < series.shape[1])
    rows = np.broadcast_to(np.arange(series.shape[0])[:, None], cols.shape)
    out = np.full(cols.shape, np.nan)
    out[inside] = series[rows[inside], cols[inside]]
    return out


def align_panel(corr, connections: Sequence, d_range: tuple[int, int] = DEFAULT_D_RANGE, field_name: str = "sc") -> AlignedPanel:
    """Align a correlation panel on each pair's connection day.

    ``connections`` holds objects with ``pair`` and ``day`` attributes
    (connection events or null-model draws); a pair may appear more than
    once. Cells outside the calendar are missing.
    """
    grid = getattr(corr, field_name)
    rows = [corr.row(c.pair) for c in connections]
    values = align_series(grid[rows] if rows else np.empty((0, grid.shape[1])), corr.calendar[0],
                          [c.day for c in connections], d_range)
    return AlignedPanel([pair_id(tuple(sorted(c.pair))) for c in connections], np.arange(d_range[0], d_range[1] + 1),
                        values, [np.datetime64(c.day, "D") for c in connections])


@dataclass
class Curve:
    offsets: np.ndarray
    center: np.ndarray
    sd: np.ndarray
    n: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    statistic: str
    n_resamples: int
    seed: int

    def to_rows(self) -> list[dict]:
        return [
            {"d": int(d), f"{self.statistic}_sc": c, "sd": s, "n_pairs": int(n), "lower": lo, "upper": up}
            for d, c, s, n, lo, up in zip(self.offsets, self.center, self.sd, self.n, self.lower, self.upper)
        ]

    def window_mean(self, lo: int, hi: int) -> float:
        sel = (self.offsets >= lo) & (self.offsets <= hi)
        vals = self.center[sel]
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else math.nan


def resample_statistics(values: np.ndarray, size: int, n_resamples: int, rng: np.random.Generator,
                        stat: Callable[..., np.ndarray]) -> np.ndarray:
    """``stat`` of ``n_resamples`` with-replacement samples of ``size`` values."""
    out = np.empty(n_resamples)
    for lo in range(0, n_resamples, _RESAMPLE_BLOCK):
        k = min(_RESAMPLE_BLOCK, n_resamples - lo)
        idx = rng.integers(0, values.size, size=(k, size))
        out[lo:lo + k] = stat(values[idx], axis=1)
    return out


def _bootstrap_curve(panel: AlignedPanel, n_resamples: int, seed: int, threads: int, tag: str,
                     stat, sample_sizes, quantiles=(0.025, 0.975)) -> Curve:
    if panel.values.shape[0] == 0:
        raise ValueError("empty panel")
    n_days = panel.offsets.size
    center = np.full(n_days, np.nan)
    sd = np.full(n_days, np.nan)
    lower = np.full(n_days, np.nan)
    upper = np.full(n_days, np.nan)
    counts = panel.n_d
    sizes = counts if sample_sizes is None else np.asarray(sample_sizes, dtype=np.int64)
    if sizes.shape != counts.shape:
        raise ValueError("sample_sizes must have one entry per event day")

    def work(col: int) -> None:
        v = panel.values[:, col]
        v = v[~np.isnan(v)]
        m = int(sizes[col])
        if v.size == 0 or m <= 0:
            return
        d = int(panel.offsets[col])
        draws = resample_statistics(v, m, n_resamples, day_rng(seed, tag, d), stat)
        center[col] = draws.mean() if tag == "mean" else np.median(draws)
        sd[col] = draws.std(ddof=1) if n_resamples > 1 else 0.0
        lower[col], upper[col] = np.quantile(draws, quantiles)

    if threads <= 1:
        for col in range(n_days):
            work(col)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n_days)))
    n_out = counts if sample_sizes is None else np.where(counts > 0, sizes, 0)
    return Curve(panel.offsets.copy(), center, sd, n_out, lower, upper, tag, n_resamples, seed)


def bootstrap_mean_curve(panel: AlignedPanel, n_resamples: int = 10_000, seed: int = 0, threads: int = 1,
                         sample_sizes: Sequence[int] | None = None) -> Curve:
    """Per-day bootstrap of the mean SC across pairs.

    On each event day the defined cells are resampled with replacement
    (``N_d`` draws, or ``sample_sizes[d]`` to resize a comparison cohort
    to the linked cohort), averaged, and repeated ``n_resamples`` times.
    The curve reports the mean and standard deviation of those averages.
    """
    return _bootstrap_curve(panel, n_resamples, seed, threads, "mean", np.mean, sample_sizes)


def bootstrap_median_curve(panel: AlignedPanel, n_resamples: int = 10_000, seed: int = 0, threads: int = 1,
                           sample_sizes: Sequence[int] | None = None) -> Curve:
    """Per-day bootstrap of the median; band = [2.5%, 97.5%] of resampled medians."""
    return _bootstrap_curve(panel, n_resamples, seed, threads, "median", np.median, sample_sizes)


def plain_mean_curve(panel: AlignedPanel) -> np.ndarray:
    """Per-day mean over defined cells, without resampling."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(panel.values, axis=0)


def pre_connection_baseline(curve: Curve, days: int = BASELINE_DAYS) -> float:
    """Average curve level over the ``days`` preceding connection."""
    return curve.window_mean(-days, -1)


@dataclass(frozen=True)
class BeforeAfterSummary:
    pair_id: str
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.after - self.before


def before_after_deltas(
    panel: AlignedPanel, before: tuple[int, int] = BEFORE_WINDOW, after: tuple[int, int] = AFTER_WINDOW
) -> tuple[list[BeforeAfterSummary], int]:
    """Per-pair window means; pairs with an empty window are excluded and counted."""
    b = panel.window(*before)
    a = panel.window(*after)
    nb = (~np.isnan(b)).sum(axis=1)
    na = (~np.isnan(a)).sum(axis=1)
    with np.errstate(invalid="ignore"):
        mb = np.nansum(b, axis=1) / np.where(nb > 0, nb, 1)
        ma = np.nansum(a, axis=1) / np.where(na > 0, na, 1)
    out = []
    excluded = 0
    for k, pid in enumerate(panel.pair_ids):
        if nb[k] == 0 or na[k] == 0:
            excluded += 1
            continue
        out.append(BeforeAfterSummary(pid, float(mb[k]), float(ma[k])))
    return out, excluded


@dataclass
class BootstrapSummary:
    estimate: float
    sd: float
    ci_low: float
    ci_high: float
    n: int
    n_resamples: int


def bootstrap_statistic(values, n_resamples: int = 10_000, seed: int = 0, stat=np.mean,
                        quantiles=(0.025, 0.975)) -> BootstrapSummary:
    """Resample ``values`` with replacement; summarize the statistic's spread."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        raise ValueError("no values to bootstrap")
    draws = resample_statistics(v, v.size, n_resamples, day_rng(seed, "statistic", 0), stat)
    lo, hi = np.quantile(draws, quantiles)
    return BootstrapSummary(float(stat(v)), float(draws.std(ddof=1)) if n_resamples > 1 else 0.0,
                            float(lo), float(hi), int(v.size), n_resamples)


def _increasing(x, axis=None):
    return np.mean(x > 0, axis=axis)


def fraction_increasing(summaries: Sequence[BeforeAfterSummary], n_boot: int = 10_000, seed: int = 0) -> BootstrapSummary:
    """Share of pairs whose after-window mean exceeds the before-window mean.

    Ties count as non-increasing. The interval is a percentile bootstrap
    over pairs.
    """
    deltas = np.array([s.delta for s in summaries], dtype=float)
    return bootstrap_statistic(deltas, n_boot, seed, _increasing)


@dataclass
class PairCharacteristics:
    pair_id: str
    pair: tuple[str, str]
    connection_day: np.datetime64
    kind: str
    first_edited: str | None
    second_edited: str | None
    cap_diff: float
    volume_diff: float
    cap_diff_before: float
    cap_diff_after: float
    volume_diff_before: float
    volume_diff_after: float
    age_first: float | None
    age_second: float | None
    age_older: float | None
    age_younger: float | None
    age_diff: float | None
    younger_is_second: bool | None
    lower_cap_is_second: bool | None
    top10: bool
    keep: bool | None

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["pair"] = list(self.pair)
        rec["connection_day"] = str(self.connection_day)
        return rec


def _window_mean(row: np.ndarray, lo: int, hi: int) -> float:
    lo, hi = max(lo, 0), min(hi, row.size)
    if hi <= lo:
        return math.nan
    seg = row[lo:hi]
    seg = seg[~np.isnan(seg)]
    return float(seg.mean()) if seg.size else math.nan


def _lifetime_mean(row: np.ndarray) -> float:
    v = row[~np.isnan(row)]
    return float(v.mean()) if v.size else math.nan


def market_age(first_obs: np.datetime64 | None, day) -> float | None:
    """Days since first market observation on ``day``; 0 if not yet listed."""
    if first_obs is None:
        return None
    return float(max(0, int((np.datetime64(day, "D") - first_obs).astype(int))))


def pair_characteristics(
    connections: Sequence,
    panel,
    events: Sequence | None = None,
    project_to_asset: Mapping[str, str] | None = None,
    before_days: int = -BEFORE_WINDOW[0],
    after: tuple[int, int] = AFTER_WINDOW,
    keep_horizon: int = KEEP_HORIZON_DAYS,
    top_k: int = TOP_K,
) -> list[PairCharacteristics]:
    """Market and development attributes of each linked pair.

    Differences are absolute differences of average market cap and volume:
    lifetime averages, plus the before (``before_days`` preceding connection)
    and after windows. Market age counts days since the first price. The
    top-k set ranks all linked assets by their average cap over the
    ``before_days`` preceding the pair's connection. ``keep`` tells whether
    the connecting developer edits the first-edited asset again within
    ``keep_horizon`` days; it is ``None`` without events.
    """
    first_obs = panel.first_observation("price")
    cap = panel.values["market_cap"]
    vol = panel.values["volume"]
    linked_assets = sorted({a for c in connections for a in c.pair if a in panel})
    life_cap = {a: _lifetime_mean(cap[panel.index(a)]) for a in linked_assets}
    life_vol = {a: _lifetime_mean(vol[panel.index(a)]) for a in linked_assets}

    activity = None
    if events is not None:
        p2a = project_to_asset
        activity = {}
        for e in events:
            asset = p2a.get(e.project) if p2a is not None else e.project
            if asset is not None:
                activity.setdefault((e.developer, asset), []).append(e.timestamp)
        for v in activity.values():
            v.sort()

    out = []
    for c in connections:
        a, b = c.pair
        if a not in panel or b not in panel:
            continue
        t = panel.day_index(c.day)
        ia, ib = panel.index(a), panel.index(b)
        before = {x: _window_mean(cap[i], t - before_days, t) for x, i in ((a, ia), (b, ib))}
        vbefore = {x: _window_mean(vol[i], t - before_days, t) for x, i in ((a, ia), (b, ib))}
        cafter = {x: _window_mean(cap[i], t + after[0], t + after[1] + 1) for x, i in ((a, ia), (b, ib))}
        vafter = {x: _window_mean(vol[i], t + after[0], t + after[1] + 1) for x, i in ((a, ia), (b, ib))}

        defined = getattr(c, "direction_defined", True) and hasattr(c, "first_edited")
        first = c.first_edited if defined else None
        second = c.second_edited if defined else None
        ages = {x: market_age(first_obs[x], c.day) for x in (a, b)}
        known = [v for v in ages.values() if v is not None]
        older = max(known) if len(known) == 2 else None
        younger = min(known) if len(known) == 2 else None
        younger_is_second = None
        lower_cap_is_second = None
        if defined and len(known) == 2 and ages[first] != ages[second]:
            younger_is_second = ages[second] < ages[first]
        if defined:
            cf = before[first] if not math.isnan(before[first]) else life_cap[first]
            cs = before[second] if not math.isnan(before[second]) else life_cap[second]
            if not (math.isnan(cf) or math.isnan(cs)) and cf != cs:
                lower_cap_is_second = cs < cf

        ranking = []
        for x in linked_assets:
            m = _window_mean(cap[panel.index(x)], t - before_days, t)
            if not math.isnan(m):
                ranking.append((m, x))
        ranking.sort(key=lambda r: (-r[0], r[1]))
        top = {x for _, x in ranking[:top_k]}

        keep = None
        if activity is not None and defined:
            stamps = activity.get((c.developer, first), [])
            limit = c.timestamp + timedelta(days=keep_horizon)
            keep = any(c.timestamp < s <= limit for s in stamps)

        out.append(PairCharacteristics(
            pair_id=pair_id(c.pair),
            pair=c.pair,
            connection_day=np.datetime64(c.day, "D"),
            kind=getattr(c, "kind", ""),
            first_edited=first,
            second_edited=second,
            cap_diff=abs(life_cap[a] - life_cap[b]),
            volume_diff=abs(life_vol[a] - life_vol[b]),
            cap_diff_before=abs(before[a] - before[b]),
            cap_diff_after=abs(cafter[a] - cafter[b]),
            volume_diff_before=abs(vbefore[a] - vbefore[b]),
            volume_diff_after=abs(vafter[a] - vafter[b]),
            age_first=ages[first] if first else None,
            age_second=ages[second] if second else None,
            age_older=older,
            age_younger=younger,
            age_diff=(older - younger) if older is not None else None,
            younger_is_second=younger_is_second,
            lower_cap_is_second=lower_cap_is_second,
            top10=bool(top & {a, b}),
            keep=keep,
        ))
    return out


CLASSIFICATIONS = ("young_first", "cap_diff", "keep_dismiss", "top10", "kind", "time")


def classify_pairs(chars: Sequence[PairCharacteristics], criterion: str) -> tuple[list[str], list[str]]:
    """Split pairs into two classes; pairs with an undefined attribute are left out.

    ``young_first``: older member edited first (y-f) vs younger first (y-s).
    ``cap_diff``: cap difference above the median vs at or below it.
    ``keep_dismiss``: developer keeps editing the first project vs drops it.
    ``top10``: pairs with a top-10 asset vs the rest.
    ``kind``: push vs merged pull request.
    ``time``: connections after the median date (late) vs the rest (early).
    """
    if criterion == "young_first":
        a = [c.pair_id for c in chars if c.younger_is_second is True]
        b = [c.pair_id for c in chars if c.younger_is_second is False]
    elif criterion == "cap_diff":
        vals = [c for c in chars if not math.isnan(c.cap_diff)]
        med = float(np.median([c.cap_diff for c in vals])) if vals else math.nan
        a = [c.pair_id for c in vals if c.cap_diff > med]
        b = [c.pair_id for c in vals if c.cap_diff <= med]
    elif criterion == "keep_dismiss":
        a = [c.pair_id for c in chars if c.keep is True]
        b = [c.pair_id for c in chars if c.keep is False]
    elif criterion == "top10":
        a = [c.pair_id for c in chars if c.top10]
        b = [c.pair_id for c in chars if not c.top10]
    elif criterion == "kind":
        a = [c.pair_id for c in chars if c.kind == "Push"]
        b = [c.pair_id for c in chars if c.kind == "MergedPullRequest"]
    elif criterion == "time":
        days = np.array([c.connection_day for c in chars], dtype="datetime64[D]").astype(np.int64)
        med = float(np.median(days)) if days.size else math.nan
        a = [c.pair_id for c, d in zip(chars, days) if d > med]
        b = [c.pair_id for c, d in zip(chars, days) if d <= med]
    else:
        raise ValueError(f"unknown classification {criterion!r}; choose from {CLASSIFICATIONS}")
    return a, b


CLASS_LABELS = {
    "young_first": ("y-f", "y-s"),
    "cap_diff": ("high-diff", "low-diff"),
    "keep_dismiss": ("keep", "dismiss"),
    "top10": ("top10", "minor"),
    "kind": ("push", "pull"),
    "time": ("late", "early"),
}


def compare_classes(deltas_a, deltas_b, alpha: float = DEFAULT_ALPHA) -> list[TestResult]:
    """Welch, Mann-Whitney U, Kolmogorov-Smirnov, Kruskal-Wallis and Mood tests."""
    return run_battery(deltas_a, deltas_b, alpha)


def fit_transition_sigmoid(curve: Curve, n_steps: int = 20_000, seed: int = 0,
                           d_window: tuple[int, int] | None = None) -> FitResult:
    """Logistic step fitted to the curve center; ``d0`` is the transition day."""
    d = curve.offsets.astype(float)
    y = curve.center
    keep = ~np.isnan(y)
    if d_window is not None:
        keep &= (d >= d_window[0]) & (d <= d_window[1])
    return mcmc_curve_fit("sigmoid", d[keep], y[keep], n_steps=n_steps, seed=seed)
