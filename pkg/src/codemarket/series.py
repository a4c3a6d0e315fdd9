"""Daily time-series kernels: changes, volatility, rank correlation.

Missing values are NaN throughout. Series are calendar-aligned arrays, so
index ``t`` of every series refers to the same day.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .stats.testing import average_ranks

DEFAULT_WINDOW = 120
CROSS_SECTION_FLOOR = 10
DEFAULT_SUBSAMPLE = 10_000
# correlations live in [-1, 1]; a smaller cross-sectional spread is rounding noise
MIN_SPREAD = 1e-12

METRICS = {
    "return": ("price", "change"),
    "price": ("price", "level"),
    "volume": ("volume", "level"),
    "volume_change": ("volume", "change"),
    "market_cap": ("market_cap", "level"),
    "cap_change": ("market_cap", "change"),
    "volatility": (("high", "low"), "log_range"),
}


def default_min_obs(window: int) -> int:
    return math.ceil(0.75 * window)


def relative_change(x) -> np.ndarray:
    """(x[t] - x[t-1]) / x[t-1] along the last axis.

    The first day, days with a missing operand and days whose previous value
    is zero come out missing.
    """
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.nan)
    prev, cur = x[..., :-1], x[..., 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        change = (cur - prev) / prev
    change[prev == 0] = np.nan
    out[..., 1:] = change
    return out


def log_range_volatility(high, low) -> np.ndarray:
    """ln(high) - ln(low); missing where either side is missing or low <= 0."""
    high = np.asarray(high, dtype=float)
    low = np.asarray(low, dtype=float)
    bad = np.isnan(high) | np.isnan(low) | (low <= 0) | (high <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(np.where(bad, 1.0, high)) - np.log(np.where(bad, 1.0, low))
    v[bad] = np.nan
    return v


def spearman(x, y) -> float:
    """Spearman coefficient with pairwise deletion and average ranks for ties.

    Returns NaN when fewer than three complete pairs remain or when either
    rank vector has zero variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    n = int(ok.sum())
    if n < 3:
        return math.nan
    # doubled ranks are integers, which keeps the sums exact
    rx = (2.0 * average_ranks(x[ok])).astype(np.int64)
    ry = (2.0 * average_ranks(y[ok])).astype(np.int64)
    return _corr_from_doubled_ranks(int(rx @ ry), int(rx @ rx), int(ry @ ry), n)


def _corr_from_doubled_ranks(sxy, sxx, syy, n):
    # the doubled ranks always sum to n(n+1)
    centre = n * (n + 1) ** 2
    cov = sxy - centre
    vx = sxx - centre
    vy = syy - centre
    if vx <= 0 or vy <= 0:
        return math.nan
    r = cov / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))


def _window_view(x: np.ndarray, window: int) -> np.ndarray:
    """(T, window) view; row t holds days t-window+1 .. t, NaN-padded at the start."""
    padded = np.concatenate([np.full(window - 1, np.nan), x])
    return np.lib.stride_tricks.sliding_window_view(padded, window)


def window_doubled_ranks(windows: np.ndarray) -> np.ndarray:
    """Twice the average rank of each valid entry within its row; 0 where NaN.

    Vectorised over rows: sort each row (NaN last), find runs of equal
    values, and give every member of a run start + end + 2 (twice the
    1-based mean position).
    """
    m, s = windows.shape
    order = np.argsort(windows, axis=1, kind="stable")
    vals = np.take_along_axis(windows, order, axis=1)
    valid = ~np.isnan(vals)
    pos = np.broadcast_to(np.arange(s), (m, s))
    new_run = np.ones((m, s), dtype=bool)
    new_run[:, 1:] = vals[:, 1:] != vals[:, :-1]
    start = np.maximum.accumulate(np.where(new_run, pos, 0), axis=1)
    end_run = np.ones((m, s), dtype=bool)
    end_run[:, :-1] = new_run[:, 1:]
    end = np.minimum.accumulate(np.where(end_run, pos, s)[:, ::-1], axis=1)[:, ::-1]
    dtype = np.int16 if 2 * s + 2 < np.iinfo(np.int16).max else np.int32
    doubled = np.where(valid, start + end + 2, 0).astype(dtype)
    out = np.empty_like(doubled)
    np.put_along_axis(out, order, doubled, axis=1)
    return out


def _rolling_from_ranks(rx, ry, n, min_obs):
    sxy = np.einsum("ij,ij->i", rx, ry, dtype=np.int64)
    sxx = np.einsum("ij,ij->i", rx, rx, dtype=np.int64)
    syy = np.einsum("ij,ij->i", ry, ry, dtype=np.int64)
    return _corr_from_sums(sxy, sxx, syy, n, min_obs)


def _corr_from_sums(sxy, sxx, syy, n, min_obs):
    centre = n.astype(np.int64) * (n.astype(np.int64) + 1) ** 2
    cov = (sxy - centre).astype(float)
    vx = (sxx - centre).astype(float)
    vy = (syy - centre).astype(float)
    out = np.full(n.shape, np.nan)
    good = (n >= max(min_obs, 3)) & (vx > 0) & (vy > 0)
    out[good] = np.clip(cov[good] / np.sqrt(vx[good] * vy[good]), -1.0, 1.0)
    return out


def rolling_spearman(x, y, window: int = DEFAULT_WINDOW, min_obs: int | None = None) -> np.ndarray:
    """Backward rolling Spearman correlation.

    Day ``t`` uses the complete pairs among days t-window+1 .. t and is
    missing when fewer than ``min_obs`` pairs are available (default: 75% of
    the window).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("rolling_spearman expects two aligned 1-D series")
    if min_obs is None:
        min_obs = default_min_obs(window)
    wx, wy = _window_view(x, window), _window_view(y, window)
    joint = ~(np.isnan(wx) | np.isnan(wy))
    rx = window_doubled_ranks(np.where(joint, wx, np.nan))
    ry = window_doubled_ranks(np.where(joint, wy, np.nan))
    return _rolling_from_ranks(rx, ry, joint.sum(axis=1), min_obs)


class _AssetWindows:
    """Per-asset window ranks, reused by every pair that contains the asset."""

    def __init__(self, values: np.ndarray, window: int):
        self.values = values
        self.window = window
        self.missing = np.isnan(values)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def windows(self, i: int) -> np.ndarray:
        return _window_view(self.values[i], self.window)

    def get(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Doubled ranks per window and their per-window sum of squares."""
        hit = self._cache.get(i)
        if hit is None:
            ranks = window_doubled_ranks(self.windows(i))
            hit = (ranks, np.einsum("ij,ij->i", ranks, ranks, dtype=np.int64))
            self._cache[i] = hit
        return hit


def _rolling_count(mask: np.ndarray, window: int) -> np.ndarray:
    c = np.concatenate(([0], np.cumsum(mask, dtype=np.int64)))
    t = np.arange(1, mask.size + 1)
    return c[t] - c[np.maximum(t - window, 0)]


def _pair_rolling(cache: _AssetWindows, i: int, j: int, min_obs: int) -> np.ndarray:
    rx, sxx = cache.get(i)
    ry, syy = cache.get(j)
    w = cache.window
    mi, mj = cache.missing[i], cache.missing[j]
    n = _rolling_count(~(mi | mj), w)
    sxy = np.einsum("ij,ij->i", rx, ry, dtype=np.int64)
    # windows containing a day where exactly one side is missing: re-rank jointly
    bad = np.flatnonzero(_rolling_count(mi != mj, w) > 0)
    if bad.size:
        sxx, syy = sxx.copy(), syy.copy()
        wx, wy = cache.windows(i)[bad], cache.windows(j)[bad]
        joint = ~(np.isnan(wx) | np.isnan(wy))
        bx = window_doubled_ranks(np.where(joint, wx, np.nan))
        by = window_doubled_ranks(np.where(joint, wy, np.nan))
        sxy[bad] = np.einsum("ij,ij->i", bx, by, dtype=np.int64)
        sxx[bad] = np.einsum("ij,ij->i", bx, bx, dtype=np.int64)
        syy[bad] = np.einsum("ij,ij->i", by, by, dtype=np.int64)
    return _corr_from_sums(sxy, sxx, syy, n, min_obs)


def rolling_spearman_pairs(
    values,
    pairs: Sequence[tuple[int, int]],
    window: int = DEFAULT_WINDOW,
    min_obs: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Rolling Spearman for many asset pairs of an (assets x days) matrix.

    Returns a (len(pairs), days) array; row order follows ``pairs``.
    Identical to calling :func:`rolling_spearman` pair by pair.
    """
    values = np.asarray(values, dtype=float)
    if min_obs is None:
        min_obs = default_min_obs(window)
    cache = _AssetWindows(values, window)
    out = np.empty((len(pairs), values.shape[1]))
    if threads <= 1 or len(pairs) < 2:
        for k, (i, j) in enumerate(pairs):
            out[k] = _pair_rolling(cache, i, j, min_obs)
        return out
    # warm the cache first so workers only read it
    for a in sorted({a for p in pairs for a in p}):
        cache.get(a)

    def work(k):
        i, j = pairs[k]
        out[k] = _pair_rolling(cache, i, j, min_obs)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(len(pairs))))
    return out


@dataclass
class CrossSection:
    """Running per-day mean/variance over the ecology of pairs."""

    n: np.ndarray
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, days: int) -> "CrossSection":
        return cls(np.zeros(days, dtype=np.int64), np.zeros(days), np.zeros(days))

    def update(self, block: np.ndarray) -> None:
        """Merge a (pairs x days) block with Chan's parallel update."""
        valid = ~np.isnan(block)
        nb = valid.sum(axis=0)
        filled = np.where(valid, block, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mb = np.where(nb > 0, filled.sum(axis=0) / np.maximum(nb, 1), 0.0)
        m2b = np.where(valid, (block - mb) ** 2, 0.0).sum(axis=0)
        total = self.n + nb
        delta = mb - self.mean
        safe = np.maximum(total, 1)
        self.mean = self.mean + delta * nb / safe
        self.m2 = self.m2 + m2b + delta**2 * self.n * nb / safe
        self.n = total

    @property
    def sd(self) -> np.ndarray:
        # population standard deviation
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n > 0, np.sqrt(np.maximum(self.m2, 0.0) / np.maximum(self.n, 1)), np.nan)


@dataclass
class CorrelationPanel:
    """Raw and standardized correlations for target pairs on a calendar."""

    pairs: list[tuple[str, str]]
    calendar: np.ndarray
    raw: np.ndarray
    sc: np.ndarray
    cross_mean: np.ndarray
    cross_sd: np.ndarray
    cross_n: np.ndarray
    metadata: dict = field(default_factory=dict)

    def row(self, pair: tuple[str, str]) -> int:
        key = tuple(sorted(pair))
        return self._index[key]

    def __post_init__(self):
        self._index = {tuple(sorted(p)): k for k, p in enumerate(self.pairs)}

    def __contains__(self, pair) -> bool:
        return tuple(sorted(pair)) in self._index


def standardize_cross_section(
    ecology: Iterable[np.ndarray] | np.ndarray,
    targets: np.ndarray,
    floor: int = CROSS_SECTION_FLOOR,
) -> tuple[np.ndarray, CrossSection]:
    """Z-score target correlations against the per-day ecology cross-section.

    ``ecology`` is either a (pairs x days) array or an iterable of such
    blocks, merged in iteration order. The standard deviation is the
    population one. SC is missing on days with fewer than ``floor`` ecology
    values or zero spread.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    cs = CrossSection.empty(targets.shape[1])
    blocks = [ecology] if isinstance(ecology, np.ndarray) else ecology
    for block in blocks:
        cs.update(np.atleast_2d(np.asarray(block, dtype=float)))
    sd = cs.sd
    usable = (cs.n >= floor) & (sd > MIN_SPREAD)
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = (targets - cs.mean) / sd
    sc[:, ~usable] = np.nan
    return sc, cs


def metric_matrix(panel, metric: str) -> np.ndarray:
    """Assets x days matrix of the requested derived series."""
    try:
        source, kind = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None
    if kind == "log_range":
        return log_range_volatility(panel.values[source[0]], panel.values[source[1]])
    base = panel.values[source]
    return relative_change(base) if kind == "change" else np.array(base, dtype=float)


def correlation_panel(
    panel,
    targets: Sequence[tuple[str, str]],
    metric: str = "return",
    window: int = DEFAULT_WINDOW,
    min_obs: int | None = None,
    ecology: Sequence[tuple[str, str]] | None = None,
    subsample: int | None = None,
    seed: int = 0,
    floor: int = CROSS_SECTION_FLOOR,
    threads: int = 1,
    block_size: int = 512,
) -> CorrelationPanel:
    """Rolling correlations for ``targets`` standardized against the ecology.

    The ecology defaults to every unordered pair of panel assets. A seeded
    random subsample of ``subsample`` ecology pairs can be used instead for
    large panels. Blocks of ecology pairs are processed in a fixed order, so
    results do not depend on ``threads``.
    """
    if min_obs is None:
        min_obs = default_min_obs(window)
    index = {a: k for k, a in enumerate(panel.assets)}
    values = metric_matrix(panel, metric)
    n_assets = len(panel.assets)
    if ecology is None:
        eco_idx = np.array([(i, j) for i in range(n_assets) for j in range(i + 1, n_assets)], dtype=np.int64)
    else:
        eco_idx = np.array(sorted({tuple(sorted((index[a], index[b]))) for a, b in ecology}), dtype=np.int64)
    eco_idx = eco_idx.reshape(-1, 2)
    if subsample is not None and subsample < len(eco_idx):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(eco_idx), size=subsample, replace=False))
        eco_idx = eco_idx[pick]

    target_keys = [tuple(sorted(p)) for p in targets]
    target_idx = [tuple(sorted((index[a], index[b]))) for a, b in target_keys]
    target_pos = {p: k for k, p in enumerate(target_idx)}
    raw_targets = np.full((len(target_idx), values.shape[1]), np.nan)
    filled = np.zeros(len(target_idx), dtype=bool)

    cs = CrossSection.empty(values.shape[1])
    cache = _AssetWindows(values, window)
    eco_list = [tuple(map(int, p)) for p in eco_idx]
    for lo in range(0, len(eco_list), block_size):
        chunk = eco_list[lo:lo + block_size]
        block = _rolling_block(cache, chunk, min_obs, threads)
        cs.update(block)
        for r, p in enumerate(chunk):
            k = target_pos.get(p)
            if k is not None:
                raw_targets[k] = block[r]
                filled[k] = True
    missing = [target_idx[k] for k in np.flatnonzero(~filled)]
    if missing:
        rows = rolling_spearman_pairs(values, missing, window, min_obs)
        for p, row in zip(missing, rows):
            raw_targets[target_pos[p]] = row

    sd = cs.sd
    usable = (cs.n >= floor) & (sd > MIN_SPREAD)
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = (raw_targets - cs.mean) / sd
    sc[:, ~usable] = np.nan
    meta = {
        "metric": metric,
        "window": window,
        "min_obs": min_obs,
        "ecology_pairs": int(len(eco_idx)),
        "subsample": subsample,
        "subsample_seed": seed if subsample is not None else None,
        "cross_section_floor": floor,
        "sd": "population",
    }
    return CorrelationPanel(
        pairs=target_keys,
        calendar=panel.calendar,
        raw=raw_targets,
        sc=sc,
        cross_mean=np.where(cs.n > 0, cs.mean, np.nan),
        cross_sd=sd,
        cross_n=cs.n,
        metadata=meta,
    )


def _rolling_block(cache: _AssetWindows, chunk, min_obs, threads):
    block = np.empty((len(chunk), cache.values.shape[1]))
    if threads <= 1:
        for r, (i, j) in enumerate(chunk):
            block[r] = _pair_rolling(cache, i, j, min_obs)
        return block
    for a in sorted({a for p in chunk for a in p}):
        cache.get(a)

    def work(r):
        i, j = chunk[r]
        block[r] = _pair_rolling(cache, i, j, min_obs)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(len(chunk))))
    return block
