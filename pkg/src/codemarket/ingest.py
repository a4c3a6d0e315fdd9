"""Developer event logs and market tables: parsing, filtering, reconciliation.

File formats
------------
Event log
    One JSON object per line with ``developer``, ``project``, ``timestamp``
    (RFC-3339; naive values are read as UTC) and ``kind``.
Market table
    CSV with header ``asset,date,price,volume,market_cap[,high,low]``; an
    empty cell is a missing value.
Project mapping
    CSV with header ``project,asset``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

PUSH = "Push"
MERGED_PULL_REQUEST = "MergedPullRequest"
CORE_KINDS = frozenset({PUSH, MERGED_PULL_REQUEST})

_KIND_ALIASES = {
    "push": PUSH,
    "pushevent": PUSH,
    "mergedpullrequest": MERGED_PULL_REQUEST,
    "mergedpullrequestevent": MERGED_PULL_REQUEST,
    "pullrequestevent:merged": MERGED_PULL_REQUEST,
}

METRICS = ("price", "volume", "market_cap", "high", "low")
MAX_MALFORMED_FRACTION = 0.5


class IngestError(ValueError):
    """Base class for data problems found while ingesting."""


class EventFormatError(IngestError):
    pass


class MarketFormatError(IngestError):
    pass


class EmptyOverlapError(IngestError):
    pass


class DatasetError(IngestError):
    pass


def normalize_kind(kind: str) -> str:
    """Map GitHub Archive style names onto the two core kinds; keep others verbatim."""
    return _KIND_ALIASES.get(kind.strip().lower(), kind.strip())


def parse_timestamp(value: str) -> datetime:
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, order=True)
class EventRecord:
    timestamp: datetime
    developer: str
    project: str
    kind: str

    @property
    def day(self) -> np.datetime64:
        return np.datetime64(self.timestamp.date(), "D")

    def to_json(self) -> str:
        return json.dumps(
            {"developer": self.developer, "project": self.project,
             "timestamp": format_timestamp(self.timestamp), "kind": self.kind},
            sort_keys=True,
        )


@dataclass
class DatasetConfig:
    min_avg_volume: float = 1e5
    discrepancy_ratio: float = 5.0
    bot_substring: str = "bot"
    bot_allowlist: frozenset[str] = frozenset()
    allowed_kinds: frozenset[str] = CORE_KINDS
    study_start: date | None = None
    study_end: date | None = None

    def __post_init__(self):
        if not self.min_avg_volume > 0:
            raise ValueError("min_avg_volume must be positive")
        if not self.discrepancy_ratio > 0:
            raise ValueError("discrepancy_ratio must be positive")
        self.allowed_kinds = frozenset(normalize_kind(k) for k in self.allowed_kinds)
        self.bot_allowlist = frozenset(self.bot_allowlist)

    def to_record(self) -> dict:
        return {
            "min_avg_volume": self.min_avg_volume,
            "discrepancy_ratio": self.discrepancy_ratio,
            "bot_substring": self.bot_substring,
            "bot_allowlist": sorted(self.bot_allowlist),
            "allowed_kinds": sorted(self.allowed_kinds),
            "study_start": self.study_start.isoformat() if self.study_start else None,
            "study_end": self.study_end.isoformat() if self.study_end else None,
        }


@dataclass
class ParseResult:
    records: list[EventRecord]
    n_lines: int
    n_malformed: int
    n_out_of_window: int = 0
    malformed_lines: list[int] = field(default_factory=list)


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), True
    return source, False


def parse_event_log(source, config: DatasetConfig | None = None) -> ParseResult:
    """Parse a line-delimited JSON event log.

    Malformed lines are skipped and counted. More than half of the non-blank
    lines being malformed raises :class:`EventFormatError`. Events outside
    the configured study window are dropped and counted separately.
    """
    config = config or DatasetConfig()
    stream, owned = _open_text(source)
    records: list[EventRecord] = []
    bad: list[int] = []
    n_lines = out_of_window = 0
    try:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                obj = json.loads(line)
                dev = str(obj["developer"]).strip()
                proj = str(obj["project"]).strip()
                ts = parse_timestamp(str(obj["timestamp"]))
                kind = normalize_kind(str(obj["kind"]))
                if not dev or not proj or not kind:
                    raise ValueError("empty field")
            except (ValueError, KeyError, TypeError, AttributeError):
                bad.append(lineno)
                continue
            d = ts.date()
            if (config.study_start and d < config.study_start) or (config.study_end and d > config.study_end):
                out_of_window += 1
                continue
            records.append(EventRecord(ts, dev, proj, kind))
    finally:
        if owned:
            stream.close()
    if n_lines and len(bad) > MAX_MALFORMED_FRACTION * n_lines:
        raise EventFormatError(f"{len(bad)} of {n_lines} event lines are malformed")
    if bad:
        log.warning("skipped %d malformed event lines (first at line %d)", len(bad), bad[0])
    return ParseResult(records, n_lines, len(bad), out_of_window, bad[:100])


def write_event_log(records: Iterable[EventRecord], target) -> None:
    stream, owned = (open(target, "w", encoding="utf-8"), True) if isinstance(target, (str, os.PathLike)) else (target, False)
    try:
        for r in records:
            stream.write(r.to_json() + "\n")
    finally:
        if owned:
            stream.close()


def is_bot(developer: str, substring: str = "bot", allowlist: Iterable[str] = ()) -> bool:
    return developer not in allowlist and substring.lower() in developer.lower()


def filter_events(events: Iterable[EventRecord], config: DatasetConfig | None = None) -> list[EventRecord]:
    """Keep core-kind events by non-bot developers, preserving order."""
    config = config or DatasetConfig()
    return [
        e for e in events
        if e.kind in config.allowed_kinds
        and not is_bot(e.developer, config.bot_substring, config.bot_allowlist)
    ]


@dataclass
class AssetPanel:
    """Dense (asset x day) grids of market metrics; NaN marks missing."""

    assets: tuple[str, ...]
    start: np.datetime64
    values: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.assets = tuple(self.assets)
        self.start = np.datetime64(self.start, "D")
        if len(set(self.assets)) != len(self.assets):
            raise MarketFormatError("duplicate asset ids in panel")
        shapes = {v.shape for v in self.values.values()}
        if len(shapes) > 1:
            raise MarketFormatError(f"metric grids differ in shape: {shapes}")
        n_days = next(iter(shapes))[1] if shapes else 0
        for m in METRICS:
            if m not in self.values:
                self.values[m] = np.full((len(self.assets), n_days), np.nan)
        self._index = {a: k for k, a in enumerate(self.assets)}

    @property
    def n_days(self) -> int:
        return self.values["price"].shape[1]

    @property
    def calendar(self) -> np.ndarray:
        return self.start + np.arange(self.n_days)

    @property
    def end(self) -> np.datetime64:
        return self.start + (self.n_days - 1)

    def index(self, asset: str) -> int:
        return self._index[asset]

    def __contains__(self, asset: str) -> bool:
        return asset in self._index

    def day_index(self, day) -> int:
        return int((np.datetime64(day, "D") - self.start).astype(int))

    def series(self, asset: str, metric: str) -> np.ndarray:
        return self.values[metric][self._index[asset]]

    def subset(self, assets: Sequence[str]) -> "AssetPanel":
        rows = [self._index[a] for a in assets]
        return AssetPanel(tuple(assets), self.start, {m: v[rows].copy() for m, v in self.values.items()}, dict(self.meta))

    def first_observation(self, metric: str = "price") -> dict[str, np.datetime64 | None]:
        """First day with a non-missing value, per asset."""
        ok = ~np.isnan(self.values[metric])
        out = {}
        for a, row in zip(self.assets, ok):
            idx = np.flatnonzero(row)
            out[a] = self.start + int(idx[0]) if idx.size else None
        return out

    def to_frame(self) -> pd.DataFrame:
        n_a, n_d = len(self.assets), self.n_days
        frame = pd.DataFrame({
            "asset": np.repeat(np.array(self.assets, dtype=object), n_d),
            "date": np.tile(self.calendar.astype(str), n_a),
        })
        for m in METRICS:
            frame[m] = self.values[m].ravel()
        present = ~frame[list(METRICS)].isna().all(axis=1)
        return frame[present].reset_index(drop=True)


def read_market_table(source) -> AssetPanel:
    """Read a market CSV into a dense panel spanning its first to last date."""
    try:
        frame = pd.read_csv(source, dtype={"asset": str}, keep_default_na=False, na_values=[""],
                            float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MarketFormatError(f"cannot parse market table: {exc}") from exc
    required = {"asset", "date", "price", "volume", "market_cap"}
    missing = required - set(frame.columns)
    if missing:
        raise MarketFormatError(f"market table lacks columns {sorted(missing)}")
    if frame.empty:
        raise MarketFormatError("market table has no rows")
    try:
        days = pd.to_datetime(frame["date"], utc=False, format="mixed").dt.tz_localize(None).values.astype("datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise MarketFormatError(f"unparseable date: {exc}") from exc
    frame = frame.assign(date=days)
    dups = frame.duplicated(["asset", "date"])
    if dups.any():
        first = frame.loc[dups].iloc[0]
        raise MarketFormatError(f"duplicate observation for {first['asset']} on {first['date']}")
    assets = tuple(dict.fromkeys(frame["asset"]))
    start, end = days.min(), days.max()
    n_days = int((end - start).astype(int)) + 1
    rows = frame["asset"].map({a: k for k, a in enumerate(assets)}).to_numpy()
    cols = (days - start).astype(int)
    values = {}
    for m in METRICS:
        grid = np.full((len(assets), n_days), np.nan)
        if m in frame.columns:
            col = pd.to_numeric(frame[m], errors="coerce").to_numpy(dtype=float)
            col[col < 0] = np.nan
            grid[rows, cols] = col
        values[m] = grid
    inverted = values["high"] < values["low"]
    if inverted.any():
        log.warning("%d observations with high < low set to missing", int(inverted.sum()))
        values["high"][inverted] = np.nan
        values["low"][inverted] = np.nan
    return AssetPanel(assets, start, values)


def write_market_table(panel: AssetPanel, target) -> None:
    frame = panel.to_frame()
    frame.to_csv(target, index=False, na_rep="", float_format="%.17g", lineterminator="\n")


def read_mapping(source) -> dict[str, str]:
    stream, owned = _open_text(source)
    try:
        reader = csv.DictReader(stream)
        if reader.fieldnames is None or not {"project", "asset"} <= set(reader.fieldnames):
            raise IngestError("mapping needs a 'project,asset' header")
        return {row["project"].strip(): row["asset"].strip() for row in reader if row["project"].strip()}
    finally:
        if owned:
            stream.close()


def write_mapping(mapping: Mapping[str, str], target) -> None:
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["project", "asset"])
        for p in sorted(mapping):
            w.writerow([p, mapping[p]])


def discrepancy_mask(a: np.ndarray, b: np.ndarray, ratio: float) -> np.ndarray:
    """True where both values exist and |a-b| / min(a,b) exceeds ``ratio``."""
    both = ~(np.isnan(a) | np.isnan(b))
    lo = np.fmin(a, b)
    diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rel = np.where(lo > 0, diff / np.where(lo > 0, lo, 1.0), np.where(diff > 0, np.inf, 0.0))
    return both & (rel > ratio)


def mask_zero_volume(panel: AssetPanel) -> AssetPanel:
    """Treat zero-volume (inactive) days as missing volume."""
    values = {m: v.copy() for m, v in panel.values.items()}
    zero = values["volume"] == 0
    values["volume"][zero] = np.nan
    meta = dict(panel.meta, zero_volume_masked=int(zero.sum()))
    return AssetPanel(panel.assets, panel.start, values, meta)


def reconcile_sources(primary: AssetPanel, secondary: AssetPanel, ratio: float = 5.0) -> AssetPanel:
    """Merge two market sources cell by cell.

    Cells where both sources report and disagree by more than ``ratio``
    (relative to the smaller value) become missing; otherwise the primary
    value wins and the secondary fills gaps. Zero volume becomes missing.
    """
    lo = max(primary.start, secondary.start)
    hi = min(primary.end, secondary.end)
    if lo > hi:
        raise EmptyOverlapError("market sources share no calendar days")
    start = min(primary.start, secondary.start)
    end = max(primary.end, secondary.end)
    n_days = int((end - start).astype(int)) + 1
    assets = tuple(dict.fromkeys(primary.assets + secondary.assets))

    def aligned(panel: AssetPanel, metric: str) -> np.ndarray:
        grid = np.full((len(assets), n_days), np.nan)
        off = int((panel.start - start).astype(int))
        rows = [assets.index(a) for a in panel.assets]
        grid[rows, off:off + panel.n_days] = panel.values[metric]
        return grid

    values = {}
    discarded = {}
    for m in METRICS:
        a, b = aligned(primary, m), aligned(secondary, m)
        bad = discrepancy_mask(a, b, ratio)
        merged = np.where(np.isnan(a), b, a)
        merged[bad] = np.nan
        values[m] = merged
        discarded[m] = int(bad.sum())
    zero = values["volume"] == 0
    values["volume"][zero] = np.nan
    meta = {"discrepancy_ratio": ratio, "discarded": discarded, "zero_volume_masked": int(zero.sum())}
    return AssetPanel(assets, start, values, meta)


def lifetime_average_volume(panel: AssetPanel) -> dict[str, float]:
    vol = panel.values["volume"]
    valid = ~np.isnan(vol) & (vol > 0)
    counts = valid.sum(axis=1)
    sums = np.where(valid, vol, 0.0).sum(axis=1)
    return {a: (s / c if c else float("nan")) for a, s, c in zip(panel.assets, sums, counts)}


def eligible_assets(panel: AssetPanel, min_avg_volume: float = 1e5) -> list[str]:
    """Assets whose mean volume over non-missing days reaches the threshold."""
    out = []
    for asset, avg in lifetime_average_volume(panel).items():
        if np.isnan(avg):
            log.warning("asset %s has no volume observations; excluded", asset)
        elif avg >= min_avg_volume:
            out.append(asset)
    return out


@dataclass
class Dataset:
    events: list[EventRecord]
    panel: AssetPanel
    project_to_asset: dict[str, str]
    unmapped: dict[str, int] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def network_events(self) -> list[EventRecord]:
        """Events on projects mapped to an asset of the panel."""
        return [e for e in self.events if e.project not in self.unmapped]

    def asset_of(self, project: str) -> str:
        return self.project_to_asset[project]


def build_dataset(
    events: Iterable[EventRecord],
    panel: AssetPanel,
    mapping: Mapping[str, str],
    config: DatasetConfig | None = None,
) -> Dataset:
    config = config or DatasetConfig()
    kept = filter_events(events, config)
    kept.sort(key=lambda e: e.timestamp)
    eligible = eligible_assets(panel, config.min_avg_volume)
    if not eligible:
        raise DatasetError("no asset meets the average-volume threshold")
    restricted = panel.subset(eligible)
    eligible_set = set(eligible)
    counts = Counter(e.project for e in kept)
    unmapped = {p: n for p, n in counts.items() if mapping.get(p) not in eligible_set}
    used_mapping = {p: a for p, a in mapping.items() if a in eligible_set}
    manifest = {
        "config": config.to_record(),
        "n_events": len(kept),
        "n_network_events": len(kept) - sum(unmapped.values()),
        "n_developers": len({e.developer for e in kept}),
        "n_projects": len(counts),
        "n_assets_in_panel": len(panel.assets),
        "n_eligible_assets": len(eligible),
        "n_mapped_projects": len(set(counts) - set(unmapped)),
        "unmapped_projects": dict(sorted(unmapped.items())),
        "calendar": [str(restricted.start), str(restricted.end)],
        "pull_request_timestamp": "merge event time",
    }
    return Dataset(kept, restricted, used_mapping, unmapped, manifest)


def write_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_event_log(ds.events, d / "events.jsonl")
    write_market_table(ds.panel, d / "market.csv")
    write_mapping(ds.project_to_asset, d / "mapping.csv")
    with open(d / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(ds.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def read_dataset(directory, config: DatasetConfig | None = None) -> Dataset:
    """Reload a dataset directory written by :func:`write_dataset`."""
    d = Path(directory)
    parsed = parse_event_log(d / "events.jsonl", config)
    panel = read_market_table(d / "market.csv")
    mapping = read_mapping(d / "mapping.csv")
    return build_dataset(parsed.records, panel, mapping, config)
