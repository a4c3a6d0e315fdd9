"""Synthetic ground truth: market panels with planted correlation regimes and
developer event streams with scheduled bridges.

Everything here is a pure function of its arguments and seed. Generated
objects use the same layouts and file formats that :mod:`codemarket.ingest`
reads, so a scenario can be written to disk and pushed through the pipeline.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import (
    MERGED_PULL_REQUEST,
    PUSH,
    AssetPanel,
    EventRecord,
    format_timestamp,
    write_event_log,
    write_mapping,
    write_market_table,
)

DEFAULT_START = "2016-01-01"
_SECONDS_PER_DAY = 86_400


def pearson_for_spearman(rho_s: float) -> float:
    """Latent Pearson correlation of a bivariate normal with Spearman ``rho_s``."""
    if not -1 <= rho_s <= 1:
        raise ValueError("Spearman correlation must lie in [-1, 1]")
    return 2 * math.sin(math.pi * rho_s / 6)


def spearman_for_pearson(rho: float) -> float:
    return 6 / math.pi * math.asin(rho / 2)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _asset_ids(n: int, prefix: str) -> tuple[str, ...]:
    width = max(3, len(str(n - 1)))
    return tuple(f"{prefix}{k:0{width}d}" for k in range(n))


def _market_from_returns(returns: np.ndarray, supply: np.ndarray, vol: float, rng) -> dict[str, np.ndarray]:
    """Price, cap, high and low grids implied by a return grid."""
    price = 100.0 * np.cumprod(1.0 + returns, axis=1)
    spread = np.abs(rng.standard_normal(returns.shape)) * vol / 2
    cap_noise = np.exp(0.01 * rng.standard_normal(returns.shape))
    return {
        "price": price,
        "market_cap": price * supply[:, None] * cap_noise,
        "high": price * (1 + spread),
        "low": price / (1 + spread),
    }


def gen_panel(
    n_assets: int,
    n_days: int,
    base_rho: float = 0.0,
    vol: float = 0.04,
    seed: int = 0,
    start=DEFAULT_START,
    missing_rate: float = 0.0,
    listing_offsets: Sequence[int] | None = None,
    mean_volume: float = 1e6,
    prefix: str = "A",
) -> tuple[AssetPanel, dict]:
    """One-factor Gaussian market panel.

    Every pair of assets has latent return correlation ``base_rho``. Before
    an asset's listing offset all of its cells are missing; after it,
    ``missing_rate`` of the cells are blanked at random.
    """
    if n_assets < 2 or n_days < 2:
        raise ValueError("need at least two assets and two days")
    if not 0 <= base_rho < 1:
        raise ValueError("base_rho must lie in [0, 1)")
    if not 0 <= missing_rate < 1:
        raise ValueError("missing_rate must lie in [0, 1)")
    if vol <= 0:
        raise ValueError("vol must be positive")
    assets = _asset_ids(n_assets, prefix)
    rng = _rng(seed, 1)
    factor = rng.standard_normal(n_days)
    idio = rng.standard_normal((n_assets, n_days))
    returns = vol * (math.sqrt(base_rho) * factor + math.sqrt(1 - base_rho) * idio)
    supply = np.exp(rng.normal(math.log(1e7), 1.0, n_assets))
    values = _market_from_returns(returns, supply, vol, rng)
    values["volume"] = np.exp(rng.normal(math.log(mean_volume) - 0.125, 0.5, (n_assets, n_days)))

    mask = rng.random((n_assets, n_days)) < missing_rate
    offsets = np.zeros(n_assets, dtype=int) if listing_offsets is None else np.asarray(listing_offsets, dtype=int)
    if offsets.shape != (n_assets,) or (offsets < 0).any() or (offsets >= n_days).any():
        raise ValueError("listing_offsets must give one in-calendar offset per asset")
    mask |= np.arange(n_days)[None, :] < offsets[:, None]
    for m in values:
        values[m][mask] = np.nan

    manifest = {
        "generator": "gen_panel",
        "n_assets": n_assets,
        "n_days": n_days,
        "base_rho": base_rho,
        "vol": vol,
        "seed": seed,
        "start": str(np.datetime64(start, "D")),
        "missing_rate": missing_rate,
        "listing_offsets": offsets.tolist(),
        "mean_volume": mean_volume,
        "prefix": prefix,
        "planted": [],
    }
    panel = AssetPanel(assets, np.datetime64(start, "D"), values, {"synthgen": manifest})
    return panel, manifest


def plant_synchronization(
    panel: AssetPanel,
    pair: tuple[str, str],
    switch_day,
    rho_before: float,
    rho_after: float,
    seed: int,
    vol: float | None = None,
) -> tuple[AssetPanel, dict]:
    """Regenerate one pair's returns with a correlation regime switch.

    The two assets get fresh bivariate-normal returns with Pearson
    correlation ``rho_before`` on days before ``switch_day`` and
    ``rho_after`` from it onward. Missing cells stay missing and every other
    asset is left untouched. Correlations here are latent Pearson values;
    use :func:`pearson_for_spearman` to target Spearman levels.
    """
    a, b = pair
    if a == b:
        raise ValueError("a planted pair needs two distinct assets")
    for rho in (rho_before, rho_after):
        if not -1 <= rho <= 1:
            raise ValueError("correlations must lie in [-1, 1]")
    vol = vol if vol is not None else panel.meta.get("synthgen", {}).get("vol", 0.04)
    switch = panel.day_index(switch_day) if not isinstance(switch_day, (int, np.integer)) else int(switch_day)
    if not 0 <= switch <= panel.n_days:
        raise ValueError("switch day outside the calendar")
    rows = [panel.index(a), panel.index(b)]
    rng = _rng(seed, 2)
    n = panel.n_days
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    rho = np.where(np.arange(n) < switch, rho_before, rho_after)
    r1 = vol * z1
    r2 = vol * (rho * z1 + np.sqrt(1 - rho**2) * z2)
    returns = np.vstack([r1, r2])

    values = {m: v.copy() for m, v in panel.values.items()}
    old_price = values["price"][rows]
    with np.errstate(invalid="ignore"):
        supply = np.nanmedian(values["market_cap"][rows] / old_price, axis=1)
    supply = np.where(np.isfinite(supply), supply, 1e7)
    fresh = _market_from_returns(returns, supply, vol, rng)
    missing = np.isnan(old_price)
    for m, grid in fresh.items():
        grid[missing] = np.nan
        values[m][rows] = grid

    entry = {
        "pair": sorted(pair),
        "switch_index": switch,
        "switch_day": str(panel.start + switch),
        "rho_before": rho_before,
        "rho_after": rho_after,
        "seed": seed,
        "vol": vol,
    }
    meta = json.loads(json.dumps(panel.meta))
    meta.setdefault("synthgen", {}).setdefault("planted", []).append(entry)
    return AssetPanel(panel.assets, panel.start, values, meta), entry


@dataclass(frozen=True)
class Bridge:
    developer: str
    project_i: str
    project_j: str
    day: np.datetime64


@dataclass
class EventStream:
    events: list[EventRecord]
    projects: tuple[str, ...]
    developers: tuple[str, ...]
    manifest: dict


def _timestamp(day: np.datetime64, seconds: int) -> datetime:
    base = datetime.fromisoformat(str(day)).replace(tzinfo=timezone.utc)
    return base + timedelta(seconds=int(seconds))


def _truth_connections(first_touch: dict[str, dict[str, datetime]]) -> list[dict]:
    """Earliest common-developer time per project pair from generator bookkeeping."""
    best: dict[tuple[str, str], tuple[datetime, str]] = {}
    for dev in sorted(first_touch):
        touched = first_touch[dev]
        names = sorted(touched)
        for x in range(len(names)):
            for y in range(x + 1, len(names)):
                key = (names[x], names[y])
                when = max(touched[names[x]], touched[names[y]])
                if key not in best or (when, dev) < best[key]:
                    best[key] = (when, dev)
    rows = [
        {"pair": list(k), "timestamp": format_timestamp(t), "day": str(np.datetime64(t.date(), "D")), "developer": d}
        for k, (t, d) in best.items()
    ]
    rows.sort(key=lambda r: (r["timestamp"], r["pair"]))
    return rows


def gen_event_stream(
    n_devs: int,
    n_projects: int,
    activity_rate: float,
    bridge_schedule: Sequence[Bridge | tuple],
    seed: int,
    start=DEFAULT_START,
    n_days: int = 1200,
    projects: Sequence[str] | None = None,
    merged_pr_share: float = 0.2,
    n_bots: int = 0,
    noise_events: int = 0,
    lead_days: int = 30,
    follow_up_rate: float = 0.05,
) -> EventStream:
    """Developer activity with exactly the scheduled cross-project bridges.

    Home developers edit a single project as a Poisson process with
    ``activity_rate`` events per day. For each bridge the developer edits
    ``project_i`` on some day strictly before the bridge day and first edits
    ``project_j`` on the bridge day. Bots (names containing "bot") and
    non-core event kinds are optional noise that the ingest filters remove;
    they never enter the ground truth.
    """
    if n_projects < 1 or n_devs < 0:
        raise ValueError("need at least one project")
    projects = tuple(projects) if projects is not None else tuple(f"proj{k:04d}" for k in range(n_projects))
    if len(projects) != n_projects:
        raise ValueError("projects must list n_projects names")
    start = np.datetime64(start, "D")
    rng = _rng(seed, 3)
    kinds = np.array([PUSH, MERGED_PULL_REQUEST])
    events: list[EventRecord] = []
    first_touch: dict[str, dict[str, datetime]] = {}

    def emit(dev: str, project: str, ts: datetime, kind: str, core: bool = True) -> None:
        events.append(EventRecord(ts, dev, project, kind))
        if core:
            seen = first_touch.setdefault(dev, {})
            if project not in seen or ts < seen[project]:
                seen[project] = ts

    def core_kind() -> str:
        return str(kinds[int(rng.random() < merged_pr_share)])

    horizon = n_days * _SECONDS_PER_DAY
    home_devs = tuple(f"dev{k:05d}" for k in range(n_devs))
    for k, dev in enumerate(home_devs):
        project = projects[k % n_projects]
        n_ev = max(1, rng.poisson(activity_rate * n_days))
        for s in np.sort(rng.integers(0, horizon, n_ev)):
            emit(dev, project, _timestamp(start, s), core_kind())

    schedule = [b if isinstance(b, Bridge) else Bridge(b[0], b[1], b[2], np.datetime64(b[3], "D")) for b in bridge_schedule]
    for b in schedule:
        if b.project_i == b.project_j:
            raise ValueError("a bridge joins two distinct projects")
        if b.project_i not in projects or b.project_j not in projects:
            raise ValueError(f"bridge references unknown project: {b}")
        idx = int((b.day - start).astype(int))
        if not 1 <= idx < n_days:
            raise ValueError(f"bridge day {b.day} leaves no room for an earlier edit")
        lead = int(rng.integers(1, min(lead_days, idx) + 1))
        prior = first_touch.get(b.developer, {})
        if b.project_j in prior and prior[b.project_j].date() < b.day.astype(object):
            raise ValueError(f"{b.developer} already edits {b.project_j} before the bridge day")
        emit(b.developer, b.project_i, _timestamp(b.day - lead, rng.integers(0, _SECONDS_PER_DAY)), core_kind())
        bridge_s = int(rng.integers(0, _SECONDS_PER_DAY))
        emit(b.developer, b.project_j, _timestamp(b.day, bridge_s), core_kind())
        for _ in range(rng.poisson(follow_up_rate * (n_days - idx))):
            s = idx * _SECONDS_PER_DAY + bridge_s + 1 + int(rng.integers(0, horizon - idx * _SECONDS_PER_DAY - bridge_s))
            emit(b.developer, projects[projects.index(b.project_j if rng.random() < 0.5 else b.project_i)],
                 _timestamp(start, min(s, horizon - 1)), core_kind())

    for k in range(n_bots):
        bot = f"build-bot-{k}"
        for p in rng.choice(n_projects, size=min(n_projects, 5), replace=False):
            emit(bot, projects[int(p)], _timestamp(start, rng.integers(0, horizon)), PUSH, core=False)
    everyone = home_devs + tuple(sorted({b.developer for b in schedule}))
    for _ in range(noise_events):
        if not everyone:
            break
        dev = everyone[int(rng.integers(len(everyone)))]
        emit(dev, projects[int(rng.integers(n_projects))], _timestamp(start, rng.integers(0, horizon)), "IssueComment", core=False)

    events.sort()
    n_core = sum(1 for e in events if e.kind in (PUSH, MERGED_PULL_REQUEST) and not e.developer.startswith("build-bot-"))
    developers = tuple(sorted({e.developer for e in events}))
    manifest = {
        "generator": "gen_event_stream",
        "n_devs": n_devs,
        "n_projects": n_projects,
        "activity_rate": activity_rate,
        "seed": seed,
        "start": str(start),
        "n_days": n_days,
        "merged_pr_share": merged_pr_share,
        "n_bots": n_bots,
        "noise_events": noise_events,
        "schedule": [{"developer": b.developer, "project_i": b.project_i, "project_j": b.project_j, "day": str(b.day)} for b in schedule],
        "n_events": len(events),
        "n_core_events": n_core,
        "membership": sorted([d, p] for d, ps in first_touch.items() for p in ps),
        "connections": _truth_connections(first_touch),
    }
    return EventStream(events, projects, developers, manifest)


@dataclass
class Scenario:
    panel: AssetPanel
    events: list[EventRecord]
    mapping: dict[str, str]
    schedule: list[Bridge]
    manifest: dict = field(default_factory=dict)

    @property
    def planted_pairs(self) -> list[tuple[str, str]]:
        return [tuple(sorted((self.mapping[b.project_i], self.mapping[b.project_j]))) for b in self.schedule]


@dataclass
class ScenarioConfig:
    n_assets: int = 100
    n_pairs: int = 50
    n_days: int = 1200
    base_rho: float = 0.0
    vol: float = 0.04
    spearman_before: float = 0.2
    spearman_after: float = 0.6
    bridge_first: int = 300
    bridge_last: int = 900
    devs_per_project: int = 2
    activity_rate: float = 0.05
    missing_rate: float = 0.0
    n_bots: int = 0
    noise_events: int = 0
    start: str = DEFAULT_START
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        """Read flat ``key = value`` lines (an optional section header is allowed)."""
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_mapping(parse_flat_config(text))

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        out = cls()
        for key, raw in values.items():
            if not hasattr(out, key):
                raise ValueError(f"unknown scenario key: {key}")
            current = getattr(out, key)
            setattr(out, key, type(current)(raw))
        return out

    def to_record(self) -> dict:
        return dict(self.__dict__)


def parse_flat_config(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    body = text if text.lstrip().startswith("[") else "[scenario]\n" + text
    parser.read_string(body)
    out: dict[str, str] = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def planted_scenario(config: ScenarioConfig | None = None) -> Scenario:
    """Ecology of independent assets with disjoint planted pairs.

    Each planted pair is bridged by its own developer on a day spread evenly
    over ``[bridge_first, bridge_last]``; the pair's returns switch from the
    ``spearman_before`` to the ``spearman_after`` rank-correlation level on
    that day. Projects map one-to-one onto assets.
    """
    c = config or ScenarioConfig()
    if 2 * c.n_pairs > c.n_assets:
        raise ValueError("planted pairs must be disjoint: need n_assets >= 2 * n_pairs")
    if not 0 < c.bridge_first <= c.bridge_last < c.n_days:
        raise ValueError("bridge days must fall inside the calendar")
    panel, panel_manifest = gen_panel(c.n_assets, c.n_days, c.base_rho, c.vol, c.seed, c.start, c.missing_rate)
    projects = tuple(f"proj-{a}" for a in panel.assets)
    mapping = dict(zip(projects, panel.assets))
    order = _rng(c.seed, 4).permutation(c.n_assets)
    if c.n_pairs > 1:
        offsets = np.round(np.linspace(c.bridge_first, c.bridge_last, c.n_pairs)).astype(int)
    else:
        offsets = np.array([c.bridge_first])
    schedule = []
    planted = []
    rb, ra = pearson_for_spearman(c.spearman_before), pearson_for_spearman(c.spearman_after)
    for k in range(c.n_pairs):
        i, j = int(order[2 * k]), int(order[2 * k + 1])
        day = panel.start + int(offsets[k])
        schedule.append(Bridge(f"bridge{k:04d}", projects[i], projects[j], day))
        panel, entry = plant_synchronization(panel, (panel.assets[i], panel.assets[j]), int(offsets[k]), rb, ra,
                                             seed=c.seed * 100_003 + k, vol=c.vol)
        planted.append(entry)
    stream = gen_event_stream(
        c.devs_per_project * c.n_assets, c.n_assets, c.activity_rate, schedule, c.seed,
        start=c.start, n_days=c.n_days, projects=projects, n_bots=c.n_bots, noise_events=c.noise_events,
    )
    manifest = {
        "config": c.to_record(),
        "latent_pearson_before": rb,
        "latent_pearson_after": ra,
        "panel": {k: v for k, v in panel_manifest.items() if k != "planted"},
        "planted": planted,
        "events": stream.manifest,
    }
    return Scenario(panel, stream.events, mapping, schedule, manifest)


def write_scenario(scenario: Scenario, directory) -> Path:
    """Write events.jsonl, market.csv, mapping.csv and manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_event_log(scenario.events, d / "events.jsonl")
    write_market_table(scenario.panel, d / "market.csv")
    write_mapping(scenario.mapping, d / "mapping.csv")
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(scenario.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d
