"""Command-line entry point: ``codemarket <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible analysis.
Every run writes ``run_manifest.json`` next to its outputs. The manifest
contains no wall-clock data, so identical inputs, config and seed give
byte-identical output directories.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import conet, eventstudy as es, ingest, nullmodels, series, synthgen
from .stats import DEFAULT_ALPHA, gaussian_kde, mcmc_curve_fit, run_battery, welch_t

log = logging.getLogger("codemarket")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3
CURVE_KDE_BANDWIDTH = 0.39
COMPOSITION_KDE_BANDWIDTH = 0.36
KDE_POINTS = 401
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class InfeasibleError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# defaults applied after config-file values; flags left unset read as None
DEFAULTS = {
    "seed": None,
    "window_days": series.DEFAULT_WINDOW,
    "min_obs": None,
    "before": list(es.BEFORE_WINDOW),
    "after": list(es.AFTER_WINDOW),
    "d_range": list(es.DEFAULT_D_RANGE),
    "bootstrap_n": 10_000,
    "null_model": "rt",
    "null_n": 10_000,
    "exclude_asset": [],
    "one_link_only": False,
    "threads": 1,
    "metric": "return",
    "ecology_subsample": None,
    "min_avg_volume": 1e5,
    "discrepancy_ratio": 5.0,
    "keep_horizon": es.KEEP_HORIZON_DAYS,
    "mcmc_steps": 20_000,
    "link_bin_days": 30,
    "scenario": None,
}

_INT_KEYS = {"seed", "window_days", "min_obs", "bootstrap_n", "null_n", "threads", "ecology_subsample",
             "keep_horizon", "mcmc_steps", "link_bin_days"}
_FLOAT_KEYS = {"min_avg_volume", "discrepancy_ratio"}
_PAIR_KEYS = {"before", "after", "d_range"}
_BOOL_KEYS = {"one_link_only"}
_LIST_KEYS = {"exclude_asset"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_KEYS:
        return None if raw.lower() in ("", "none") else int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _PAIR_KEYS:
        parts = raw.replace(",", " ").replace(":", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{key} needs two integers")
        return [int(parts[0]), int(parts[1])]
    if key in _BOOL_KEYS:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key} must be a boolean")
        return raw.lower() in ("true", "1", "yes")
    if key in _LIST_KEYS:
        return [p for p in raw.replace(",", " ").split() if p]
    return raw


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for key, raw in synthgen.parse_flat_config(text).items():
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key: {key}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError as exc:
            raise UsageError(f"bad config value for {key}: {exc}") from exc
    return out


def effective_settings(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Flags override the config file, which overrides built-in defaults."""
    config = load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if key in _LIST_KEYS:
            flag = flag or None
        if key in _BOOL_KEYS:
            flag = True if flag else None
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
        else:
            out[key] = DEFAULTS[key]
    return out


def _require_seed(settings: dict) -> int:
    if settings.get("seed") is None:
        raise UsageError("this analysis is randomized: pass --seed (or set seed in the config)")
    return int(settings["seed"])


def _versions() -> dict:
    import pandas
    import scipy
    return {
        "codemarket": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "python": platform.python_version(),
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.datetime64):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_manifest(out: Path, command: str, settings: dict, inputs: dict, decisions: Sequence[str]) -> None:
    outputs = {p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != MANIFEST_NAME}
    config = _jsonable(settings)
    config_hash = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    write_json(out / MANIFEST_NAME, {
        "command": command,
        "settings": config,
        "config_hash": config_hash,
        "seed": settings.get("seed"),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "input_hashes": {k: _sha256(Path(v)) for k, v in inputs.items() if Path(v).is_file()},
        "versions": _versions(),
        "decisions": list(decisions),
        "outputs": outputs,
    })


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- ingest ----

def cmd_ingest(args) -> int:
    s = effective_settings(args, ["min_avg_volume", "discrepancy_ratio"])
    config = ingest.DatasetConfig(min_avg_volume=s["min_avg_volume"], discrepancy_ratio=s["discrepancy_ratio"])
    parsed = ingest.parse_event_log(args.events, config)
    panel = ingest.read_market_table(args.market)
    if args.market_secondary:
        panel = ingest.reconcile_sources(panel, ingest.read_market_table(args.market_secondary), s["discrepancy_ratio"])
    else:
        panel = ingest.mask_zero_volume(panel)
    mapping = ingest.read_mapping(args.mapping)
    ds = ingest.build_dataset(parsed.records, panel, mapping, config)
    ds.manifest["n_lines"] = parsed.n_lines
    ds.manifest["n_malformed_lines"] = parsed.n_malformed
    ds.manifest["market_meta"] = panel.meta
    out = ingest.write_dataset(ds, args.out)
    inputs = {"events": args.events, "market": args.market, "mapping": args.mapping}
    if args.market_secondary:
        inputs["market_secondary"] = args.market_secondary
    write_manifest(out, "ingest", s, inputs, [
        "events limited to Push and MergedPullRequest kinds",
        "developers whose id contains 'bot' (case-insensitive) dropped",
        "merged pull requests timestamped at merge time",
        "assets kept when lifetime mean volume over non-missing days reaches min_avg_volume",
        "zero-volume days treated as missing",
    ])
    return EXIT_OK


# --------------------------------------------------------------- network ----

def _load_dataset(path) -> ingest.Dataset:
    return ingest.read_dataset(path)


def _asset_events(ds: ingest.Dataset, exclude: set[str]) -> list[ingest.EventRecord]:
    out = []
    for e in ds.network_events:
        asset = ds.project_to_asset.get(e.project)
        if asset is not None and asset not in exclude:
            out.append(ingest.EventRecord(e.timestamp, e.developer, asset, e.kind))
    return out


def _network_fits(graph: conet.ProjectGraph, connections, bin_days: int, n_steps: int, seed: int) -> dict:
    fits = {}
    hist = sorted(conet.degree_histogram(graph))
    if len(hist) >= 3:
        k = np.array([h[0] for h in hist], dtype=float)
        freq = np.array([h[1] for h in hist], dtype=float)
        fits["degree_power_law"] = mcmc_curve_fit("power_law", k, freq / freq.sum(), n_steps=n_steps,
                                                  seed=seed, keep_chain=False).to_record()
    links = conet.new_links_per_period(connections, bin_days)
    if len(links) >= 3:
        t = np.arange(len(links), dtype=float) * bin_days
        cumulative = np.cumsum([n for _, n in links]).astype(float)
        fits["link_growth_exponential"] = mcmc_curve_fit("exponential", t, cumulative, n_steps=n_steps,
                                                         seed=seed + 1, keep_chain=False).to_record()
    return fits


def cmd_network(args) -> int:
    s = effective_settings(args, ["seed", "exclude_asset", "mcmc_steps", "link_bin_days"])
    seed = _require_seed(s)
    ds = _load_dataset(args.dataset)
    exclude = set(s["exclude_asset"])
    events = _asset_events(ds, exclude)
    bip = conet.build_bipartite(events)
    graph = conet.project_graph(bip)
    nodes = set(ds.panel.assets) - exclude
    graph = conet.ProjectGraph(nodes | graph.nodes, graph.weights)
    connections = conet.detect_connections(events)
    out = _out_dir(args.out)

    conet.write_edge_list(graph, connections, out / "edges.csv")
    degrees = graph.degrees()
    write_csv(out / "degrees.csv", ["asset", "degree"], sorted(degrees.items(), key=lambda kv: (-kv[1], kv[0])))
    write_csv(out / "degree_histogram.csv", ["degree", "n_nodes"], conet.degree_histogram(graph))
    write_json(out / "connections.json", conet.connections_to_records(connections))
    write_csv(out / "new_links.csv", ["period_start", "new_links"], conet.new_links_per_period(connections, s["link_bin_days"]))
    summary = conet.multi_project_summary(ds.network_events)
    summary.pop("events_single")
    summary.pop("events_multi")
    components = conet.connected_components(graph)
    stats = {
        "n_nodes": len(graph.nodes),
        "n_links": graph.n_edges,
        "n_non_isolated": sum(1 for d in degrees.values() if d > 0),
        "component_sizes": components,
        "giant_component": components[0] if components else 0,
        "assortativity": conet.assortativity_coefficient(graph) if graph.n_edges else None,
        "degree_histogram": conet.degree_histogram(graph),
        "developer_connection_counts": conet.developer_connection_counts(connections),
        "activity_histogram": conet.activity_histogram(ds.network_events),
        "multi_project": summary,
        "one_link_only_pairs": len(conet.one_link_only(connections)),
        "fits": _network_fits(graph, connections, s["link_bin_days"], s["mcmc_steps"], seed),
    }
    write_json(out / "network_stats.json", stats)
    write_manifest(out, "network", s, {"dataset": args.dataset}, [
        "nodes are eligible assets; projects are relabelled by their asset",
        "edge weight counts shared developers",
        "component sizes exclude isolated nodes",
        "connection time is the earliest day a single developer has edited both assets",
    ])
    return EXIT_OK


# ------------------------------------------------------------ eventstudy ----

def _linked_connections(ds: ingest.Dataset, exclude: set[str], one_link: bool):
    cons = conet.map_connections(conet.detect_connections(ds.network_events), ds.project_to_asset)
    cons = [c for c in cons if not exclude & set(c.pair)]
    if one_link:
        cons = conet.one_link_only(cons)
    return cons


def _null_cohort(model: str, panel, assets, linked, n: int, seed: int) -> nullmodels.Cohort:
    pairs = [c.pair for c in linked]
    if model == "rt":
        return nullmodels.sample_rt(assets, pairs, [c.day for c in linked], n, seed)
    if model == "rta":
        return nullmodels.sample_rta(linked, panel, seed)
    if model == "orta":
        return nullmodels.sample_orta(linked, panel, seed)
    raise UsageError(f"unknown null model {model!r}")


def _curve_rows(curve: es.Curve, with_band: bool):
    for d, c, s, n, lo, hi in zip(curve.offsets, curve.center, curve.sd, curve.n, curve.lower, curve.upper):
        row = [int(d), c, s, int(n)]
        yield row + [lo, hi] if with_band else row


def _delta_rows(summaries):
    return ([s.pair_id, s.before, s.after, s.delta] for s in summaries)


def _kde_grid(*samples) -> np.ndarray:
    vals = np.concatenate([np.asarray(s, dtype=float) for s in samples if len(s)])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return np.linspace(-1, 1, KDE_POINTS)
    pad = 4 * CURVE_KDE_BANDWIDTH
    return np.linspace(vals.min() - pad, vals.max() + pad, KDE_POINTS)


def _density(samples, bandwidth, grid):
    v = np.asarray(samples, dtype=float)
    v = v[np.isfinite(v)]
    return gaussian_kde(v, bandwidth, grid) if v.size else np.full(grid.size, np.nan)


def _log_diff(values) -> list[float]:
    return [math.log10(v + 1.0) if v is not None and np.isfinite(v) else math.nan for v in values]


def cmd_eventstudy(args) -> int:
    s = effective_settings(args, ["seed", "window_days", "min_obs", "before", "after", "d_range", "bootstrap_n",
                                  "null_model", "null_n", "exclude_asset", "one_link_only", "threads", "metric",
                                  "ecology_subsample", "keep_horizon", "mcmc_steps"])
    seed = _require_seed(s)
    threads = max(1, int(s["threads"]))
    before, after, d_range = tuple(s["before"]), tuple(s["after"]), tuple(s["d_range"])
    for name, (lo, hi) in (("before", before), ("after", after), ("d_range", d_range)):
        if lo > hi:
            raise UsageError(f"--{name.replace('_', '-')} needs LO <= HI")
    ds = _load_dataset(args.dataset)
    exclude = set(s["exclude_asset"])
    assets = [a for a in ds.panel.assets if a not in exclude]
    if len(assets) < 2:
        raise InfeasibleError("fewer than two eligible assets remain")
    panel = ds.panel.subset(assets)
    linked = _linked_connections(ds, exclude, s["one_link_only"])
    if not linked:
        raise InfeasibleError("no linked pairs: nothing to align")
    cohort = _null_cohort(s["null_model"], panel, assets, linked, s["null_n"], seed)
    if not cohort.pairs:
        raise InfeasibleError(f"the {s['null_model']} cohort is empty")

    targets = sorted({c.pair for c in linked} | {p.pair for p in cohort.pairs})
    corr = series.correlation_panel(panel, targets, metric=s["metric"], window=s["window_days"],
                                    min_obs=s["min_obs"], subsample=s["ecology_subsample"], seed=seed,
                                    threads=threads)
    aligned = es.align_panel(corr, linked, d_range)
    null_aligned = es.align_panel(corr, cohort.pairs, d_range)
    out = _out_dir(args.out)

    mean_curve = es.bootstrap_mean_curve(aligned, s["bootstrap_n"], seed, threads)
    median_curve = es.bootstrap_median_curve(aligned, s["bootstrap_n"], seed, threads)
    null_curve = es.bootstrap_mean_curve(null_aligned, s["bootstrap_n"], seed + 1, threads,
                                         sample_sizes=aligned.n_d if s["null_model"] == "rt" else None)
    write_csv(out / "curve.csv", ["d", "mean_sc", "sd", "n_pairs"], _curve_rows(mean_curve, False))
    write_csv(out / "median_curve.csv", ["d", "median_sc", "sd", "n_pairs", "lower", "upper"],
              _curve_rows(median_curve, True))
    write_csv(out / "null_curve.csv", ["d", "mean_sc", "sd", "n_pairs"], _curve_rows(null_curve, False))

    cal = corr.calendar.astype(str)
    linked_rows = sorted({c.pair for c in linked})

    def panel_rows():
        for pair in linked_rows:
            r = corr.row(pair)
            for k in range(cal.size):
                if np.isnan(corr.raw[r, k]):
                    continue
                yield [es.pair_id(pair), cal[k], corr.raw[r, k], corr.sc[r, k], int(corr.cross_n[k])]

    write_csv(out / "panel.csv", ["pair_id", "date", "raw_corr", "sc", "cross_section_n"], panel_rows())

    deltas, n_excluded = es.before_after_deltas(aligned, before, after)
    null_deltas, null_excluded = es.before_after_deltas(null_aligned, before, after)
    write_csv(out / "deltas.csv", ["pair_id", "before", "after", "delta"], _delta_rows(deltas))
    write_csv(out / "null_deltas.csv", ["pair_id", "before", "after", "delta"], _delta_rows(null_deltas))
    nullmodels.write_cohort(cohort, out / "cohort.csv")

    results = {"n_linked": len(linked), "n_excluded_pairs": n_excluded, "n_null": len(cohort.pairs),
               "n_null_excluded": null_excluded, "null_skipped": [list(p) for p in cohort.skipped]}
    if deltas:
        b = [x.before for x in deltas]
        a = [x.after for x in deltas]
        results["before_mean"] = es.bootstrap_statistic(b, s["bootstrap_n"], seed).__dict__
        results["after_mean"] = es.bootstrap_statistic(a, s["bootstrap_n"], seed + 1).__dict__
        results["delta_mean"] = es.bootstrap_statistic([x.delta for x in deltas], s["bootstrap_n"], seed + 2).__dict__
        results["fraction_increasing"] = es.fraction_increasing(deltas, s["bootstrap_n"], seed + 3).__dict__
        results["baseline"] = es.pre_connection_baseline(mean_curve)
        results["before_vs_after"] = welch_t(b, a).to_record() if len(deltas) >= 2 else None
        if null_deltas:
            results["linked_vs_null_delta"] = [t.to_record() for t in run_battery(
                [x.delta for x in deltas], [x.delta for x in null_deltas])]
    try:
        results["transition_sigmoid"] = es.fit_transition_sigmoid(mean_curve, s["mcmc_steps"], seed).to_record()
    except (ValueError, RuntimeError) as exc:
        results["transition_sigmoid"] = {"error": str(exc)}
    write_json(out / "summary.json", results)

    chars = es.pair_characteristics(linked, panel, ds.network_events, ds.project_to_asset,
                                    -before[0], after, s["keep_horizon"])
    by_id = {x.pair_id: x.delta for x in deltas}
    class_tests = {}
    for criterion in es.CLASSIFICATIONS:
        ids_a, ids_b = es.classify_pairs(chars, criterion)
        da = [by_id[i] for i in ids_a if i in by_id]
        db = [by_id[i] for i in ids_b if i in by_id]
        labels = es.CLASS_LABELS[criterion]
        class_tests[criterion] = {
            "classes": {labels[0]: len(da), labels[1]: len(db)},
            "tests": [t.to_record() for t in es.compare_classes(da, db, DEFAULT_ALPHA)],
        }
    write_json(out / "class_tests.json", class_tests)
    write_json(out / "characteristics.json", [c.to_record() for c in chars])

    grid = _kde_grid([x.before for x in deltas], [x.after for x in deltas],
                     [x.before for x in null_deltas], [x.after for x in null_deltas])
    write_csv(out / "kde.csv", ["x", "linked_before", "linked_after", "null_before", "null_after"], zip(
        grid,
        _density([x.before for x in deltas], CURVE_KDE_BANDWIDTH, grid),
        _density([x.after for x in deltas], CURVE_KDE_BANDWIDTH, grid),
        _density([x.before for x in null_deltas], CURVE_KDE_BANDWIDTH, grid),
        _density([x.after for x in null_deltas], CURVE_KDE_BANDWIDTH, grid),
    ))
    null_chars = es.pair_characteristics(cohort.pairs, panel, before_days=-before[0], after=after) if cohort.pairs else []
    comp_rows = []
    for name in ("cap_diff", "volume_diff", "age_diff"):
        lv = _log_diff([getattr(c, name) for c in chars])
        nv = _log_diff([getattr(c, name) for c in null_chars])
        g = _kde_grid(lv, nv)
        for x, fl, fn in zip(g, _density(lv, COMPOSITION_KDE_BANDWIDTH, g), _density(nv, COMPOSITION_KDE_BANDWIDTH, g)):
            comp_rows.append([name, x, fl, fn])
    write_csv(out / "composition_kde.csv", ["quantity", "log10_diff", "linked", "null"], comp_rows)

    write_manifest(out, "eventstudy", s, {"dataset": args.dataset}, [
        f"backward rolling Spearman over {s['window_days']} days; min_obs defaults to 75% of the window",
        "standardization against all ecology pairs with population standard deviation",
        "per-day bootstrap streams keyed by (seed, statistic, event day)",
        "random baseline resized to the linked cohort size on each event day" if s["null_model"] == "rt"
        else "random baseline uses the age-matched cohort as drawn",
        "pairs with an empty before or after window are excluded and counted",
        "composition densities are taken over log10(1 + |difference|)",
    ])
    return EXIT_OK


# ------------------------------------------------------------- nullmodel ----

def cmd_nullmodel(args) -> int:
    s = effective_settings(args, ["seed", "null_model", "null_n", "exclude_asset", "one_link_only"])
    seed = _require_seed(s)
    ds = _load_dataset(args.dataset)
    exclude = set(s["exclude_asset"])
    assets = [a for a in ds.panel.assets if a not in exclude]
    linked = _linked_connections(ds, exclude, s["one_link_only"])
    if not linked:
        raise InfeasibleError("no linked pairs: pseudo-connection days cannot be drawn")
    cohort = _null_cohort(s["null_model"], ds.panel.subset(assets), assets, linked, s["null_n"], seed)
    out = _out_dir(args.out)
    nullmodels.write_cohort(cohort, out / "cohort.csv")
    write_json(out / "cohort_report.json", {"model": cohort.model, "n_pairs": len(cohort.pairs),
                                            "skipped": [list(p) for p in cohort.skipped],
                                            "tolerances": [p.tolerance for p in cohort.pairs]})
    write_manifest(out, "nullmodel", s, {"dataset": args.dataset}, [
        "random pairs drawn with replacement from non-linked pairs",
        "age matching widens from 7 to 35 days in 7-day steps, then skips",
    ])
    return EXIT_OK


# ----------------------------------------------------------------- synth ----

def cmd_synth(args) -> int:
    s = effective_settings(args, ["seed", "scenario"])
    values = {}
    if s["scenario"]:
        try:
            values = synthgen.parse_flat_config(Path(s["scenario"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read scenario {s['scenario']}: {exc}") from exc
    if s["seed"] is not None:
        values["seed"] = s["seed"]
    if "seed" not in values:
        raise UsageError("synth needs --seed or a seed in the scenario file")
    try:
        config = synthgen.ScenarioConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    scenario = synthgen.planted_scenario(config)
    out = synthgen.write_scenario(scenario, args.out)
    inputs = {"scenario": s["scenario"]} if s["scenario"] else {}
    write_manifest(out, "synth", dict(s, scenario_config=config.to_record()), inputs, [
        "one-factor Gaussian returns; planted pairs regenerated as bivariate normal with a switch",
        "Spearman targets converted to latent Pearson with 2 sin(pi rho / 6)",
        "each planted pair bridged by its own developer on its switch day",
    ])
    return EXIT_OK


# ---------------------------------------------------------------- report ----

def cmd_report(args) -> int:
    runs = []
    for d in args.runs:
        path = Path(d) / MANIFEST_NAME if Path(d).is_dir() else Path(d)
        try:
            runs.append({"path": str(path), **json.loads(path.read_text(encoding="utf-8"))})
        except (OSError, json.JSONDecodeError) as exc:
            raise ingest.IngestError(f"cannot read manifest {path}: {exc}") from exc
        summary = path.parent / "summary.json"
        if summary.is_file():
            runs[-1]["summary"] = json.loads(summary.read_text(encoding="utf-8"))
    out = _out_dir(args.out)
    write_json(out / "report.json", {"runs": runs})
    write_manifest(out, "report", {}, {}, ["aggregates manifests in the order given"])
    return EXIT_OK


# ---------------------------------------------------------------- parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="codemarket", description="Developer networks and market synchronization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed=True, threads=False):
        p.add_argument("--config", help="flat key = value file; flags override it")
        if seed:
            p.add_argument("--seed", type=int)
        if threads:
            p.add_argument("--threads", type=int)

    p = sub.add_parser("ingest", help="build a dataset directory from raw files")
    common(p, seed=False)
    p.add_argument("--events", required=True)
    p.add_argument("--market", required=True)
    p.add_argument("--market-secondary")
    p.add_argument("--mapping", required=True)
    p.add_argument("--min-avg-volume", type=float)
    p.add_argument("--discrepancy-ratio", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    def analysis(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--exclude-asset", action="append", default=[])
        p.add_argument("--one-link-only", action="store_true")
        p.add_argument("--out", required=True)

    p = sub.add_parser("network", help="graph statistics and growth fits")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--exclude-asset", action="append", default=[])
    p.add_argument("--mcmc-steps", type=int)
    p.add_argument("--link-bin-days", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("eventstudy", help="aligned correlation curves, deltas and class tests")
    common(p, threads=True)
    analysis(p)
    p.add_argument("--window-days", type=int)
    p.add_argument("--min-obs", type=int)
    p.add_argument("--before", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--after", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--d-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--bootstrap-n", type=int)
    p.add_argument("--null-model", choices=("rt", "rta", "orta"))
    p.add_argument("--null-n", type=int)
    p.add_argument("--metric", choices=tuple(series.METRICS))
    p.add_argument("--ecology-subsample", type=int)
    p.add_argument("--keep-horizon", type=int)
    p.add_argument("--mcmc-steps", type=int)
    p.set_defaults(func=cmd_eventstudy)

    p = sub.add_parser("nullmodel", help="randomized comparison cohorts")
    common(p)
    analysis(p)
    p.add_argument("--null-model", choices=("rt", "rta", "orta"))
    p.add_argument("--null-n", type=int)
    p.set_defaults(func=cmd_nullmodel)

    p = sub.add_parser("synth", help="write a planted synthetic scenario")
    common(p)
    p.add_argument("--scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="aggregate run manifests")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("codemarket: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleError, nullmodels.InfeasibleCohortError, ingest.DatasetError) as exc:
        print(f"codemarket: infeasible analysis: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ingest.IngestError, FileNotFoundError, ValueError) as exc:
        print(f"codemarket: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
