"""Developer-project networks and the first-connection times between projects."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import EventRecord, format_timestamp


@dataclass
class EdgeInfo:
    first_edit: datetime
    count: int
    first_kind: str


@dataclass
class BipartiteGraph:
    edges: dict[tuple[str, str], EdgeInfo] = field(default_factory=dict)

    @property
    def developers(self) -> set[str]:
        return {d for d, _ in self.edges}

    @property
    def projects(self) -> set[str]:
        return {p for _, p in self.edges}

    def projects_of(self) -> dict[str, dict[str, EdgeInfo]]:
        out: dict[str, dict[str, EdgeInfo]] = defaultdict(dict)
        for (d, p), info in self.edges.items():
            out[d][p] = info
        return dict(out)


def build_bipartite(events: Iterable[EventRecord]) -> BipartiteGraph:
    """One edge per (developer, project) with first-edit time and edit count.

    Ties on the first timestamp keep the kind of the event seen first.
    """
    g = BipartiteGraph()
    for e in events:
        key = (e.developer, e.project)
        info = g.edges.get(key)
        if info is None:
            g.edges[key] = EdgeInfo(e.timestamp, 1, e.kind)
        else:
            info.count += 1
            if e.timestamp < info.first_edit:
                info.first_edit = e.timestamp
                info.first_kind = e.kind
    return g


def pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class ProjectGraph:
    nodes: set[str]
    weights: dict[tuple[str, str], int]

    def neighbors(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in self.weights:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def degrees(self) -> dict[str, int]:
        return {n: len(nb) for n, nb in self.neighbors().items()}

    @property
    def n_edges(self) -> int:
        return len(self.weights)

    def without(self, nodes: Iterable[str]) -> "ProjectGraph":
        drop = set(nodes)
        return ProjectGraph(self.nodes - drop, {k: w for k, w in self.weights.items() if not drop & set(k)})


def project_graph(bipartite: BipartiteGraph) -> ProjectGraph:
    """Project onto projects; edge weight = number of shared developers."""
    weights: Counter[tuple[str, str]] = Counter()
    for projects in bipartite.projects_of().values():
        for a, b in combinations(sorted(projects), 2):
            weights[(a, b)] += 1
    return ProjectGraph(bipartite.projects, dict(weights))


@dataclass
class ConnectionEvent:
    pair: tuple[str, str]
    timestamp: datetime
    developer: str
    kind: str
    first_edited: str
    second_edited: str
    direction_defined: bool = True
    subsequent_connectors: list[str] = field(default_factory=list)

    @property
    def day(self) -> np.datetime64:
        return np.datetime64(self.timestamp.date(), "D")

    @property
    def n_connectors(self) -> int:
        return 1 + len(self.subsequent_connectors)


def detect_connections(events: Iterable[EventRecord]) -> list[ConnectionEvent]:
    """First time each project pair gains a common developer.

    For developer *d* touching projects *i* and *j*, the pair becomes linked
    through *d* at max(first_d(i), first_d(j)); the pair's connection is the
    earliest such time over developers (ties broken by developer id). The
    connecting event's kind is the kind of *d*'s first edit on the
    later-touched project. Results are ordered by time, then pair.
    """
    per_dev = build_bipartite(events).projects_of()
    candidates: dict[tuple[str, str], list[tuple[datetime, str, str, str, bool, str]]] = defaultdict(list)
    for dev, projects in per_dev.items():
        for a, b in combinations(sorted(projects), 2):
            ia, ib = projects[a], projects[b]
            if ia.first_edit < ib.first_edit:
                first, second, info, defined = a, b, ib, True
            elif ib.first_edit < ia.first_edit:
                first, second, info, defined = b, a, ia, True
            else:
                first, second, info, defined = a, b, ib, False
            candidates[(a, b)].append((info.first_edit, dev, first, second, defined, info.first_kind))
    out = []
    for pair, cands in candidates.items():
        cands.sort(key=lambda c: (c[0], c[1]))
        ts, dev, first, second, defined, kind = cands[0]
        out.append(ConnectionEvent(pair, ts, dev, kind, first, second, defined, [c[1] for c in cands[1:]]))
    out.sort(key=lambda c: (c.timestamp, c.pair))
    return out


def one_link_only(connections: Sequence[ConnectionEvent]) -> list[ConnectionEvent]:
    """Pairs bridged by a single developer only."""
    return [c for c in connections if not c.subsequent_connectors]


def degree_histogram(graph: ProjectGraph) -> list[tuple[int, int]]:
    """(degree, number of nodes) for non-isolated nodes, highest degree first."""
    counts = Counter(d for d in graph.degrees().values() if d > 0)
    return sorted(counts.items(), reverse=True)


def assortativity_coefficient(graph: ProjectGraph) -> float:
    """Newman degree assortativity; NaN when endpoint degrees do not vary.

    Pearson correlation of the degrees at either end of every edge, with each
    edge counted in both orientations.
    """
    if not graph.weights:
        raise ValueError("assortativity needs at least one edge")
    deg = graph.degrees()
    ends = np.array([(deg[a], deg[b]) for a, b in graph.weights], dtype=float)
    x = np.concatenate([ends[:, 0], ends[:, 1]])
    y = np.concatenate([ends[:, 1], ends[:, 0]])
    xc = x - x.mean()
    var = float(xc @ xc)
    if var == 0:
        return math.nan
    return float(xc @ (y - y.mean())) / var


def connected_components(graph: ProjectGraph, include_isolated: bool = False) -> list[int]:
    """Component sizes in descending order (isolated nodes skipped by default)."""
    adj = graph.neighbors()
    seen: set[str] = set()
    sizes = []
    for start in sorted(adj):
        if start in seen or (not include_isolated and not adj[start]):
            continue
        stack = [start]
        seen.add(start)
        size = 0
        while stack:
            node = stack.pop()
            size += 1
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        sizes.append(size)
    return sorted(sizes, reverse=True)


def developer_connection_counts(connections: Iterable[ConnectionEvent]) -> list[tuple[int, int]]:
    """(connections activated, number of developers), most active first."""
    per_dev = Counter(c.developer for c in connections)
    return sorted(Counter(per_dev.values()).items(), reverse=True)


def new_links_per_period(
    connections: Sequence[ConnectionEvent], bin_days: int = 30, origin=None
) -> list[tuple[np.datetime64, int]]:
    """New links per ``bin_days`` bin, contiguous from the first bin to the last."""
    if not connections:
        return []
    if bin_days < 1:
        raise ValueError("bin_days must be >= 1")
    days = np.array([c.day for c in connections], dtype="datetime64[D]")
    origin = np.datetime64(origin, "D") if origin is not None else days.min()
    idx = ((days - origin).astype(int)) // bin_days
    if idx.min() < 0:
        raise ValueError("origin is later than the first connection")
    counts = np.bincount(idx)
    return [(origin + int(k) * bin_days, int(n)) for k, n in enumerate(counts)]


def project_developer_counts(bipartite: BipartiteGraph) -> dict[str, int]:
    return dict(Counter(p for _, p in bipartite.edges))


def activity_histogram(events: Iterable[EventRecord]) -> list[tuple[int, int]]:
    """(events triggered, number of developers), ascending by activity."""
    per_dev = Counter(e.developer for e in events)
    return sorted(Counter(per_dev.values()).items())


def multi_project_summary(events: Sequence[EventRecord]) -> dict:
    """Share of developers on more than one project and their share of edits."""
    per_dev_events = Counter(e.developer for e in events)
    per_dev_projects: dict[str, set[str]] = defaultdict(set)
    for e in events:
        per_dev_projects[e.developer].add(e.project)
    multi = {d for d, ps in per_dev_projects.items() if len(ps) > 1}
    n_dev = len(per_dev_events)
    n_ev = sum(per_dev_events.values())
    return {
        "n_developers": n_dev,
        "n_events": n_ev,
        "n_multi_project_developers": len(multi),
        "multi_project_developer_fraction": len(multi) / n_dev if n_dev else math.nan,
        "multi_project_event_fraction": sum(per_dev_events[d] for d in multi) / n_ev if n_ev else math.nan,
        "events_single": [per_dev_events[d] for d in sorted(per_dev_events) if d not in multi],
        "events_multi": [per_dev_events[d] for d in sorted(multi)],
    }


EDGE_COLUMNS = ("project_i", "project_j", "weight", "connection_day", "developer", "kind", "first_edited")


def write_edge_list(graph: ProjectGraph, connections: Sequence[ConnectionEvent], target) -> None:
    by_pair = {c.pair: c for c in connections}
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for pair in sorted(graph.weights):
            c = by_pair.get(pair)
            w.writerow([
                pair[0], pair[1], graph.weights[pair],
                str(c.day) if c else "", c.developer if c else "", c.kind if c else "",
                (c.first_edited if c.direction_defined else "") if c else "",
            ])


def connections_to_records(connections: Sequence[ConnectionEvent]) -> list[dict]:
    return [
        {
            "project_i": c.pair[0],
            "project_j": c.pair[1],
            "timestamp": format_timestamp(c.timestamp),
            "connection_day": str(c.day),
            "developer": c.developer,
            "kind": c.kind,
            "first_edited": c.first_edited if c.direction_defined else None,
            "second_edited": c.second_edited if c.direction_defined else None,
            "subsequent_connectors": list(c.subsequent_connectors),
        }
        for c in connections
    ]


def map_connections(connections: Sequence[ConnectionEvent], project_to_asset: Mapping[str, str]) -> list[ConnectionEvent]:
    """Re-express project-level connections as asset-level ones.

    Pairs whose projects map to the same asset, or to no asset, are dropped.
    When several project pairs collapse to one asset pair the earliest wins.
    """
    out: dict[tuple[str, str], ConnectionEvent] = {}
    for c in connections:
        a, b = project_to_asset.get(c.pair[0]), project_to_asset.get(c.pair[1])
        if a is None or b is None or a == b:
            continue
        key = pair_key(a, b)
        if key in out:
            continue
        out[key] = ConnectionEvent(
            key, c.timestamp, c.developer, c.kind,
            project_to_asset[c.first_edited], project_to_asset[c.second_edited],
            c.direction_defined, list(c.subsequent_connectors),
        )
    return sorted(out.values(), key=lambda c: (c.timestamp, c.pair))
