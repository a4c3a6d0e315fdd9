import itertools
import math
from datetime import datetime, timedelta, timezone

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codemarket import conet
from codemarket.ingest import EventRecord
from codemarket.synthgen import Bridge, gen_event_stream

T0 = datetime(2018, 1, 1, tzinfo=timezone.utc)


def ev(dev, proj, hours, kind="Push"):
    return EventRecord(T0 + timedelta(hours=hours), dev, proj, kind)


def graph_from_edges(edges, nodes=None):
    nodes = set(nodes or ()) | {n for e in edges for n in e}
    return conet.ProjectGraph(nodes, {conet.pair_key(a, b): 1 for a, b in edges})


def random_events(rng, n_devs=20, n_projects=10, n_events=80):
    return [ev(f"d{rng.integers(n_devs)}", f"p{rng.integers(n_projects)}", int(rng.integers(0, 2000)),
               ["Push", "MergedPullRequest"][rng.integers(2)]) for _ in range(n_events)]


def brute_projection(events):
    members = {}
    for e in events:
        members.setdefault(e.project, set()).add(e.developer)
    out = {}
    for a, b in itertools.combinations(sorted(members), 2):
        shared = members[a] & members[b]
        if shared:
            out[(a, b)] = len(shared)
    return out


def brute_connections(events):
    """Per pair: scan each developer's first-touch times, keep the minimum of maxima."""
    first = {}
    for e in events:
        key = (e.developer, e.project)
        if key not in first or e.timestamp < first[key]:
            first[key] = e.timestamp
    projects = sorted({e.project for e in events})
    devs = sorted({e.developer for e in events})
    out = {}
    for a, b in itertools.combinations(projects, 2):
        best = None
        for d in devs:
            if (d, a) in first and (d, b) in first:
                cand = (max(first[(d, a)], first[(d, b)]), d)
                best = cand if best is None or cand < best else best
        if best:
            out[(a, b)] = best
    return out


class TestBipartite:
    def test_first_edit_and_count(self):
        g = conet.build_bipartite([ev("A", "P1", 5), ev("A", "P1", 2)])
        info = g.edges[("A", "P1")]
        assert info.count == 2 and info.first_edit == T0 + timedelta(hours=2)

    def test_empty(self):
        g = conet.build_bipartite([])
        assert not g.edges and not g.developers

    def test_membership_matches_generator(self):
        sched = [Bridge("bx", "proj0001", "proj0004", np.datetime64("2016-03-01"))]
        stream = gen_event_stream(30, 8, 0.05, sched, seed=3, n_days=200)
        g = conet.build_bipartite(stream.events)
        assert sorted([d, p] for d, p in g.edges) == stream.manifest["membership"]


class TestProjection:
    def test_examples(self):
        g = conet.project_graph(conet.build_bipartite([ev("A", "P1", 0), ev("A", "P2", 1), ev("B", "P2", 0), ev("B", "P3", 1)]))
        assert g.weights == {("P1", "P2"): 1, ("P2", "P3"): 1}
        g = conet.project_graph(conet.build_bipartite([ev("A", "P1", 0), ev("A", "P2", 1), ev("B", "P1", 0), ev("B", "P2", 1)]))
        assert g.weights == {("P1", "P2"): 2}

    def test_random_graphs_against_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            events = random_events(rng)
            g = conet.project_graph(conet.build_bipartite(events))
            assert g.weights == brute_projection(events)
            assert all(a != b for a, b in g.weights)


class TestConnections:
    def test_direction(self):
        (c,) = conet.detect_connections([ev("d", "P1", 1), ev("d", "P2", 5, "MergedPullRequest")])
        assert c.timestamp == T0 + timedelta(hours=5)
        assert (c.first_edited, c.second_edited, c.kind) == ("P1", "P2", "MergedPullRequest")

    def test_subsequent_connector(self):
        evs = [ev("x", "P1", 0), ev("x", "P2", 2), ev("y", "P1", 0), ev("y", "P2", 3)]
        (c,) = conet.detect_connections(evs)
        assert c.developer == "x" and c.subsequent_connectors == ["y"]
        assert conet.one_link_only([c]) == []

    def test_identical_timestamps_flag_direction(self):
        (c,) = conet.detect_connections([ev("d", "P1", 1), ev("d", "P2", 1)])
        assert not c.direction_defined

    def test_random_against_bruteforce(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            events = random_events(rng)
            got = {c.pair: (c.timestamp, c.developer) for c in conet.detect_connections(events)}
            assert got == brute_connections(events)

    def test_scheduled_bridges(self):
        days = np.datetime64("2016-01-01") + np.arange(50, 550, 10)
        sched = [Bridge(f"b{k}", f"proj{2 * k:04d}", f"proj{2 * k + 1:04d}", d) for k, d in enumerate(days)]
        stream = gen_event_stream(200, 100, 0.05, sched, seed=5, n_days=700)
        cons = conet.detect_connections(stream.events)
        assert len(cons) == 50
        by_pair = {c.pair: c for c in cons}
        for b in sched:
            c = by_pair[(b.project_i, b.project_j)]
            assert c.day == b.day
            assert (c.first_edited, c.second_edited) == (b.project_i, b.project_j)
        assert [[*c.pair] for c in cons] == [r["pair"] for r in stream.manifest["connections"]]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        events = random_events(rng, 8, 6, 30)
        cons = conet.detect_connections(events)
        graph = conet.project_graph(conet.build_bipartite(events))
        assert {c.pair for c in cons} == set(graph.weights)
        first_day = {}
        for e in events:
            first_day[e.project] = min(first_day.get(e.project, e.timestamp), e.timestamp)
        for c in cons:
            assert graph.weights[c.pair] == c.n_connectors
            assert c.timestamp >= max(first_day[p] for p in c.pair)
            rest = [e for e in events if e.developer != c.developer]
            after = {x.pair: x for x in conet.detect_connections(rest)}
            if c.pair in after:
                assert after[c.pair].timestamp >= c.timestamp
                if after[c.pair].timestamp == c.timestamp:
                    assert after[c.pair].developer in c.subsequent_connectors


class TestStatistics:
    def test_degree_histogram(self):
        assert conet.degree_histogram(graph_from_edges([("a", "b"), ("b", "c"), ("a", "c")])) == [(2, 3)]
        assert conet.degree_histogram(graph_from_edges([("h", "x"), ("h", "y"), ("h", "z")])) == [(3, 1), (1, 3)]

    def test_assortativity(self):
        assert math.isnan(conet.assortativity_coefficient(graph_from_edges([("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")])))
        assert conet.assortativity_coefficient(graph_from_edges([("h", "x"), ("h", "y"), ("h", "z")])) == pytest.approx(-1.0)
        with pytest.raises(ValueError):
            conet.assortativity_coefficient(graph_from_edges([]))

    def test_assortativity_erdos_renyi(self):
        for seed in range(5):
            g = nx.gnp_random_graph(40, 0.12, seed=seed)
            ours = graph_from_edges([(str(a), str(b)) for a, b in g.edges()], [str(n) for n in g.nodes])
            deg = dict(g.degree())
            x = [deg[a] for a, b in g.edges()] + [deg[b] for a, b in g.edges()]
            y = [deg[b] for a, b in g.edges()] + [deg[a] for a, b in g.edges()]
            oracle = np.corrcoef(x, y)[0, 1]
            assert conet.assortativity_coefficient(ours) == pytest.approx(oracle, abs=1e-12)
            assert conet.assortativity_coefficient(ours) == pytest.approx(nx.degree_assortativity_coefficient(g), abs=1e-10)

    def test_components(self):
        g = graph_from_edges([("a", "b"), ("b", "c"), ("a", "c"), ("x", "y"), ("y", "z"), ("x", "z")], ["lonely"])
        assert conet.connected_components(g) == [3, 3]
        assert conet.connected_components(g, include_isolated=True) == [3, 3, 1]
        assert conet.connected_components(graph_from_edges([])) == []

    def test_components_against_networkx(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            events = random_events(rng, 30, 25, 60)
            g = conet.project_graph(conet.build_bipartite(events))
            ng = nx.Graph(list(g.weights))
            oracle = sorted((len(c) for c in nx.connected_components(ng)), reverse=True)
            assert conet.connected_components(g) == oracle
            deg = g.degrees()
            assert conet.degree_histogram(g) == sorted(
                ((k, sum(1 for v in deg.values() if v == k)) for k in {v for v in deg.values() if v}), reverse=True)

    def test_developer_counts(self):
        c = lambda pair, dev: conet.ConnectionEvent(pair, T0, dev, "Push", *pair)
        assert conet.developer_connection_counts([c(("a", "b"), "d")]) == [(1, 1)]
        cons = [c(("a", "b"), "x"), c(("a", "c"), "x"), c(("b", "c"), "x"), c(("d", "e"), "y")]
        assert conet.developer_connection_counts(cons) == [(3, 1), (1, 1)]

    def test_developer_counts_match_schedule(self):
        sched = [Bridge("multi", "proj0000", "proj0001", np.datetime64("2016-02-01")),
                 Bridge("multi", "proj0002", "proj0003", np.datetime64("2016-03-01")),
                 Bridge("solo", "proj0004", "proj0005", np.datetime64("2016-04-01"))]
        stream = gen_event_stream(12, 6, 0.05, sched, seed=2, n_days=300)
        cons = conet.detect_connections(stream.events)
        truth = {}
        for row in stream.manifest["connections"]:
            truth[row["developer"]] = truth.get(row["developer"], 0) + 1
        hist = {}
        for n in truth.values():
            hist[n] = hist.get(n, 0) + 1
        assert conet.developer_connection_counts(cons) == sorted(hist.items(), reverse=True)

    def test_new_links(self):
        c = lambda day: conet.ConnectionEvent(("a", "b"), T0 + timedelta(days=day), "d", "Push", "a", "b")
        out = conet.new_links_per_period([c(0), c(0), c(0)], 30)
        assert [n for _, n in out] == [3]
        assert conet.new_links_per_period([], 30) == []
        growth = [c(int(d)) for d in np.floor(30 * np.log2(np.arange(1, 65)))]
        counts = [n for _, n in conet.new_links_per_period(growth, 30)]
        assert np.cumsum(counts).tolist() == [1, 3, 7, 15, 31, 63, 64]

    def test_edge_list(self, tmp_path):
        events = [ev("d", "P1", 1), ev("d", "P2", 5)]
        g = conet.project_graph(conet.build_bipartite(events))
        conet.write_edge_list(g, conet.detect_connections(events), tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "project_i,project_j,weight,connection_day,developer,kind,first_edited"
        assert lines[1] == "P1,P2,1,2018-01-01,d,Push,P1"

    def test_map_connections(self):
        events = [ev("d", "P1", 1), ev("d", "P2", 5), ev("e", "P1b", 0), ev("e", "P2", 3), ev("f", "P1", 0), ev("f", "P1b", 1)]
        cons = conet.detect_connections(events)
        mapped = conet.map_connections(cons, {"P1": "A", "P1b": "A", "P2": "B"})
        assert len(mapped) == 1 and mapped[0].pair == ("A", "B")
        assert mapped[0].timestamp == T0 + timedelta(hours=3)
