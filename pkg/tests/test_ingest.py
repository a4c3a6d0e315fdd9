import io
import json
from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st

from codemarket import ingest
from codemarket.ingest import AssetPanel, DatasetConfig, EventRecord
from codemarket.synthgen import ScenarioConfig, gen_event_stream, gen_panel, planted_scenario


def line(dev="alice", proj="p1", ts="2018-03-01T12:00:00Z", kind="Push"):
    return json.dumps({"developer": dev, "project": proj, "timestamp": ts, "kind": kind})


def ev(dev, proj, day, kind="Push", sec=0):
    return EventRecord(datetime(2018, 1, day, 0, 0, sec, tzinfo=timezone.utc), dev, proj, kind)


def tiny_panel(volumes, start="2018-01-01", price=None):
    vol = np.atleast_2d(np.asarray(volumes, dtype=float))
    n = vol.shape[1]
    values = {"price": np.full(vol.shape, 1.0) if price is None else np.atleast_2d(price).astype(float),
              "volume": vol, "market_cap": np.full(vol.shape, 10.0)}
    return AssetPanel(tuple(f"X{k}" for k in range(vol.shape[0])), np.datetime64(start), values)


class TestParse:
    def test_well_formed(self):
        res = ingest.parse_event_log(io.StringIO("\n".join([line(), line(dev="bob"), line(kind="MergedPullRequest")])))
        assert len(res.records) == 3 and res.n_malformed == 0
        assert [r.developer for r in res.records] == ["alice", "bob", "alice"]

    def test_missing_timestamp(self):
        bad = json.dumps({"developer": "a", "project": "p", "kind": "Push"})
        res = ingest.parse_event_log(io.StringIO("\n".join([line(), bad, line()])))
        assert len(res.records) == 2 and res.n_malformed == 1 and res.malformed_lines == [2]

    def test_mostly_malformed(self):
        with pytest.raises(ingest.EventFormatError):
            ingest.parse_event_log(io.StringIO("\n".join([line(), "{", "nope"])))

    def test_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            ingest.parse_event_log(tmp_path / "absent.jsonl")

    def test_study_window(self):
        cfg = DatasetConfig(study_start=date(2018, 3, 2))
        res = ingest.parse_event_log(io.StringIO("\n".join([line(), line(ts="2018-03-05T00:00:00Z")])), cfg)
        assert len(res.records) == 1 and res.n_out_of_window == 1

    def test_kind_aliases(self):
        assert ingest.normalize_kind("PushEvent") == "Push"
        assert ingest.normalize_kind("IssueCommentEvent") == "IssueCommentEvent"

    def test_synthetic_round_trip(self, tmp_path):
        stream = gen_event_stream(400, 40, 0.02, [], seed=1, n_days=800, noise_events=200, n_bots=3)
        records = stream.events[:10_000]
        assert len(records) >= 10_000 or len(records) == len(stream.events)
        path = tmp_path / "ev.jsonl"
        ingest.write_event_log(records, path)
        again = ingest.parse_event_log(path).records
        assert again == records
        ingest.write_event_log(again, tmp_path / "ev2.jsonl")
        assert (tmp_path / "ev.jsonl").read_bytes() == (tmp_path / "ev2.jsonl").read_bytes()


class TestFilter:
    def test_rules(self):
        evs = [ev("release-bot", "p", 1), ev("Abbott", "p", 1), ev("carol", "p", 2, "IssueComment"), ev("dan", "p", 3)]
        kept = ingest.filter_events(evs)
        assert [e.developer for e in kept] == ["dan"]
        cfg = DatasetConfig(bot_allowlist={"Abbott"})
        assert [e.developer for e in ingest.filter_events(evs, cfg)] == ["Abbott", "dan"]

    def test_mixed_stream_oracle(self):
        rng = np.random.default_rng(0)
        kinds = ["Push", "MergedPullRequest", "IssueComment", "Fork"]
        names = ["ann", "BoT-x", "ci_bot", "zed", "mo"]
        evs = [ev(names[rng.integers(5)], "p", 1 + k % 28, kinds[rng.integers(4)], k % 60) for k in range(100)]
        oracle = [e for e in evs if e.kind in ("Push", "MergedPullRequest") and "bot" not in e.developer.lower()]
        assert ingest.filter_events(evs) == oracle
        assert ingest.filter_events(ingest.filter_events(evs)) == ingest.filter_events(evs)


class TestReconcile:
    def test_examples(self):
        a = tiny_panel([[100, 100, 0, np.nan]], price=[[100, 100, 1, np.nan]])
        b = tiny_panel([[100, 700, 5, 50]], price=[[100, 700, 1, 3]])
        out = ingest.reconcile_sources(a, b, 5.0)
        v = out.values["volume"][0]
        assert v[0] == 100 and np.isnan(v[1])
        # primary zero volume vs secondary 5: ratio inf -> discarded; zero is also missing
        assert np.isnan(v[2])
        assert v[3] == 50
        assert out.values["price"][0, 1] != out.values["price"][0, 1]
        assert out.values["price"][0, 3] == 3

    def test_disjoint(self):
        with pytest.raises(ingest.EmptyOverlapError):
            ingest.reconcile_sources(tiny_panel([[1, 2]]), tiny_panel([[1, 2]], start="2019-01-01"))

    @given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0.1, 10))
    def test_symmetric_discard(self, a, b, ratio):
        x, y = np.array([a]), np.array([b])
        assert ingest.discrepancy_mask(x, y, ratio)[0] == ingest.discrepancy_mask(y, x, ratio)[0]

    def test_zero_volume_masked(self):
        out = ingest.mask_zero_volume(tiny_panel([[0, 5]]))
        assert np.isnan(out.values["volume"][0, 0]) and out.meta["zero_volume_masked"] == 1


class TestEligibility:
    def test_examples(self):
        p = tiny_panel([[2e5, 2e5], [np.nan, 3e5], [1e4, 1e4], [np.nan, np.nan]])
        assert ingest.eligible_assets(p, 1e5) == ["X0", "X1"]

    def test_direct_mean_oracle(self):
        rng = np.random.default_rng(8)
        means = rng.uniform(1e4, 3e5, 50)
        vol = rng.normal(means[:, None], 1e3, (50, 60)).clip(1)
        vol[rng.random(vol.shape) < 0.1] = np.nan
        p = tiny_panel(vol)
        oracle = [f"X{k}" for k in range(50) if np.nanmean(vol[k]) >= 1e5]
        assert ingest.eligible_assets(p, 1e5) == oracle

    @given(st.floats(1.0, 1e6), st.floats(1.0, 1e6))
    def test_monotone(self, lo, hi):
        lo, hi = sorted((lo, hi))
        vol = np.random.default_rng(1).uniform(1, 1e6, (20, 10))
        p = tiny_panel(vol)
        assert set(ingest.eligible_assets(p, hi)) <= set(ingest.eligible_assets(p, lo))


class TestMarketIO:
    def test_round_trip(self, tmp_path):
        panel, _ = gen_panel(4, 30, seed=2, missing_rate=0.1)
        ingest.write_market_table(panel, tmp_path / "m.csv")
        back = ingest.read_market_table(tmp_path / "m.csv")
        assert back.assets == panel.assets
        for m in ingest.METRICS:
            np.testing.assert_array_equal(back.values[m], panel.values[m])

    def test_duplicates_and_inverted(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("asset,date,price,volume,market_cap,high,low\nA,2018-01-01,1,2,3,1,2\nA,2018-01-02,1,2,3,,\n")
        p = ingest.read_market_table(path)
        assert np.isnan(p.values["high"][0, 0]) and np.isnan(p.values["low"][0, 0])
        path.write_text("asset,date,price,volume,market_cap\nA,2018-01-01,1,2,3\nA,2018-01-01,1,2,3\n")
        with pytest.raises(ingest.MarketFormatError):
            ingest.read_market_table(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("asset,date,price\nA,2018-01-01,1\n")
        with pytest.raises(ingest.MarketFormatError):
            ingest.read_market_table(path)


class TestDataset:
    def test_empty_events(self):
        ds = ingest.build_dataset([], tiny_panel([[2e5, 2e5]]), {})
        assert ds.events == [] and ds.panel.assets == ("X0",)

    def test_unmapped(self):
        evs = [ev("a", "mapped", 2), ev("a", "orphan", 1)]
        ds = ingest.build_dataset(evs, tiny_panel([[2e5, 2e5]]), {"mapped": "X0"})
        assert ds.unmapped == {"orphan": 1}
        assert [e.project for e in ds.network_events] == ["mapped"]
        assert [e.project for e in ds.events] == ["orphan", "mapped"]

    def test_empty_eligible(self):
        with pytest.raises(ingest.DatasetError):
            ingest.build_dataset([], tiny_panel([[1.0, 1.0]]), {})

    def test_scenario_counts(self, tmp_path):
        sc = planted_scenario(ScenarioConfig(n_assets=20, n_pairs=5, n_days=400, bridge_first=150, bridge_last=300,
                                             n_bots=2, noise_events=50, seed=4))
        ds = ingest.build_dataset(sc.events, sc.panel, sc.mapping)
        m = sc.manifest["events"]
        assert ds.manifest["n_events"] == m["n_core_events"]
        assert ds.manifest["n_eligible_assets"] == 20
        assert sorted({e.developer for e in ds.events}) == sorted({d for d, _ in m["membership"]})
        back = ingest.read_dataset(ingest.write_dataset(ds, tmp_path / "ds"))
        assert back.events == ds.events and back.project_to_asset == ds.project_to_asset
