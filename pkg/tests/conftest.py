import itertools
from dataclasses import dataclass

import pytest

from codemarket import conet, eventstudy as es, series
from codemarket.synthgen import Scenario, ScenarioConfig, planted_scenario

PLANTED_CONFIG = ScenarioConfig(n_assets=100, n_pairs=50, n_days=1200, spearman_before=0.2, spearman_after=0.6,
                                bridge_first=300, bridge_last=900, seed=2024)


@dataclass
class PlantedRun:
    scenario: Scenario
    connections: list
    corr: series.CorrelationPanel
    aligned: es.AlignedPanel
    aligned_raw: es.AlignedPanel


@pytest.fixture(scope="session")
def planted():
    """The 100-asset, 50-pair ecology shared by acceptance and event-study checks."""
    sc = planted_scenario(PLANTED_CONFIG)
    cons = conet.map_connections(conet.detect_connections(sc.events), sc.mapping)
    corr = series.correlation_panel(sc.panel, list(itertools.combinations(sc.panel.assets, 2)), window=120, threads=4)
    return PlantedRun(sc, cons, corr, es.align_panel(corr, cons), es.align_panel(corr, cons, field_name="raw"))


_ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = marker.kwargs.get("criterion")
    if call.when == "setup" and call.excinfo is not None and call.excinfo.errisinstance(pytest.skip.Exception):
        _ACCEPTANCE[key] = ("SKIP", str(call.excinfo.value))
    elif call.when == "call":
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _ACCEPTANCE[key] = ("FAIL" if call.excinfo is not None else "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{status} criterion {key}" + (f" ({detail})" if detail else ""))
