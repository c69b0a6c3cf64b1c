import functools

import pytest

from smecsim import load_scenario, simulate
from smecsim.config import with_overrides

_criteria: list = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def cached_run(scenario: str, policy: str = "smec", edge_policy: str = "smec_edge",
               early_drop=None, seed=None, duration=None):
    sc = with_overrides(load_scenario(scenario), seed, duration)
    return simulate(sc, policy, edge_policy, early_drop=early_drop)
