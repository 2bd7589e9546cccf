import functools
import sys

import pytest
from hypothesis import HealthCheck, settings

from gridnetsim.scenario import build_topology, load_case

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def case_entities(case):
    return tuple(load_case(case))


@functools.lru_cache(maxsize=None)
def case_topology(case, kind):
    return build_topology(list(case_entities(case)), kind)


@pytest.fixture(scope="session")
def entities_500():
    return list(case_entities("500"))


@pytest.fixture(scope="session")
def star_500():
    return case_topology("500", "star")


@pytest.fixture(scope="session")
def star_2000():
    return case_topology("2000", "star")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and hasattr(mod, "RESULTS"):
            lines.extend(mod.RESULTS)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
