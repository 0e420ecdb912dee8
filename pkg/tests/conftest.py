from __future__ import annotations

import pytest

from parcelmap.synthcity import SynthConfig, generate


@pytest.fixture(scope="session")
def city():
    """Default synthetic city, seed 7."""
    return generate(SynthConfig(seed=7))


@pytest.fixture(scope="session")
def small_city():
    """A 240x240-cell city with a 30-cell road pitch; quick to run end to end."""
    return generate(SynthConfig(seed=3, size=240, road_pitch=30, train_per_class=1))


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)`` prints and returns ``ok``."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE].append((n, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
