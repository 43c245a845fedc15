import functools
import time

import pytest

from dfig_dualmode.scenarios import builtin
from dfig_dualmode.sim import run_closed_loop

# wall-clock seconds of each cached run, keyed like the cache
RUN_SECONDS = {}


@functools.lru_cache(maxsize=None)
def _run(name, paper_scale=False, **overrides):
    spec = builtin(name, paper_scale=paper_scale, **overrides)
    start = time.perf_counter()
    ts = run_closed_loop(spec)
    RUN_SECONDS[(name, paper_scale, tuple(sorted(overrides.items())))] = time.perf_counter() - start
    return spec, ts


@pytest.fixture(scope="session")
def scenario_run():
    """``scenario_run(name, paper_scale=False, **overrides) -> (spec, series)``, cached per session."""
    return _run


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
