import time

import pytest

from nestedstats.simulate import run_simulation1, run_simulation2

SUITE_SEED = 0  # fixed once for the whole suite, never tuned


@pytest.fixture(scope="session")
def sim1_run():
    t0 = time.perf_counter()
    panels = run_simulation1(SUITE_SEED, reps=1000)
    return {p.name: p for p in panels}, time.perf_counter() - t0


@pytest.fixture(scope="session")
def sim1(sim1_run):
    return sim1_run[0]


@pytest.fixture(scope="session")
def sim2():
    return {p.name: p for p in run_simulation2(SUITE_SEED, reps=1000)}


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
