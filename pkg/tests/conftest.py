import sys
import time
from pathlib import Path

import pytest

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))

_started = time.perf_counter()
_criteria: dict = {}  # number -> [title, passed, details]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, [title, True, []])
    entry[1] = entry[1] and rep.passed
    entry[2].extend(v for k, v in item.user_properties if k == "detail")


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def parking():
    from sitest.dsl import load_library

    return load_library(FIXTURES / "parking.plan")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    elapsed = time.perf_counter() - _started
    w = terminalreporter
    w.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed, details = _criteria[number]
        extra = f" ({'; '.join(details)})" if details else ""
        w.write_line(f"{'PASS' if passed else 'FAIL'}  {number}. {title}{extra}")
    w.write_line(f"{'PASS' if elapsed < 60 else 'FAIL'}  suite time {elapsed:.1f}s (limit 60s)")
