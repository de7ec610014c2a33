import re

import pytest

_LINES = pytest.StashKey[dict]()
_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_configure(config):
    config.stash[_LINES] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion and fail the test if it did not hold."""

    def record(number: int, title: str, checks: list[tuple[str, bool]]):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{'ok' if passed else 'MISS'} {text}" for text, passed in checks)
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail}"
        request.config.stash[_LINES][number] = line
        print(line)
        assert ok, line

    return record


def pytest_runtest_logreport(report):
    if report.when != "call" or report.passed:
        return
    m = _CRITERION.search(report.nodeid)
    if m is None:
        return
    lines = pytest_runtest_logreport.config.stash[_LINES]
    number = int(m.group(1))
    lines.setdefault(number, f"FAIL  criterion {number}: raised before recording ({report.nodeid})")


def pytest_sessionstart(session):
    pytest_runtest_logreport.config = session.config


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
