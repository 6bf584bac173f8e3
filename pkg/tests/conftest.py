import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
sys.path.insert(0, str(TESTS))

# criterion name -> list of outcomes ("passed", "failed", "skipped")
_ACCEPTANCE: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): test backing one acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark and mark.args:
            _ACCEPTANCE.setdefault(mark.args[0], [])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if not mark or not mark.args:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE[mark.args[0]].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _ACCEPTANCE.items():
        if not outcomes:
            status = "NOT RUN"
        elif "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIPPED"
        else:
            status = "PASS"
        terminalreporter.write_line(f"[ACCEPTANCE] {name}: {status}")


@pytest.fixture
def pair_dir():
    return FIXTURES / "two_candidates"


@pytest.fixture
def e2e_dir():
    return FIXTURES / "e2e"


@pytest.fixture
def no_network(monkeypatch):
    """Make any HTTP attempt through requests fail loudly."""
    import requests

    calls = []

    def refuse(*args, **kwargs):
        calls.append((args, kwargs))
        raise AssertionError(f"network access attempted: {args!r}")

    monkeypatch.setattr(requests.Session, "request", refuse)
    monkeypatch.setattr(requests, "get", refuse)
    monkeypatch.setattr(requests, "head", refuse)
    return calls
