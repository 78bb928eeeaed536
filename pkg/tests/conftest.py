"""Shared fixtures plus the acceptance-criteria summary.

Tests marked ``@pytest.mark.criterion(n)`` report into a registry; the
terminal summary prints one pass/fail line per criterion so the acceptance
status is readable at a glance without digging through the dot stream.
"""
import pytest

CRITERIA = {
    1: "analytic gradients match central finite differences",
    2: "tabular TD critic converges to analytic values",
    3: "operator identities hold bit for bit",
    4: "expectile fit is monotone in tau and tracks the max",
    5: "online: actor-critic beats filtered BC and reranking",
    6: "offline: expectile+AWR > filtered BC > BC, sarsa+AWR > BC",
    7: "two-level trend: slope in window, token error >= utterance",
    8: "baseline subtraction reduces per-coordinate gradient variance",
    9: "identical config and seed give byte-identical metrics",
}

_results: dict[int, bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(n): marks a test as acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = int(mark.args[0])
    if rep.when == "call":
        _results[n] = rep.passed
    elif rep.when == "setup" and (rep.failed or rep.skipped):
        _results[n] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in _results:
            status = "PASS" if _results[n] else "FAIL"
            terminalreporter.write_line(f"criterion {n} ({CRITERIA[n]}): {status}")
