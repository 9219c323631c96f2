import pytest

CRITERIA = {
    1: "model exactness",
    2: "solver correctness",
    3: "flow comparison and rank-one update",
    4: "cutset variational bound",
    5: "renormalization self-similarity",
    6: "internal energy and project/lift",
    7: "exhaustive small-n agreement",
    8: "exponent existence at desk scale",
    9: "two-sided multiplicativity",
    10: "comparability bands",
    11: "cut and separation point bounds",
    12: "monotone exponent in beta",
    13: "reproducibility",
}

_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


def pytest_collection_modifyitems(config, items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(crit, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k, title in CRITERIA.items():
        res = _outcomes.get(k)
        if res is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(res) else "FAIL"
        terminalreporter.write_line(f"criterion {k:2d} {status}: {title}")
