import numpy as np
import pytest

from robust_tdoa.harness.config import DEFAULT_CALIB, DEFAULT_SOURCE, default_topology
from robust_tdoa.measurement import SignalParams

SOURCE = np.array(DEFAULT_SOURCE)
CALIB = np.array(DEFAULT_CALIB)


@pytest.fixture
def net2():
    return default_topology(2)


@pytest.fixture
def net3():
    return default_topology(3)


@pytest.fixture
def source():
    return SOURCE.copy()


@pytest.fixture
def calib():
    return CALIB.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def noiseless():
    return SignalParams.fixed(1e-30)


_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = (report.outcome, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, duration, detail = _criteria[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict} {name} ({duration:.1f}s) {detail}")
