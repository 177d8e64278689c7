from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from colobench.bootstrap import load_cluster_config
from colobench.experiment_model import load_suite

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def streaming_suite():
    return load_suite(FIXTURES / "streaming_with_db.yaml")


@pytest.fixture
def cluster():
    """The minimal cluster with its elided node entries filled in (rpi, small_server)."""
    return load_cluster_config(FIXTURES / "cluster.yaml")


_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker
    if report.when == "setup" and report.passed:
        return
    _, verdict, elapsed = _CRITERIA.get(number, (title, "PASS", 0.0))
    if not report.passed:
        verdict = "FAIL"
    _CRITERIA[number] = (title, verdict, elapsed + report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  ({duration:.2f}s)")
