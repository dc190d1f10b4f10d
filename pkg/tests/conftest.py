from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

_acceptance: dict[int, tuple[str, str]] = {}


@pytest.fixture(autouse=True)
def _results_dir(tmp_path, monkeypatch):
    # keep the CLI's results index out of the working tree
    monkeypatch.setenv("MASSCOVER_RESULTS_DIR", str(tmp_path / "results"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _acceptance[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
