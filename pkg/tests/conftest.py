import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_criteria = {}
_details = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.failed or report.skipped:
        _criteria[marker] = False
    elif report.when == "call":
        _criteria.setdefault(marker, True)
    for key, value in report.user_properties if report.when == "call" else ():
        if key == "detail":
            _details.setdefault(marker, []).append(value)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        detail = "; ".join(_details.get(n, []))
        line = f"criterion {n}: {'PASS' if _criteria[n] else 'FAIL'}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
