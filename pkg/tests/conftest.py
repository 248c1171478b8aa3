import pytest
import torch

_criterion_outcomes: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(name): shipping criterion this test certifies; the run "
        "summary prints one PASS/FAIL line per criterion",
    )


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    """Pin compute to one thread: bitwise-stable reductions, honest timings."""
    torch.set_num_threads(1)
    yield


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or report.outcome != "passed":
        _criterion_outcomes.setdefault(name, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criterion_outcomes.items():
        if "failed" in outcomes:
            label = "FAIL"
        elif "passed" in outcomes:
            label = "PASS"
        else:
            label = "SKIP"
        terminalreporter.write_line(f"{label}  {name}")
