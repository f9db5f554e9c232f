import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Register the acceptance criterion a test covers; outcome is reported at the end."""

    def register(number, description):
        _CRITERIA[request.node.nodeid] = (number, description)

    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.nodeid in _CRITERIA and (report.when == "call" or report.failed):
        number, description = _CRITERIA[item.nodeid]
        prev = item.stash.get(_STATUS, "PASS")
        item.stash[_STATUS] = "FAIL" if report.failed or prev == "FAIL" else "PASS"
        _RESULTS[number] = (item.stash[_STATUS], description)


_STATUS = pytest.StashKey[str]()
_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, description = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {description}")
