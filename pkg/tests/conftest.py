import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def record_criterion(request):
    """Record one PASS/FAIL line for the test's ``criterion`` marker."""
    number = request.node.get_closest_marker("criterion").args[0]
    lines = request.config.stash.setdefault(_LINES, {})

    def record(passed, detail):
        lines[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number])
        return passed

    yield record
    if number not in lines:
        lines[number] = f"criterion {number:>2}: FAIL  (error before a verdict was reached)"
        print(lines[number])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
