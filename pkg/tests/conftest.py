import warnings

import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion and assert it."""
    lines = request.config.stash[_LINES_KEY]

    def report(number, name, ok, detail):
        line = f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_floor_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="flooring", category=RuntimeWarning)
        yield
