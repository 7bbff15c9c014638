import pytest

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture(scope="session")
def criteria_log(request):
    """Acceptance outcomes, ``(number, status, title, detail)``; printed at the end of the run."""
    return request.config.stash[_CRITERIA]


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_CRITERIA, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(log):
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
