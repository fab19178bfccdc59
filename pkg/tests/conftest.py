from __future__ import annotations

import pytest

_AC_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_AC_LINES] = []


@pytest.fixture
def acceptance_report(request):
    """Call with ``(criterion, passed, detail)``; lines are echoed at the end of the run."""
    lines = request.config.stash[_AC_LINES]

    def report(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_AC_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(line)
