import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Append one PASS/FAIL line for an acceptance criterion to the run summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(number: int, name: str, passed: bool, detail: str, runtime_s: float, limit_s: float):
        status = "PASS" if passed else "FAIL"
        line = f"{status} criterion {number} {name}: {detail} [runtime {runtime_s:.2f} s, limit {limit_s:g} s]"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
