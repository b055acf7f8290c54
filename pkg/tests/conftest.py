import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


class _Recorder:
    def __init__(self, config):
        self.lines = config.stash[ACCEPTANCE_KEY]

    def __call__(self, number: int, ok: bool, detail: str):
        """Record one acceptance line, print it, and fail the test when the check fails."""
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
        self.lines.append(line)
        print(line)
        assert ok, line

    def skip(self, number: int, reason: str):
        self.lines.append(f"[SKIP] criterion {number:2d}: {reason}")
        pytest.skip(reason)


@pytest.fixture
def criterion(request):
    return _Recorder(request.config)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
