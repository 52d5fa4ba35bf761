import time

import pytest

_LINES = []


class Criterion:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit
        self.start = time.perf_counter()
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def finish(self, note=""):
        within = self.elapsed < self.limit
        self.check(f"runtime < {self.limit:g} s", within, f"{self.elapsed:.1f} s")
        ok = all(c[1] for c in self.checks)
        failed = [c[0] for c in self.checks if not c[1]]
        parts = "; ".join(f"{n}: {d}" if d else n for n, _, d in self.checks)
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title} [{parts}]"
        if note:
            line += f" ({note})"
        _LINES.append((self.number, line))
        print(line)
        assert ok, f"criterion {self.number} failed: {', '.join(failed)}"


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
