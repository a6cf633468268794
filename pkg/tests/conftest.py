import contextlib
import time

import pytest

_VERDICTS: dict[int, str] = {}


class Criterion:
    def __init__(self, number: int, title: str, limit: float | None):
        self.number = number
        self.title = title
        self.limit = limit
        self.detail = ""
        self.elapsed = 0.0


@pytest.fixture
def criterion():
    """Time a block of acceptance checks and remember its verdict for the summary."""

    @contextlib.contextmanager
    def run(number: int, title: str, limit: float | None = None, elapsed_before: float = 0.0):
        c = Criterion(number, title, limit)
        t0 = time.monotonic()
        ok = False
        try:
            yield c
            ok = True
        finally:
            c.elapsed = elapsed_before + time.monotonic() - t0
            in_time = c.limit is None or c.elapsed < c.limit
            verdict = "PASS" if ok and in_time else "FAIL"
            budget = f" (limit {c.limit:.0f}s)" if c.limit is not None else ""
            _VERDICTS[number] = (f"criterion {number} {verdict}: {title}; {c.detail}; "
                                 f"{c.elapsed:.1f}s{budget}")
        assert in_time, f"criterion {number} took {c.elapsed:.1f}s, limit {c.limit}s"

    return run


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
