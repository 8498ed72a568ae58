import contextlib

import pytest

_LINES = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line: PASS if the block finishes cleanly."""

    @contextlib.contextmanager
    def record(number, title):
        detail = {}
        try:
            yield detail
        except BaseException as e:
            msg = str(e).splitlines()[0] if str(e) else type(e).__name__
            _LINES[number] = f"FAIL criterion {number}: {title} ({_fmt(detail)}{'; ' if detail else ''}{msg})"
            print(_LINES[number])
            raise
        _LINES[number] = f"PASS criterion {number}: {title} ({_fmt(detail)})"
        print(_LINES[number])

    return record


def _fmt(detail):
    return ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items())


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
