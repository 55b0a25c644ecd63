import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}
_NUM_CRITERIA = 12


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(number: int, ok: bool, detail: str):
        _RESULTS[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in range(1, _NUM_CRITERIA + 1):
        ok, detail = _RESULTS.get(k, (False, "not run or errored before a result"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
