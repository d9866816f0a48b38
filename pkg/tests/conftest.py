import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(i, ok, detail)`` records an acceptance outcome for the summary."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(i: int, ok: bool, detail: str) -> bool:
        results[i] = (bool(ok), detail)
        print(f"criterion {i}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(results):
        ok, detail = results[i]
        terminalreporter.write_line(f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
