import numpy as np
import pytest


def aligned_l2(recovered: np.ndarray, original: np.ndarray) -> float:
    """Relative L2 distance after peak normalization, best integer shift and reflection."""
    best = np.inf
    b = original / original.max()
    for r in (recovered, recovered[::-1]):
        padded = np.pad(r, (original.size, original.size))
        s = int(np.argmax(np.correlate(padded, original, "valid")))
        seg = padded[s: s + original.size]
        a = seg / seg.max()
        best = min(best, np.linalg.norm(a - b) / np.linalg.norm(b))
    return best


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, passed: bool, detail: str):
        prev = results.get(number)
        ok = bool(passed) and (prev is None or prev[0])
        text = detail if prev is None else f"{prev[1]}; {detail}"
        results[number] = (ok, text)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
