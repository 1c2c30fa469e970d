import numpy as np
import pytest

from p2pagg import field


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def py_field(values):
    """Python-int view of a uint64 field array, for oracle arithmetic."""
    return [int(v) for v in np.asarray(values).ravel()]


P = field.P


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one ``(criterion, passed, detail)`` line for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, passed: bool, detail: str) -> bool:
        lines.append((number, passed, detail))
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
