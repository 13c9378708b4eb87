import numpy as np
import pytest

from regime_hjb.closed_form import build_closed_form

_CRITERIA = {}


@pytest.fixture
def unit_cf():
    return build_closed_form(1, 1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def unit(unit_cf):
    return unit_cf.params()


@pytest.fixture
def asym_cf():
    return build_closed_form(2, 1.0, 2.0, 0.5, 0.3)


@pytest.fixture
def asym(asym_cf):
    return asym_cf.params()


@pytest.fixture
def criterion():
    """Record an acceptance outcome: ``criterion(n, ok, detail)``.

    Records a failure first so an exception inside the test still shows up as
    FAIL in the summary.
    """
    def record(n, ok, detail=""):
        _CRITERIA[n] = (bool(ok), detail)
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def log_radii(lo=-2, hi=3, n=200):
    return np.logspace(lo, hi, n)
