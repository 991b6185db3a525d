import numpy as np
import pytest

from aaolearn.grid import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid():
    return Grid()


@pytest.fixture
def small_grid():
    return Grid(nx=21, nt=20)


def smooth_field(grid, rng, modes=4, dirichlet=True):
    """Random field built from a few sine modes with polynomial time profiles."""
    tau = grid.t / grid.t_hi
    out = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        a = rng.normal(size=3) / k**2
        out += np.outer(a[0] + a[1] * tau + a[2] * tau**2, np.sin(k * np.pi * grid.x))
    if not dirichlet:
        out += rng.normal()
    return out


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; printed once at the end of the run."""

    def record(criterion, passed, detail=""):
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(str(k)[0]), str(k))):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
