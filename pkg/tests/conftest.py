import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def lattice(nx, ny, spacing=1.0, x0=0.0, y0=0.0):
    """Grid coordinates ordered by (lat, lon), like loaded fields."""
    xs = x0 + spacing * np.arange(nx)
    ys = y0 + spacing * np.arange(ny)
    lon, lat = np.meshgrid(xs, ys)
    return np.column_stack([lon.ravel(), lat.ravel()])


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; the line is printed
    immediately and repeated in the terminal summary."""
    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
