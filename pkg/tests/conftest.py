import numpy as np
import pytest

from scantomo.optics import Geometry
from scantomo.patterns import DetectorSpec

ACCEPTANCE_LINES: list[str] = []


def random_density(rng, d=3, rank=None):
    """Random density matrix from a Ginibre draw of the given rank."""
    if rank is None:
        rank = d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, d=3):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (g + g.conj().T)


@pytest.fixture
def geom():
    return Geometry.multislit()


@pytest.fixture
def det20():
    return DetectorSpec(20.0)


@pytest.fixture
def scan_grid():
    return np.arange(-500.0, 500.0 + 1e-9, 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
