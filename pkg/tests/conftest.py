import numpy as np
import pytest

from compatdg.mesh import generate_structured, read_mesh
from compatdg.operators import build

DATA = __import__("pathlib").Path(__file__).parent / "data"
UNSTRUCTURED_MESH = DATA / "unstructured_12.mesh"


@pytest.fixture(scope="session")
def periodic_mesh():
    return generate_structured(6, 6, (0.0, 1.0, 0.0, 1.0), periodic=True)


@pytest.fixture(scope="session")
def file_mesh():
    return read_mesh(UNSTRUCTURED_MESH, periodic=True)


@pytest.fixture(scope="session")
def ops_by_degree(periodic_mesh):
    return {N: build(periodic_mesh, N) for N in range(4)}


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1709))


# one summary line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
