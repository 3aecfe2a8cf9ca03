import numpy as np
import pytest
from hypothesis import settings

from cellforce.cellmodel import CellSpec, polygonize
from cellforce.mesh import SubdomainSpec, generate_cell_conforming_mesh, generate_hole_mesh, generate_square_mesh

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")

OMEGA_W = SubdomainSpec.square(5.0)

# criterion number -> (passed, one-line detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (bool(passed), f"{title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def square_mesh_h1():
    return generate_square_mesh(10.0, 1.0, OMEGA_W)


@pytest.fixture(scope="session")
def octagon():
    return polygonize(CellSpec((0.0, 0.0), 3.0), 8, equal_area=False)


@pytest.fixture(scope="session")
def octagon_hole_mesh(octagon):
    return generate_hole_mesh(10.0, octagon, 0.5, OMEGA_W)


@pytest.fixture(scope="session")
def octagon_cell_mesh(octagon):
    return generate_cell_conforming_mesh(10.0, octagon, 0.5, OMEGA_W)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
