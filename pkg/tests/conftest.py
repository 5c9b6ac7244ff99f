import numpy as np
import pytest

from swimfsi.config import SimConfig
from swimfsi.fe import MiniSpace
from swimfsi.mesh import generate_ball_in_box
from swimfsi.stepper import Simulation


@pytest.fixture(scope="session")
def meshes():
    return generate_ball_in_box(1.0, 0.3, 8)


@pytest.fixture(scope="session")
def mesh(meshes):
    return meshes[0]


@pytest.fixture(scope="session")
def solid(meshes):
    return meshes[1]


@pytest.fixture(scope="session")
def space(mesh):
    return MiniSpace(mesh)


@pytest.fixture(scope="session")
def sim(mesh, solid):
    cfg = SimConfig().with_values(geometry={"resolution": 8}, time={"dt": 0.02, "t_end": 0.1})
    return Simulation(cfg, mesh=mesh, solid=solid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
