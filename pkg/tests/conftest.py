import functools

import pytest
from hypothesis import settings

from neumann_ocp.coeffs import make_example
from neumann_ocp.domain import make_lshape
from neumann_ocp.mesh import build_mesh_family

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

# lines reported by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def lshape_family(mu: float, max_level: int):
    return tuple(build_mesh_family(make_lshape(mu), max_level))


@pytest.fixture(scope="session")
def case():
    return make_example()


@pytest.fixture(scope="session")
def mesh3():
    return lshape_family(1.0, 5)[2]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
