import numpy as np
import pytest

from viscontact import experiments as ex
from viscontact.config import RunConfig
from viscontact.duality import certify_trajectory
from viscontact.fem import FESpace
from viscontact.geometry import GAMMA1, GAMMA2, Mesh, build_reference_domain, triangulate, unit_square_domain

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ref_cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def ref_space(ref_cfg):
    return ex.reference_space(ref_cfg.h_interior, ref_cfg.h_contact)


@pytest.fixture(scope="session")
def visco_run(ref_cfg):
    return ex.simulate(ref_cfg)


@pytest.fixture(scope="session")
def elastic_run(ref_cfg):
    return ex.simulate(ref_cfg, b=0.0)


@pytest.fixture(scope="session")
def visco_report(visco_run):
    return certify_trajectory(visco_run, 500)


@pytest.fixture(scope="session")
def coarse_space():
    """Small reference-geometry mesh (about 100 DOFs) for dense checks."""
    return FESpace(triangulate(build_reference_domain(), 1.2, 0.5))


@pytest.fixture(scope="session")
def square_mesh():
    return triangulate(unit_square_domain(), 1.0, 1.0)


def two_triangle_square(clamp_bottom=True):
    """Unit square split along its diagonal, optionally clamped on the bottom edge."""
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    tags = (GAMMA1 if clamp_bottom else GAMMA2, GAMMA2, GAMMA2, GAMMA2)
    normals = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    return Mesh(nodes, tris, edges, tags, normals, np.zeros(4, dtype=bool))
