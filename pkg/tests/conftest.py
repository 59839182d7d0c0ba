import numpy as np
import pytest

from fsikit.mesh import Mesh, Region, BoundaryTag, generate_tube_mesh


@pytest.fixture(scope="session")
def tiny_tube():
    return generate_tube_mesh(n_axial=4, n_circ=8, n_radial_fluid=1, n_radial_layer=1)


@pytest.fixture(scope="session")
def small_tube():
    return generate_tube_mesh(n_axial=6, n_circ=12, n_radial_fluid=1, n_radial_layer=1)


def one_tet_mesh(x=None, region=Region.FLUID):
    if x is None:
        x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tets = np.array([[0, 1, 2, 3]])
    btris = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    return Mesh(x, tets, [int(region)], btris, [int(BoundaryTag.OUTLET)] * 4)


def interface_pressure_load(mesh, p=1.332):
    """Nodal forces of a uniform pressure on the INTERFACE triangles of a wall mesh."""
    tris = mesh.btris[mesh.btri_tags == BoundaryTag.INTERFACE]
    x = mesh.vertices
    nrm = 0.5 * np.cross(x[tris[:, 1]] - x[tris[:, 0]], x[tris[:, 2]] - x[tris[:, 0]])
    load = np.zeros((len(x), 3))
    for k in range(3):
        np.add.at(load, tris[:, k], -p * nrm / 3)
    return load.ravel()


def wall_system(tube, kappa=1e5):
    """First Newton system of a pressurized wall at rest (eliminated)."""
    from fsikit.materials import MooneyRivlinParams
    from fsikit.structure import NewmarkState, StructureProblem, assemble_structure
    wall = tube.submesh([Region.MEDIA, Region.ADVENTITIA]).mesh
    mr = MooneyRivlinParams(kappa=kappa)
    pb = StructureProblem(wall, {Region.MEDIA: mr, Region.ADVENTITIA: mr})
    s = assemble_structure(pb, pb.zero_state(), NewmarkState.at_rest(3 * pb.n), interface_pressure_load(wall))
    return pb, s


def lumen_system(tube, g=1.332):
    """First Newton system of the fluid at rest with the inlet pulse (eliminated)."""
    from fsikit.fluid import DomainMotion, FluidParams, FluidProblem, assemble_fluid
    lumen = tube.submesh([Region.FLUID]).mesh
    pb = FluidProblem(lumen, FluidParams(g_in=(0, 0, g)))
    s = assemble_fluid(pb, pb.zero_state(), np.zeros(3 * pb.n), DomainMotion.still(pb.n), t=0.1)
    return pb, s


@pytest.fixture(scope="session")
def tiny_wall_system(tiny_tube):
    return wall_system(tiny_tube)


@pytest.fixture(scope="session")
def tiny_lumen_system(tiny_tube):
    return lumen_system(tiny_tube)


@pytest.fixture(scope="session")
def short_tube():
    """Element aspect ratios like the desk mesh, but few elements."""
    return generate_tube_mesh(length=3.0, n_axial=6, n_circ=12, n_radial_fluid=1, n_radial_layer=1)


@pytest.fixture(scope="session")
def short_wall_system(short_tube):
    return wall_system(short_tube)


@pytest.fixture(scope="session")
def short_lumen_system(short_tube):
    return lumen_system(short_tube)


# acceptance lines, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
