import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsikit.ale import ExtensionError, ExtensionProblem, mesh_velocity, move_mesh, solve_harmonic_extension
from fsikit.fem import InvertedElementError
from fsikit.mesh import Region


@pytest.fixture(scope="module")
def ext(small_tube):
    return ExtensionProblem(small_tube.submesh([Region.FLUID]).mesh)


def test_zero_data_gives_zero(ext):
    d = solve_harmonic_extension(ext, np.zeros((len(ext.interface_vertices), 3)))
    assert not np.any(d)


def test_linear_field_reproduced(ext):
    x = ext.mesh.vertices
    M = np.array([[0.01, 0.002, 0.0], [-0.003, 0.02, 0.001], [0.0, 0.004, -0.01]])
    g = x @ M.T + np.array([0.1, -0.2, 0.05])
    np.testing.assert_allclose(ext.solve(g), g, atol=1e-12)


def test_uniform_scaling(ext):
    x = ext.mesh.vertices
    d = ext.solve(0.01 * x)
    np.testing.assert_allclose(d, 0.01 * x, atol=1e-12)
    _, q = move_mesh(ext.mesh, d)
    assert q.min_ratio == pytest.approx(1.01**3) and q.max_ratio == pytest.approx(1.01**3)


def test_rigid_translation(ext):
    g = np.tile([0.3, -0.1, 0.2], (ext.mesh.n_vertices, 1))
    np.testing.assert_allclose(ext.solve(g), g, atol=1e-12)


def test_disks_fixed_and_interface_matched(ext):
    rng = np.random.default_rng(0)
    di = 1e-2 * rng.standard_normal((len(ext.interface_vertices), 3))
    d = solve_harmonic_extension(ext, di)
    np.testing.assert_array_equal(d[ext.interface_vertices], di)
    disks = np.setdiff1d(ext.boundary, ext.interface_vertices)
    assert not np.any(d[disks])


def test_bounded_by_boundary_data(ext):
    rng = np.random.default_rng(1)
    d = solve_harmonic_extension(ext, rng.random((len(ext.interface_vertices), 3)))
    # zero on the disks, values in [0, 1) on the interface
    assert d.min() >= -1e-2 and d.max() <= 1.0 + 1e-2


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_extension_is_linear(ext, a, b, seed):
    rng = np.random.default_rng(seed)
    n = len(ext.interface_vertices)
    g1, g2 = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    lhs = solve_harmonic_extension(ext, a * g1 + b * g2)
    rhs = a * solve_harmonic_extension(ext, g1) + b * solve_harmonic_extension(ext, g2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + abs(a) + abs(b)))


def test_non_finite_data_rejected(ext):
    di = np.zeros((len(ext.interface_vertices), 3))
    di[0, 0] = np.nan
    with pytest.raises(ExtensionError):
        solve_harmonic_extension(ext, di)
    with pytest.raises(ValueError):
        move_mesh(ext.mesh, np.full((ext.mesh.n_vertices, 3), np.inf))


def test_inversion_detected(ext):
    x = ext.mesh.vertices
    with pytest.raises(InvertedElementError):
        move_mesh(ext.mesh, -2.0 * x)  # point reflection flips every element


def test_mesh_velocity():
    np.testing.assert_allclose(mesh_velocity([1.0, 2.0], [0.5, 2.0], 0.125), [4.0, 0.0])
