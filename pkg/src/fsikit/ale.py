"""Harmonic mesh motion for the fluid domain.

The interface displacement is extended into the reference fluid mesh by
three scalar Laplace solves (one per component).  The lateral fluid wall
is the interface itself, so only the inlet and outlet disks get zero data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .fem import InvertedElementError, scalar_laplacian
from .mesh import BoundaryTag, Mesh, tet_volumes


class ExtensionError(RuntimeError):
    pass


class ExtensionProblem:
    """Laplace operator of the reference fluid mesh with its boundary split.

    The interior block is factorized once and reused for every solve.
    """

    def __init__(self, mesh: Mesh, interface_vertices=None):
        self.mesh = mesh
        n = mesh.n_vertices
        if interface_vertices is None:
            interface_vertices = mesh.tagged_vertices(BoundaryTag.INTERFACE)
        self.interface_vertices = np.asarray(interface_vertices, dtype=np.int64)
        self.boundary = np.unique(mesh.btris)
        self.interior = np.setdiff1d(np.arange(n), self.boundary)
        L = scalar_laplacian(mesh.vertices, mesh.tets).tocsr()
        self.L_ii = L[self.interior][:, self.interior].tocsc()
        self.L_ib = L[self.interior][:, self.boundary].tocsr()
        try:
            self._lu = spla.splu(self.L_ii) if len(self.interior) else None
        except RuntimeError as exc:  # singular factor
            raise ExtensionError(f"harmonic extension matrix is singular: {exc}") from exc

    def boundary_data(self, d_interface):
        """Full boundary data: interface values, zero on the inlet/outlet disks."""
        g = np.zeros((self.mesh.n_vertices, 3))
        g[self.interface_vertices] = np.asarray(d_interface, dtype=float).reshape(-1, 3)
        return g

    def solve(self, g):
        """Extension of nodal boundary data ``g`` (n, 3); interior entries of ``g`` are ignored."""
        g = np.asarray(g, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(g[self.boundary])):
            raise ExtensionError("non-finite boundary data")
        d = np.zeros_like(g)
        d[self.boundary] = g[self.boundary]
        if self._lu is not None:
            rhs = -(self.L_ib @ g[self.boundary])
            d[self.interior] = self._lu.solve(rhs)
            if not np.all(np.isfinite(d)):
                raise ExtensionError("extension solve broke down")
        return d


def solve_harmonic_extension(problem: ExtensionProblem, d_interface) -> np.ndarray:
    """Fluid mesh displacement (n, 3) for interface displacement (n_interface, 3)."""
    return problem.solve(problem.boundary_data(d_interface))


@dataclass
class MeshQuality:
    min_ratio: float   # min current/reference element volume
    max_ratio: float


def move_mesh(mesh: Mesh, d_f):
    """Current mesh ``x0 + d_f`` and its volume-ratio report.

    Raises InvertedElementError naming the first non-positive element.
    """
    d_f = np.asarray(d_f, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(d_f)):
        raise ValueError("mesh displacement has non-finite entries")
    x = mesh.vertices + d_f
    v0 = tet_volumes(mesh.vertices, mesh.tets)
    v = tet_volumes(x, mesh.tets)
    bad = np.flatnonzero(v <= 0)
    if len(bad):
        raise InvertedElementError(bad[0], f"mesh motion inverts fluid element {bad[0]}")
    ratio = v / v0
    return mesh.moved(d_f), MeshQuality(float(ratio.min()), float(ratio.max()))


def mesh_velocity(d_new, d_old, dt):
    return (np.asarray(d_new) - np.asarray(d_old)) / dt
