"""P1 tetrahedral finite-element plumbing.

Conventions used by every assembler in the package:

* vector dof of vertex ``v``, component ``c``: ``3*v + c``; pressure dof: ``v``;
* element-local ordering of a 16x16 block: 12 vector dofs (vertex-major)
  followed by the 4 pressure dofs;
* a :class:`BlockSaddleSystem` stores the Jacobian blocks of
  ``[[A, B1^T], [B2, -C]]`` and the residuals ``r1, r2``; the Newton
  correction solves ``K delta = -r``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# symmetric 4-point rule, exact for quadratics on a tet
_QA, _QB = 0.5854101966249685, 0.1381966011250105
QUAD_BARY = np.full((4, 4), _QB) + np.eye(4) * (_QA - _QB)
QUAD_WEIGHTS = np.full(4, 0.25)  # fractions of the element volume


class AssemblyError(RuntimeError):
    pass


class InvertedElementError(AssemblyError):
    def __init__(self, element, message=None):
        self.element = int(element)
        super().__init__(message or f"element {self.element} is inverted")


@dataclass
class ElementGeometry:
    grads: np.ndarray   # (4, 3) or (n, 4, 3), 1/mm
    volume: np.ndarray  # mm^3
    h: np.ndarray       # characteristic length, mm


def geometry(x: np.ndarray, tets: np.ndarray, check: bool = True) -> ElementGeometry:
    """Batched P1 geometry for all tets; ``h = (6 V)^(1/3)``."""
    p = x[tets]
    e = p[:, 1:] - p[:, :1]
    det = np.linalg.det(e)
    if check and np.any(det <= 0):
        raise InvertedElementError(int(np.argmin(det)))
    inv = np.linalg.inv(e)  # columns: gradients of barycentric coords 1..3
    g = np.empty((len(tets), 4, 3))
    g[:, 1:] = np.transpose(inv, (0, 2, 1))
    g[:, 0] = -g[:, 1:].sum(axis=1)
    vol = det / 6.0
    return ElementGeometry(g, vol, np.cbrt(6.0 * np.abs(vol)))


def element_geometry(mesh, tet: int) -> ElementGeometry:
    geo = geometry(mesh.vertices, mesh.tets[[tet]], check=False)
    if geo.volume[0] <= 0:
        raise InvertedElementError(tet)
    return ElementGeometry(geo.grads[0], float(geo.volume[0]), float(geo.h[0]))


# ---------------------------------------------------------------------------

@dataclass
class DofMap:
    """Dof numbering of a P1-P1 vector/pressure pair on ``n_vertices`` vertices.

    ``fixed`` lists constrained vector dofs with prescribed ``values``;
    ``fixed_pressure`` the constrained pressure dofs.
    """
    n_vertices: int
    fixed: np.ndarray = None
    values: np.ndarray = None
    fixed_pressure: np.ndarray = None
    pressure_values: np.ndarray = None

    def __post_init__(self):
        self.fixed = np.zeros(0, dtype=np.int64) if self.fixed is None else np.asarray(self.fixed, dtype=np.int64)
        self.values = np.zeros(len(self.fixed)) if self.values is None else np.asarray(self.values, dtype=float)
        if self.fixed_pressure is None:
            self.fixed_pressure = np.zeros(0, dtype=np.int64)
        self.fixed_pressure = np.asarray(self.fixed_pressure, dtype=np.int64)
        if self.pressure_values is None:
            self.pressure_values = np.zeros(len(self.fixed_pressure))
        if len(self.values) != len(self.fixed) or not np.all(np.isfinite(self.values)):
            raise ValueError("prescribed values must be finite and match the fixed dofs")

    @property
    def n_vector(self) -> int:
        return 3 * self.n_vertices

    @property
    def n_total(self) -> int:
        return 4 * self.n_vertices

    @staticmethod
    def vector_dofs(vertices) -> np.ndarray:
        v = np.asarray(vertices, dtype=np.int64)
        return (3 * v[:, None] + np.arange(3)).ravel()

    def free_mask(self) -> np.ndarray:
        m = np.ones(self.n_total, dtype=bool)
        m[self.fixed] = False
        m[self.n_vector + self.fixed_pressure] = False
        return m

    def element_dofs(self, tets: np.ndarray) -> np.ndarray:
        """(n_el, 16) global dof ids in element-local ordering."""
        vec = (3 * tets[:, :, None] + np.arange(3)).reshape(len(tets), 12)
        return np.concatenate([vec, self.n_vector + tets], axis=1)


@dataclass
class BlockSaddleSystem:
    A: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    C: sp.csr_matrix
    r1: np.ndarray
    r2: np.ndarray

    def __post_init__(self):
        n, m = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (n, n) or self.B1.shape != (m, n) or self.B2.shape != (m, n) \
                or self.C.shape != (m, m) or self.r1.shape != (n,) or self.r2.shape != (m,):
            raise ValueError("incompatible block dimensions")

    @property
    def n_vector(self) -> int:
        return self.A.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.C.shape[0]

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B1.T], [self.B2, -self.C]], format="csr")

    def residual(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2])

    def newton_rhs(self) -> np.ndarray:
        return -self.residual()


def _csr(mat) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat)
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def scatter(dofs: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum element matrices (n_el, k, k) into an n x n CSR matrix."""
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return _csr(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def scatter_vector(dofs: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


class _BlockPattern:
    """Sparsity of the four blocks for one connectivity, with the map from
    element entries to CSR data slots (so repeated assembly is a bincount)."""

    def __init__(self, tets: np.ndarray, n_vertices: int):
        nv = 3 * n_vertices
        vec = (3 * tets[:, :, None] + np.arange(3)).reshape(len(tets), 12)
        self.parts = {}
        for name, rdofs, cdofs, shape in (("A", vec, vec, (nv, nv)), ("B1", tets, vec, (n_vertices, nv)),
                                          ("B2", tets, vec, (n_vertices, nv)),
                                          ("C", tets, tets, (n_vertices, n_vertices))):
            kr, kc = rdofs.shape[1], cdofs.shape[1]
            rows = np.repeat(rdofs, kc, axis=1).ravel()
            cols = np.tile(cdofs, (1, kr)).ravel()
            uniq, inv = np.unique(rows * shape[1] + cols, return_inverse=True)
            indptr = np.searchsorted(uniq // shape[1], np.arange(shape[0] + 1))
            self.parts[name] = (inv.ravel(), indptr, (uniq % shape[1]).astype(np.int32), shape, len(uniq))

    def build(self, name, local):
        inv, indptr, indices, shape, nnz = self.parts[name]
        data = np.bincount(inv, weights=local.ravel(), minlength=nnz)
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=shape)


_PATTERNS = {}


def _pattern(tets: np.ndarray, n_vertices: int) -> _BlockPattern:
    key = (n_vertices, tets.shape, hash(tets.tobytes()))
    pat = _PATTERNS.get(key)
    if pat is None:
        if len(_PATTERNS) > 8:
            _PATTERNS.clear()
        pat = _PATTERNS[key] = _BlockPattern(tets, n_vertices)
    return pat


def assemble_blocks(dofmap: DofMap, tets: np.ndarray, Ke: np.ndarray, Re: np.ndarray) -> BlockSaddleSystem:
    """Scatter 16x16 element Jacobians and 16-residuals into the block system."""
    bad = ~(np.all(np.isfinite(Ke), axis=(1, 2)) & np.all(np.isfinite(Re), axis=1))
    if np.any(bad):
        raise AssemblyError(f"non-finite entries in element {int(np.flatnonzero(bad)[0])}")
    tets = np.asarray(tets, dtype=np.int64)
    pat = _pattern(tets, dofmap.n_vertices)
    dofs = dofmap.element_dofs(tets)
    n3 = dofmap.n_vector
    r = scatter_vector(dofs, Re, dofmap.n_total)
    return BlockSaddleSystem(
        A=pat.build("A", Ke[:, :12, :12]),
        B1=pat.build("B1", np.swapaxes(Ke[:, :12, 12:], 1, 2)),
        B2=pat.build("B2", Ke[:, 12:, :12]),
        C=pat.build("C", -Ke[:, 12:, 12:]),
        r1=r[:n3].copy(), r2=r[n3:].copy(),
    )


def assemble(mesh, dofmap: DofMap, kernel, eliminate: bool = True) -> BlockSaddleSystem:
    """Generic assembly: ``kernel(geometry, tets)`` returns (n_el,16,16), (n_el,16)."""
    geo = geometry(mesh.vertices, mesh.tets)
    Ke, Re = kernel(geo, mesh.tets)
    system = assemble_blocks(dofmap, mesh.tets, np.asarray(Ke, float), np.asarray(Re, float))
    if eliminate:
        apply_dirichlet(system, dofmap)
    return system


def apply_dirichlet(system: BlockSaddleSystem, dofmap: DofMap, increments=None, pressure_increments=None):
    """Row/column elimination for constrained dofs (in place, idempotent).

    ``increments`` are the prescribed Newton corrections on the fixed vector
    dofs (zero when the iterate already satisfies the constraint).  The
    residual is updated so that ``K delta = -r`` still holds on the free dofs.
    """
    n3, m = system.n_vector, system.n_pressure
    g = np.zeros(n3)
    gp = np.zeros(m)
    if increments is not None:
        g[dofmap.fixed] = increments
    if pressure_increments is not None:
        gp[dofmap.fixed_pressure] = pressure_increments
    fv = np.ones(n3)
    fv[dofmap.fixed] = 0.0
    fp = np.ones(m)
    fp[dofmap.fixed_pressure] = 0.0

    if np.any(g) or np.any(gp):
        system.r1 += fv * (system.A @ g + system.B1.T @ gp)
        system.r2 += fp * (system.B2 @ g - system.C @ gp)
    Dv, Dp = sp.diags(fv), sp.diags(fp)
    system.A = _csr(Dv @ system.A @ Dv + sp.diags(1.0 - fv))
    system.B1 = _csr(Dp @ system.B1 @ Dv)
    system.B2 = _csr(Dp @ system.B2 @ Dv)
    system.C = _csr(Dp @ system.C @ Dp + sp.diags(1.0 - fp))
    system.r1[dofmap.fixed] = -g[dofmap.fixed]
    # the pressure row of K is -C, so a unit C diagonal needs r2 = +g there
    system.r2[dofmap.fixed_pressure] = gp[dofmap.fixed_pressure]
    for name in ("A", "B1", "B2", "C"):
        getattr(system, name).eliminate_zeros()
    return system


# ---------------------------------------------------------------------------
# standard matrices

def p1_mass_local(vol: np.ndarray) -> np.ndarray:
    return (vol[:, None, None] / 20.0) * (np.ones((4, 4)) + np.eye(4))


def scalar_mass(x, tets, vol=None) -> sp.csr_matrix:
    if vol is None:
        vol = geometry(x, tets).volume
    return scatter(tets, p1_mass_local(vol), len(x))


def scalar_laplacian(x, tets, geo: ElementGeometry = None) -> sp.csr_matrix:
    geo = geometry(x, tets) if geo is None else geo
    local = geo.volume[:, None, None] * np.einsum("eai,ebi->eab", geo.grads, geo.grads)
    return scatter(tets, local, len(x))


def scalar_convection(x, tets, velocity, geo: ElementGeometry = None) -> sp.csr_matrix:
    """(q, a . grad p) for a P1 nodal velocity field ``a`` (exact quadrature)."""
    geo = geometry(x, tets) if geo is None else geo
    a = np.asarray(velocity).reshape(-1, 3)[tets]  # (e, 4, 3)
    # int phi_i phi_k = V (1 + delta_ik) / 20
    w = (np.ones((4, 4)) + np.eye(4)) / 20.0
    ai = np.einsum("ik,ekd->eid", w, a)  # int phi_i a / V
    local = geo.volume[:, None, None] * np.einsum("eid,ejd->eij", ai, geo.grads)
    return scatter(tets, local, len(x))


def vector_mass(M2: sp.csr_matrix) -> sp.csr_matrix:
    """Component-interleaved 3x copy of a scalar mass matrix."""
    return _csr(sp.kron(M2, sp.identity(3), format="csr"))


def mass_matrices(mesh, dofmap: DofMap = None):
    """(M1, M2): vector and pressure P1 mass matrices."""
    M2 = scalar_mass(mesh.vertices, mesh.tets)
    return vector_mass(M2), M2


def weighted_norm(M, x) -> float:
    q = float(x @ (M @ x))
    if q < 0:
        if q < -1e-12 * max(1.0, float(np.abs(x) @ (abs(M) @ np.abs(x)))):
            raise AssemblyError(f"negative quadratic form {q:.3e}: weighting matrix is not positive")
        q = 0.0
    return float(np.sqrt(q))


def block_mass(M1, M2) -> sp.csr_matrix:
    return _csr(sp.block_diag([M1, M2]))


def boundary_loads(x, tris, traction) -> np.ndarray:
    """Nodal forces of a constant traction vector on triangles (area/3 per vertex)."""
    p = x[tris]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    f = np.zeros((len(x), 3))
    for k in range(3):
        np.add.at(f, tris[:, k], area[:, None] * np.asarray(traction)[None, :] / 3.0)
    return f.ravel()
