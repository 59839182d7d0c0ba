"""Mixed displacement/pressure hyperelastodynamics of the vessel wall.

Total Lagrangian P1-P1 elements with a PSPG-type least-squares term on the
pressure equation, Newmark time stepping and Newton iteration.  The
unknowns of one time step are ``x = [d (3m), p (m)]``.

With P1 shape functions F, C and the stresses at fixed pressure are
constant per element and the pressure enters linearly, so every element
integral below is evaluated exactly through centroid/mean values.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    BlockSaddleSystem, DofMap, InvertedElementError, apply_dirichlet, assemble_blocks, block_mass,
    geometry, mass_matrices,
)
from .materials import (
    ArteryLayerParams, Kinematics, KinematicsError, MooneyRivlinParams, fiber_frames, material_tangent, pk2,
)
from .mesh import BoundaryTag, Mesh, Region
from .newton import NewtonReport, ToleranceController, newton_solve


@dataclass
class NewmarkState:
    d: np.ndarray
    d_dot: np.ndarray
    d_ddot: np.ndarray
    dt: float = 0.125
    beta: float = 0.625
    gamma: float = 1.0

    def __post_init__(self):
        if not (0 < self.beta <= 1 and 0 <= self.gamma <= 1 and self.dt > 0):
            raise ValueError("Newmark parameters out of range")

    @classmethod
    def at_rest(cls, n_dofs, **kw):
        z = np.zeros(n_dofs)
        return cls(z, z.copy(), z.copy(), **kw)

    def acceleration(self, d_new):
        b, dt = self.beta, self.dt
        return ((d_new - self.d) / (b * dt * dt) - self.d_dot / (b * dt)
                - (1 - 2 * b) / (2 * b) * self.d_ddot)

    def inertia_history(self, rho):
        """r_s such that rho * d_ddot_new = rho/(beta dt^2) d_new - r_s."""
        b, dt = self.beta, self.dt
        return (rho / (b * dt * dt) * self.d + rho / (b * dt) * self.d_dot
                + rho * (1 - 2 * b) / (2 * b) * self.d_ddot)


def newmark_advance(state: NewmarkState, d_new) -> NewmarkState:
    acc = state.acceleration(d_new)
    vel = state.d_dot + state.dt * ((1 - state.gamma) * state.d_ddot + state.gamma * acc)
    return replace(state, d=np.array(d_new, dtype=float), d_dot=vel, d_ddot=acc)


@dataclass
class StructureState:
    d: np.ndarray
    p: np.ndarray

    @property
    def x(self):
        return np.concatenate([self.d, self.p])

    @classmethod
    def from_x(cls, x, n):
        return cls(x[:3 * n].copy(), x[3 * n:].copy())


@dataclass
class StructureProblem:
    """Reference structure mesh, materials and fixed data.

    ``materials`` maps a region to MooneyRivlinParams or ArteryLayerParams.
    Dirichlet: d = 0 on SOLID_ENDS.
    """
    mesh: Mesh
    materials: Dict[int, object]
    rho: float = 1.2
    interface_vertices: np.ndarray = None
    fixed_tags: tuple = (BoundaryTag.SOLID_ENDS,)
    stabilize: bool = True

    def __post_init__(self):
        m = self.mesh
        self.n = m.n_vertices
        self.geo = geometry(m.vertices, m.tets)
        fixed_v = np.unique(np.concatenate([m.tagged_vertices(t) for t in self.fixed_tags]))
        self.dofmap = DofMap(self.n, fixed=DofMap.vector_dofs(fixed_v))
        self.M1, self.M2 = mass_matrices(m)
        self.M = block_mass(self.M1, self.M2)
        self.groups = []
        frames = None
        mu = np.empty(m.n_tets)
        for region, params in self.materials.items():
            idx = np.flatnonzero(m.regions == int(region))
            if len(idx) == 0:
                continue
            fibers = None
            if isinstance(params, ArteryLayerParams):
                if frames is None:
                    frames = fiber_frames(m.vertices, m.tets)
                fibers = params.fiber_vectors(frames[idx])
            self.groups.append((idx, params, fibers))
            mu[idx] = params.mu_l
        covered = np.concatenate([g[0] for g in self.groups]) if self.groups else np.zeros(0, int)
        if len(covered) != m.n_tets:
            raise ValueError("every structure element needs a material")
        self.tau = self.geo.h**2 / (4.0 * mu) if self.stabilize else np.zeros(m.n_tets)
        if self.interface_vertices is None:
            self.interface_vertices = m.tagged_vertices(BoundaryTag.INTERFACE)

    @property
    def kappa(self) -> np.ndarray:
        k = np.empty(self.mesh.n_tets)
        for idx, params, _ in self.groups:
            k[idx] = params.kappa
        return k

    def zero_state(self) -> StructureState:
        return StructureState(np.zeros(3 * self.n), np.zeros(self.n))


def structure_kernel(problem: StructureProblem, d, p, r_hist, rho_hat):
    """Element Jacobians (n_el, 16, 16) and residuals (n_el, 16).

    ``r_hist`` is the nodal Newmark history field r_s (3m); the consistent
    mass terms rho_hat*M1*d - M1*r_s are added globally by the caller, only
    their centroid values enter the stabilization here.
    """
    mesh, geo = problem.mesh, problem.geo
    tets = mesh.tets
    G, V, tau = geo.grads, geo.volume, problem.tau
    ne = len(tets)
    de = d.reshape(-1, 3)[tets]                      # (e, 4, 3)
    pe = p[tets]                                      # (e, 4)
    F = np.eye(3) + np.einsum("eai,eaj->eij", de, G)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise InvertedElementError(int(np.argmin(J)))
    Finv = np.linalg.inv(F)
    FinvT = np.swapaxes(Finv, 1, 2)
    C = np.swapaxes(F, 1, 2) @ F
    pbar = pe.mean(axis=1)

    S = np.empty((ne, 3, 3))
    D = np.empty((ne, 3, 3, 3, 3))
    kinv = np.empty(ne)
    for idx, params, fibers in problem.groups:
        kin = Kinematics.from_C(C[idx], fibers, F=F[idx])
        S[idx] = pk2(kin, pbar[idx], params).S
        D[idx] = material_tangent(params, kin, pbar[idx]).dSdC
        kinv[idx] = 1.0 / params.kappa

    K = np.zeros((ne, 16, 16))
    R = np.zeros((ne, 16))
    Vc = V[:, None, None]

    # internal force and displacement stiffness
    P = F @ S
    R[:, :12] = (V[:, None, None] * np.einsum("eij,eaj->eai", P, G)).reshape(ne, 12)
    Bm = np.einsum("eil,eaj->eailj", F, G).reshape(ne, 12, 9)
    K_mat = 2.0 * Vc * (Bm @ D.reshape(ne, 9, 9) @ np.swapaxes(Bm, 1, 2))
    GSG = np.einsum("eai,eij,ebj->eab", G, S, G)
    K_geo = np.einsum("eab,ik->eaibk", V[:, None, None] * GSG, np.eye(3)).reshape(ne, 12, 12)
    K[:, :12, :12] = K_mat + K_geo

    # h_a = F^-T G_a, pressure coupling
    h = np.einsum("eij,eaj->eai", FinvT, G)          # (e, 4, 3)
    JV4 = (J * V / 4.0)[:, None, None]
    b1t = -(JV4 * h).reshape(ne, 12)                  # dR1_(a,i)/dp_c, same for every c
    K[:, :12, 12:] = b1t[:, :, None]
    R[:, 12:] = -(V * (J - 1.0) / 4.0)[:, None]
    K[:, 12:, :12] = b1t[:, None, :]                  # -(V/4) J h_b

    Mp = (V[:, None, None] / 20.0) * (np.ones((4, 4)) + np.eye(4))
    R[:, 12:] -= kinv[:, None] * np.einsum("eab,eb->ea", Mp, pe)
    K[:, 12:, 12:] = -kinv[:, None, None] * Mp

    if np.any(tau):
        rbar = r_hist.reshape(-1, 3)[tets].mean(axis=1)
        dbar = de.mean(axis=1)
        gradp = np.einsum("ea,eai->ei", pe, G)
        g = np.einsum("eij,ej->ei", FinvT, gradp)     # F^-T grad p
        res = rbar - rho_hat * dbar - J[:, None] * g
        tV = (tau * V)
        R[:, 12:] += tV[:, None] * np.einsum("ei,eci->ec", res, h)
        # d/dp_a
        hh = np.einsum("eai,ebi->eab", h, h)
        K[:, 12:, 12:] -= (tV * J)[:, None, None] * hh
        # d/dd_bk, rows c
        g_h = np.einsum("ei,eci->ec", g, h)           # (e, c)
        r_h = np.einsum("ei,ebi->eb", res, h)         # (e, b)
        blk = (-rho_hat / 4.0 * h[:, :, None, :]      # (e, c, b, k) with b broadcast
               - J[:, None, None, None] * h[:, None, :, :] * g_h[:, :, None, None]
               + J[:, None, None, None] * hh[:, :, :, None] * g[:, None, None, :]
               - r_h[:, None, :, None] * h[:, :, None, :])
        K[:, 12:, :12] += tV[:, None, None] * blk.reshape(ne, 4, 12)
    return K, R


def assemble_structure(problem: StructureProblem, state: StructureState, history: NewmarkState,
                       load=None, eliminate=True) -> BlockSaddleSystem:
    """Residual and Jacobian of one Newmark step at ``state``.

    ``load`` is the nodal interface force g_n (3m); r1, r2 are residuals, so
    the Newton right-hand side is their negative.
    """
    rho_hat = problem.rho / (history.beta * history.dt**2)
    r_hist = history.inertia_history(problem.rho)
    Ke, Re = structure_kernel(problem, state.d, state.p, r_hist, rho_hat)
    system = assemble_blocks(problem.dofmap, problem.mesh.tets, Ke, Re)
    system.A = (system.A + rho_hat * problem.M1).tocsr()
    system.r1 = system.r1 + problem.M1 @ (rho_hat * state.d - r_hist)
    if load is not None:
        system.r1 = system.r1 - load
    if eliminate:
        apply_dirichlet(system, problem.dofmap)
    return system


def solve_structure_step(problem: StructureProblem, history: NewmarkState, load, linear_solve: Callable,
                         tolerances: ToleranceController = None, guess: StructureState = None,
                         max_newton=25):
    """Newton solve of one time step; returns (StructureState, NewtonReport)."""
    tolerances = tolerances or ToleranceController()
    n = problem.n
    guess = guess or StructureState(history.d.copy(), np.zeros(n))
    x0 = guess.x
    x0[problem.dofmap.fixed] = 0.0

    def assemble_fn(x, first):
        try:
            return assemble_structure(problem, StructureState.from_x(x, n), history, load)
        except KinematicsError as exc:
            raise InvertedElementError(-1, str(exc)) from exc

    x, _, report = newton_solve(x0, assemble_fn, linear_solve, problem.M, tolerances,
                                max_newton=max_newton, field_name="structure")
    return StructureState.from_x(x, n), report


def constraint_residual(problem: StructureProblem, state: StructureState, mode="element",
                        history: NewmarkState = None, load=None) -> float:
    """Relative mismatch of the mixed constraint p + kappa (J - 1) = 0.

    mode
        ``"element"``: ||pbar + kappa (J - 1)||_L2 / ||pbar||_L2 with the
        element-mean pressure, the pointwise form of the constraint.
        ``"projected"``: ||p + kappa M2^-1 b(J - 1)||_M / ||p||_M, the L2
        projection of the constraint onto P1 without the stabilization term.
        ``"discrete"``: ||kappa M2^-1 r2||_M / ||p||_M with r2 the full
        (stabilized) pressure residual; needs ``history`` (and ``load``).
    """
    mesh, geo = problem.mesh, problem.geo
    kappa = problem.kappa
    if mode == "element":
        de = state.d.reshape(-1, 3)[mesh.tets]
        F = np.eye(3) + np.einsum("eai,eaj->eij", de, geo.grads)
        J = np.linalg.det(F)
        pbar = state.p[mesh.tets].mean(axis=1)
        diff = pbar + kappa * (J - 1.0)
        den = np.sqrt(np.sum(geo.volume * pbar**2))
        return float(np.sqrt(np.sum(geo.volume * diff**2)) / den) if den > 0 else float(np.abs(diff).max())
    M2 = problem.M2.tocsc()
    if mode == "projected":
        de = state.d.reshape(-1, 3)[mesh.tets]
        J = np.linalg.det(np.eye(3) + np.einsum("eai,eaj->eij", de, geo.grads))
        b = np.bincount(mesh.tets.ravel(), weights=np.repeat(kappa * geo.volume * (J - 1.0) / 4.0, 4),
                        minlength=problem.n)
        diff = state.p + spla.spsolve(M2, b)
    elif mode == "discrete":
        if history is None:
            raise ValueError("discrete constraint residual needs the Newmark history")
        system = assemble_structure(problem, state, history, load, eliminate=False)
        # rows of r2 are scaled by 1/kappa on the element mass; undo it nodally
        kn = np.bincount(mesh.tets.ravel(), weights=np.repeat(kappa * geo.volume, 4), minlength=problem.n)
        vn = np.bincount(mesh.tets.ravel(), weights=np.repeat(geo.volume, 4), minlength=problem.n)
        diff = (kn / vn) * spla.spsolve(M2, system.r2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    den = np.sqrt(state.p @ (problem.M2 @ state.p))
    num = np.sqrt(diff @ (problem.M2 @ diff))
    return float(num / den) if den > 0 else float(num)
