"""Stabilized P1-P1 ALE Navier-Stokes on the moving fluid mesh.

Backward Euler in time, SUPG/PSPG stabilization, Newton iteration.  The
element integrals use the symmetric 4-point rule, which is exact for every
term here (all integrands are at most quadratic on a P1 element).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import (
    QUAD_BARY, BlockSaddleSystem, DofMap, apply_dirichlet, assemble_blocks, block_mass, boundary_loads,
    geometry, mass_matrices,
)
from .mesh import BoundaryTag, Mesh
from .newton import ToleranceController, newton_solve

POISE = 0.1  # kPa*ms


def poise_to_kpa_ms(mu_poise: float) -> float:
    """1 P = 0.1 Pa*s = 1e-4 kPa*s = 0.1 kPa*ms."""
    return mu_poise * POISE


@dataclass(frozen=True)
class FluidParams:
    rho: float = 1.0                   # mg/mm^3
    mu: float = poise_to_kpa_ms(0.035)  # kPa*ms
    dt: float = 0.125                  # ms
    g_in: tuple = (0.0, 0.0, 1.332)    # kPa
    pulse_duration: float = 1.0        # ms

    def __post_init__(self):
        if min(self.rho, self.mu, self.dt) <= 0:
            raise ValueError("rho, mu and dt must be positive")

    def inlet_traction(self, t: float) -> np.ndarray:
        return np.asarray(self.g_in, dtype=float) if t <= self.pulse_duration + 1e-12 else np.zeros(3)


@dataclass
class FluidState:
    u: np.ndarray
    p: np.ndarray

    @property
    def x(self):
        return np.concatenate([self.u, self.p])

    @classmethod
    def from_x(cls, x, n):
        return cls(x[:3 * n].copy(), x[3 * n:].copy())


@dataclass
class DomainMotion:
    d: np.ndarray  # mesh displacement from the reference configuration (3m)
    w: np.ndarray  # mesh velocity (3m)

    @classmethod
    def still(cls, n):
        return cls(np.zeros(3 * n), np.zeros(3 * n))


@dataclass
class FluidProblem:
    """Reference fluid mesh plus fixed data.  Dirichlet: u = w on the interface
    (and on any extra ``wall_tags``)."""
    mesh: Mesh
    params: FluidParams = FluidParams()
    stabilize: bool = True
    wall_tags: tuple = (BoundaryTag.INTERFACE,)
    linearize_tau: bool = True

    def __post_init__(self):
        m = self.mesh
        self.n = m.n_vertices
        self.wall_vertices = np.unique(np.concatenate([m.tagged_vertices(t) for t in self.wall_tags]))
        self.interface_vertices = m.tagged_vertices(BoundaryTag.INTERFACE)
        self.fixed = DofMap.vector_dofs(self.wall_vertices)
        self.inlet_tris = m.btris[m.btri_tags == BoundaryTag.INLET]
        self.outlet_tris = m.btris[m.btri_tags == BoundaryTag.OUTLET]
        # the Newton weighting uses reference-mesh mass matrices (fixed across steps)
        self.M1, self.M2 = mass_matrices(m)
        self.M = block_mass(self.M1, self.M2)

    def dofmap(self, motion: DomainMotion) -> DofMap:
        return DofMap(self.n, fixed=self.fixed, values=motion.w[self.fixed])

    def zero_state(self):
        return FluidState(np.zeros(3 * self.n), np.zeros(self.n))


def tau_supg(rho, mu, dt, a_norm, h):
    return ((2 * rho / dt) ** 2 + (2 * rho * a_norm / h) ** 2 + (4 * mu / h**2) ** 2) ** -0.5


def fluid_kernel(x, tets, u, p, u_old, w, params: FluidParams, stabilize=True, linearize_tau=True):
    """Element Jacobians (n_el, 16, 16) and residuals (n_el, 16) on the current mesh ``x``."""
    geo = geometry(x, tets)
    G, V = geo.grads, geo.volume
    rho, mu, dt = params.rho, params.mu, params.dt
    ne = len(tets)
    ue = u.reshape(-1, 3)[tets]
    ae = ue - w.reshape(-1, 3)[tets]                      # convective velocity, nodal
    dun = ue - u_old.reshape(-1, 3)[tets]
    pe = p[tets]
    phi = QUAD_BARY                                        # (q, a)
    wq = V / 4.0                                           # quadrature weight per point
    gu = np.einsum("eai,eaj->eij", ue, G)                  # grad u, (e, i, j) = du_i/dx_j
    gp = np.einsum("ea,eai->ei", pe, G)
    aq = np.einsum("qa,eai->eqi", phi, ae)
    rM = (rho / dt * np.einsum("qa,eai->eqi", phi, dun) + rho * np.einsum("eij,eqj->eqi", gu, aq)
          + gp[:, None, :])
    I3 = np.eye(3)

    K = np.zeros((ne, 16, 16))
    R = np.zeros((ne, 16))

    # Galerkin momentum
    conv = rho / dt * np.einsum("qa,eqi->eai", phi, np.einsum("qb,ebi->eqi", phi, dun)) \
        + rho * np.einsum("qa,eqi->eai", phi, np.einsum("eij,eqj->eqi", gu, aq))
    visc = mu * np.einsum("eij,eaj->eai", gu + np.swapaxes(gu, 1, 2), G)
    pres = -pe.mean(axis=1)[:, None, None] * G
    # point sums times V/4; viscous and pressure integrands are constant
    R1 = wq[:, None, None] * conv + V[:, None, None] * (visc + pres)
    mass_ab = np.einsum("qa,qb->ab", phi, phi)             # sum_q phi_a phi_b
    aG = np.einsum("eqi,ebi->eqb", aq, G)                  # a_q . G_b
    Acoef = (rho / dt * mass_ab[None] + rho * np.einsum("qa,eqb->eab", phi, aG))
    A = wq[:, None, None, None, None] * (
        Acoef[:, :, None, :, None] * I3[None, None, :, None, :]
        + rho * np.einsum("qa,qb,eik->eaibk", phi, phi, gu)
    )
    A += mu * V[:, None, None, None, None] * (
        np.einsum("eab,ik->eaibk", np.einsum("eai,ebi->eab", G, G), I3)
        + np.einsum("eak,ebi->eaibk", G, G))
    B1t = -(V / 4.0)[:, None, None, None] * G[:, :, :, None] * np.ones(4)   # (e, a, i, c)
    B2 = -(V / 4.0)[:, None, None, None] * np.ones((1, 4, 1, 1)) * G[:, None, :, :]  # (e, c, b, k)
    Rc = -(V / 4.0)[:, None] * np.trace(gu, axis1=1, axis2=2)[:, None] * np.ones(4)
    Cm = np.zeros((ne, 4, 4))

    if stabilize:
        ac = ae.mean(axis=1)
        anorm = np.linalg.norm(ac, axis=1)
        h = geo.h
        tau = tau_supg(rho, mu, dt, anorm, h)
        # d rM_qi / d u_bk  = phi_qb [rho/dt d_ik + rho gu_ik] + rho (G_b . a_q) d_ik
        drM = (phi[None, :, :, None, None] * (rho / dt * I3 + rho * gu[:, None, None]).reshape(ne, 1, 1, 3, 3)
               + rho * aG[:, :, :, None, None] * I3)       # (e, q, b, i, k)
        aGa = aG                                            # (e, q, a): a_q . G_a
        tw = (tau * wq)
        # SUPG residual and its Jacobian
        supg = rho * np.einsum("eqa,eqi->eai", aGa, rM)    # sum_q (a_q.G_a) rM_qi, times rho
        R1 += tw[:, None, None] * supg
        A += (tw * rho)[:, None, None, None, None] * (
            np.einsum("qb,eak,eqi->eaibk", phi, G, rM)
            + np.einsum("eqa,eqbik->eaibk", aGa, drM))
        B1t += (tw * rho)[:, None, None, None] * np.einsum("eqa,ebi->eaib", aGa, G)
        # PSPG
        Rc -= tw[:, None] * np.einsum("eci,eqi->ec", G, rM)
        B2 -= tw[:, None, None, None] * np.einsum("eci,eqbik->ecbk", G, drM)
        Cm = (tau * V)[:, None, None] * np.einsum("eci,ebi->ecb", G, G)
        if linearize_tau:
            dtau = -(tau**3 * (2 * rho / h) ** 2 / 4.0)[:, None] * ac   # (e, k), same for all b
            A += (dtau[:, None, None, None, :] * (wq[:, None, None] * supg)[:, :, :, None, None]) \
                * np.ones((1, 1, 1, 4, 1))
            pspg = np.einsum("eci,eqi->ec", G, rM) * wq[:, None]
            B2 -= pspg[:, :, None, None] * dtau[:, None, None, :] * np.ones((1, 1, 4, 1))

    R[:, :12] = R1.reshape(ne, 12)
    R[:, 12:] = Rc
    K[:, :12, :12] = A.reshape(ne, 12, 12)
    K[:, :12, 12:] = B1t.reshape(ne, 12, 4)
    K[:, 12:, :12] = B2.reshape(ne, 4, 12)
    K[:, 12:, 12:] = -Cm
    return K, R


def assemble_fluid(problem: FluidProblem, state: FluidState, u_old, motion: DomainMotion, t: float = 0.0,
                   eliminate=True, g_in=None) -> BlockSaddleSystem:
    m = problem.mesh
    x = m.vertices + motion.d.reshape(-1, 3)
    Ke, Re = fluid_kernel(x, m.tets, state.u, state.p, u_old, motion.w, problem.params,
                          problem.stabilize, problem.linearize_tau)
    dm = problem.dofmap(motion)
    system = assemble_blocks(dm, m.tets, Ke, Re)
    g = problem.params.inlet_traction(t) if g_in is None else np.asarray(g_in, float)
    if np.any(g) and len(problem.inlet_tris):
        system.r1 = system.r1 - boundary_loads(x, problem.inlet_tris, g)
    if eliminate:
        apply_dirichlet(system, dm)
    return system


def map_previous_velocity(u_prev, motion=None):
    """Carry nodal velocities to the current mesh: ALE maps share the vertices."""
    return np.array(u_prev, dtype=float, copy=True)


def solve_fluid_step(problem: FluidProblem, previous: FluidState, motion: DomainMotion, linear_solve: Callable,
                     t: float, tolerances: ToleranceController = None, guess: FluidState = None, max_newton=25):
    """Newton solve of one backward-Euler step; returns (FluidState, NewtonReport)."""
    tolerances = tolerances or ToleranceController()
    n = problem.n
    u_old = map_previous_velocity(previous.u, motion)
    guess = guess or previous
    x0 = guess.x
    x0[problem.fixed] = motion.w[problem.fixed]

    def assemble_fn(x, first):
        return assemble_fluid(problem, FluidState.from_x(x, n), u_old, motion, t)

    x, _, report = newton_solve(x0, assemble_fn, linear_solve, problem.M, tolerances, max_newton=max_newton,
                                field_name="fluid")
    state = FluidState.from_x(x, n)
    return state, report


def interface_reaction(problem: FluidProblem, state: FluidState, u_old, motion: DomainMotion, t: float):
    """Nodal force the fluid exerts on the wall: minus the momentum residual
    at the constrained interface rows, (n_interface, 3) ordered like
    ``problem.interface_vertices``."""
    system = assemble_fluid(problem, state, u_old, motion, t, eliminate=False)
    r = system.r1.reshape(-1, 3)
    return -r[problem.interface_vertices]


def divergence_residual(problem: FluidProblem, state: FluidState, u_old, motion: DomainMotion, t: float):
    """Euclidean norm of the assembled continuity residual R2."""
    system = assemble_fluid(problem, state, u_old, motion, t, eliminate=False)
    return float(np.linalg.norm(system.r2))
