"""Dirichlet-Neumann coupling with Aitken relaxation.

One time step iterates: harmonic mesh extension of the interface
displacement, fluid Newton solve with u = w on the interface, transfer of the
discrete fluid reaction to the structure, structure Newton solve.  The
interface displacement is relaxed with Aitken's recursion until the scaled
interface residual drops below ``eps_dn``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .ale import ExtensionProblem, move_mesh, solve_harmonic_extension
from .amg import AmgOptions, SaddleAMG
from .fem import scalar_convection, scalar_laplacian, scalar_mass
from .fluid import DomainMotion, FluidParams, FluidProblem, FluidState, interface_reaction, solve_fluid_step
from .linsolve import FluidPreconditioner, StructurePreconditioner, bicgstab, direct_solve, gcr, pinned_laplacian
from .mesh import InterfaceMap, Mesh, Region, build_interface_map
from .newton import NewtonError, NewtonReport, ToleranceController, ToleranceMode, adaptive_tolerance
from .structure import NewmarkState, StructureProblem, StructureState, newmark_advance, solve_structure_step

log = logging.getLogger(__name__)

__all__ = [
    "SolverOptions", "LinearSolver", "FsiModel", "FsiState", "DnState", "DnReport", "DnError",
    "build_model", "initial_state", "aitken_update", "extract_fluid_traction", "dn_iteration",
    "adaptive_tolerances", "ToleranceController", "ToleranceMode", "time_loop", "SimulationResult",
]


# ---------------------------------------------------------------------------
# linear solvers per field

@dataclass
class SolverOptions:
    fluid: str = "amg"                  # amg | krylov | direct
    structure: str = "amg"
    fluid_smoother: str = "braess_sarazin"
    structure_smoother: str = "vanka"
    fluid_steps: int = 8
    structure_steps: int = 12
    omega_vanka: float = 0.78
    theta: float = 6.0                  # kPa, structure Schur scaling
    max_krylov: int = 200
    max_cycles: int = 100
    reuse_hierarchy: bool = True        # aggregates kept for a whole time step

    def __post_init__(self):
        for kind in (self.fluid, self.structure):
            if kind not in ("amg", "krylov", "direct"):
                raise ValueError(f"unknown linear solver {kind!r}")


class LinearSolver:
    """``linear_solve(system, tol, x) -> (delta, iterations)`` for one field.

    For the fluid, ``motion`` must be set to the current DomainMotion before
    each Newton solve (the Krylov preconditioner needs the current mesh).
    """

    def __init__(self, field_name: str, problem, opts: SolverOptions):
        self.field = field_name
        self.problem = problem
        self.opts = opts
        self.kind = opts.fluid if field_name == "fluid" else opts.structure
        self.motion: Optional[DomainMotion] = None
        self.amg: Optional[SaddleAMG] = None
        self.reports = []

    def new_step(self):
        self.amg = None

    def _amg_options(self):
        o = self.opts
        if self.field == "fluid":
            return AmgOptions(smoother=o.fluid_smoother, steps=o.fluid_steps, omega=o.omega_vanka)
        return AmgOptions(smoother=o.structure_smoother, steps=o.structure_steps, omega=o.omega_vanka)

    def __call__(self, system, tol, x):
        b = system.newton_rhs()
        if self.kind == "direct":
            return direct_solve(system, b), 1
        if self.kind == "amg":
            if self.amg is None or not self.opts.reuse_hierarchy:
                self.amg = SaddleAMG(system, self._amg_options())
            else:
                self.amg.refresh(system)
            delta, rep = self.amg.solve(b, tol, self.opts.max_cycles)
        elif self.field == "fluid":
            delta, rep = gcr(system.matrix(), b, self._fluid_preconditioner(system, x), tol=tol,
                             max_it=self.opts.max_krylov)
        else:
            pb = self.problem
            pre = StructurePreconditioner(system, np.asarray(pb.M2.diagonal()), self.opts.theta,
                                          float(np.max(pb.kappa)))
            delta, rep = bicgstab(system.matrix(), b, pre, tol=tol, max_it=self.opts.max_krylov)
        self.reports.append(rep)
        if not rep.converged:
            log.warning("%s %s solve stopped at %d iterations (reduction %.2e)", self.field, self.kind,
                        rep.iterations, rep.reduction)
        return delta, rep.iterations

    def _fluid_preconditioner(self, system, x):
        pb: FluidProblem = self.problem
        motion = self.motion or DomainMotion.still(pb.n)
        m = pb.mesh
        xc = m.vertices + motion.d.reshape(-1, 3)
        a = x[:3 * pb.n] - motion.w
        Dp = pinned_laplacian(scalar_laplacian(xc, m.tets), [0])
        Mp = np.asarray(scalar_mass(xc, m.tets).diagonal())
        Cp = scalar_convection(xc, m.tets, a)
        prm = pb.params
        return FluidPreconditioner(system, Dp, Mp, Cp, prm.rho, prm.mu, prm.dt, pinned=np.array([0]))


# ---------------------------------------------------------------------------
# model and states

@dataclass
class FsiModel:
    mesh: Mesh
    fluid: FluidProblem
    structure: StructureProblem
    extension: ExtensionProblem
    interface: InterfaceMap          # local ids: (fluid vertex, structure vertex)
    fluid_vertices: np.ndarray       # local -> global vertex ids
    structure_vertices: np.ndarray

    @property
    def n_interface(self) -> int:
        return self.interface.n


def build_model(mesh: Mesh, fluid_params: FluidParams, materials, rho_s=1.2, stabilize=True) -> FsiModel:
    """Split the tube mesh into fluid and structure problems with local numbering."""
    gmap = build_interface_map(mesh)
    fsub = mesh.submesh([Region.FLUID])
    ssub = mesh.submesh([Region.MEDIA, Region.ADVENTITIA])
    f_loc = np.searchsorted(fsub.global_vertices, gmap.fluid)
    s_loc = np.searchsorted(ssub.global_vertices, gmap.structure)
    order = np.argsort(f_loc)
    imap = InterfaceMap(np.column_stack([f_loc[order], s_loc[order]]))
    fluid = FluidProblem(fsub.mesh, fluid_params, stabilize=stabilize)
    if not np.array_equal(fluid.interface_vertices, imap.fluid):
        raise ValueError("fluid interface vertices do not match the interface map")
    structure = StructureProblem(ssub.mesh, materials, rho=rho_s, interface_vertices=imap.structure,
                                 stabilize=stabilize)
    ext = ExtensionProblem(fsub.mesh, imap.fluid)
    return FsiModel(mesh, fluid, structure, ext, imap, fsub.global_vertices, ssub.global_vertices)


@dataclass
class FsiState:
    """Everything carried from one time level to the next."""
    t: float
    fluid: FluidState
    d_f: np.ndarray                  # fluid mesh displacement (3 nf)
    newmark: NewmarkState
    p_s: np.ndarray                  # structure pressure

    @property
    def structure(self) -> StructureState:
        return StructureState(self.newmark.d, self.p_s)


def initial_state(model: FsiModel, dt: float, beta=0.625, gamma=1.0) -> FsiState:
    nf, ns = model.fluid.n, model.structure.n
    return FsiState(0.0, model.fluid.zero_state(), np.zeros(3 * nf),
                    NewmarkState.at_rest(3 * ns, dt=dt, beta=beta, gamma=gamma), np.zeros(ns))


# ---------------------------------------------------------------------------
# Aitken

@dataclass
class DnState:
    d: np.ndarray                         # relaxed interface iterate d_{k-1}, (3 n_itf,)
    d_tilde: Optional[np.ndarray] = None  # structure answer d~_k
    r: Optional[np.ndarray] = None        # d~_k - d_{k-1}
    r_prev: Optional[np.ndarray] = None
    omega: float = 0.5
    k: int = 0


def aitken_update(state: DnState):
    """Relaxed iterate and the updated omega.

    With two residuals available omega follows the recursion
    ``w_k = -w_{k-1} r_k.(r_{k+1} - r_k) / |r_{k+1} - r_k|^2``; a vanishing
    difference keeps omega unchanged.
    """
    omega = state.omega
    if state.r_prev is not None:
        dr = state.r - state.r_prev
        den = float(dr @ dr)
        if den > 0.0:
            omega = -omega * float(state.r_prev @ dr) / den
    return state.d + omega * state.r, omega


# ---------------------------------------------------------------------------
# one time step

class DnError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class DnReport:
    step: int = 0
    residuals: List[float] = field(default_factory=list)   # |r|/sqrt(n) per DN iteration
    omegas: List[float] = field(default_factory=list)      # omega used after each non-final iteration
    newton: List[tuple] = field(default_factory=list)      # (dn_iter, NewtonReport)
    mesh_quality: List[tuple] = field(default_factory=list)
    converged: bool = False
    wall_ms: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def extract_fluid_traction(model: FsiModel, state: FluidState, u_old, motion: DomainMotion, t: float):
    """Structure nodal load (3 ms) from the discrete fluid reaction on the interface."""
    g = interface_reaction(model.fluid, state, u_old, motion, t)
    load = np.zeros((model.structure.n, 3))
    load[model.interface.structure] = g
    return load.ravel()


def interface_displacement(model: FsiModel, d_s) -> np.ndarray:
    return np.asarray(d_s).reshape(-1, 3)[model.interface.structure].ravel()


def dn_iteration(model: FsiModel, prev: FsiState, step: int, fluid_solver: LinearSolver,
                 structure_solver: LinearSolver, tolerances: ToleranceController = None,
                 omega0=0.5, max_dn=100, max_newton=25, on_iteration: Callable = None):
    """Advance one time step; returns (FsiState, DnReport)."""
    tolerances = tolerances or ToleranceController()
    t0 = time.perf_counter()
    dt = prev.newmark.dt
    t = prev.t + dt
    n_itf = model.n_interface
    rep = DnReport(step=step)
    dn = DnState(d=interface_displacement(model, prev.newmark.d), omega=omega0)
    f_guess, s_guess = prev.fluid, prev.structure
    fluid_solver.new_step()
    structure_solver.new_step()
    for k in range(1, max_dn + 1):
        dn.k = k
        d_f = solve_harmonic_extension(model.extension, dn.d.reshape(-1, 3)).ravel()
        _, quality = move_mesh(model.fluid.mesh, d_f)
        rep.mesh_quality.append((quality.min_ratio, quality.max_ratio))
        motion = DomainMotion(d_f, (d_f - prev.d_f) / dt)
        fluid_solver.motion = motion
        try:
            fstate, frep = solve_fluid_step(model.fluid, prev.fluid, motion, fluid_solver, t, tolerances,
                                            guess=f_guess, max_newton=max_newton)
            rep.newton.append((k, frep))
            load = extract_fluid_traction(model, fstate, prev.fluid.u, motion, t)
            sstate, srep = solve_structure_step(model.structure, prev.newmark, load, structure_solver, tolerances,
                                                guess=s_guess, max_newton=max_newton)
            rep.newton.append((k, srep))
        except NewtonError as exc:
            if exc.report is not None:
                rep.newton.append((k, exc.report))
            raise DnError(f"time step {step}, DN iteration {k}: {exc}", rep) from exc
        f_guess, s_guess = fstate, sstate
        dn.d_tilde = interface_displacement(model, sstate.d)
        dn.r_prev, dn.r = dn.r, dn.d_tilde - dn.d
        res = float(np.linalg.norm(dn.r) / np.sqrt(n_itf))
        rep.residuals.append(res)
        if res < tolerances.eps_dn:
            rep.converged = True
        else:
            dn.d, dn.omega = aitken_update(dn)
            rep.omegas.append(dn.omega)
        if on_iteration is not None:
            on_iteration(rep)
        if rep.converged:
            break
    rep.wall_ms = 1e3 * (time.perf_counter() - t0)
    if not rep.converged:
        hist = ", ".join(f"{r:.2e}" for r in rep.residuals[-5:])
        raise DnError(f"time step {step}: DN iteration did not converge in {max_dn} iterations "
                      f"(last residuals {hist})", rep)
    new = FsiState(t, fstate, d_f, newmark_advance(prev.newmark, sstate.d), sstate.p)
    return new, rep


def adaptive_tolerances(controller: ToleranceController, increments) -> float:
    """Inner tolerance of the next Newton step given the increments so far."""
    return controller.inner_tolerance(increments)


# ---------------------------------------------------------------------------
# time loop

@dataclass
class SimulationResult:
    model: FsiModel
    states: List[FsiState]
    reports: List[DnReport]
    out_dir: Optional[str] = None


def nodal_fields(model: FsiModel, state: FsiState):
    """Global nodal fields for output: fluid vertices carry velocity, fluid
    pressure and the mesh displacement, structure vertices displacement and
    solid pressure."""
    n = model.mesh.n_vertices
    fv, sv = model.fluid_vertices, model.structure_vertices
    vel = np.zeros((n, 3))
    disp = np.zeros((n, 3))
    pf = np.zeros(n)
    ps = np.zeros(n)
    vel[fv] = state.fluid.u.reshape(-1, 3)
    pf[fv] = state.fluid.p
    disp[fv] = state.d_f.reshape(-1, 3)
    disp[sv] = state.newmark.d.reshape(-1, 3)
    ps[sv] = state.p_s
    return {"velocity": vel, "fluid_pressure": pf, "displacement": disp, "solid_pressure": ps}


def solver_setup(config, model: FsiModel):
    s = config.solver
    opts = SolverOptions(fluid=s.fluid_solver, structure=s.structure_solver, fluid_smoother=s.fluid_smoother,
                         structure_smoother=s.structure_smoother, fluid_steps=s.fluid_steps,
                         structure_steps=s.structure_steps, omega_vanka=s.omega_vanka, theta=s.theta,
                         max_krylov=s.max_krylov)
    tol = ToleranceController(mode=s.tolerance_mode, eps_dn=s.eps_dn, eps2=s.eps2, eps1=s.eps1,
                              absolute=s.absolute)
    return LinearSolver("fluid", model.fluid, opts), LinearSolver("structure", model.structure, opts), tol


def time_loop(config, out_dir=None, mesh: Mesh = None, on_step: Callable = None) -> SimulationResult:
    """Run ``config.solver.n_steps`` coupled time steps.

    With ``out_dir`` set, CSV logs are written there and VTK snapshots every
    ``output_every`` steps (0 disables snapshots).  Logs are flushed before a
    failure propagates.
    """
    from .io import RunLog, write_vtk
    from .mesh import generate_tube_mesh

    g, s = config.geometry, config.solver
    if mesh is None:
        mesh = generate_tube_mesh(g.radius, g.length, g.media_thickness, g.adventitia_thickness,
                                  g.n_axial, g.n_circ, g.n_radial_fluid, g.n_radial_layer)
    model = build_model(mesh, config.fluid_params(), config.materials(), rho_s=config.structure.rho,
                        stabilize=config.structure.stabilize)
    model.fluid.stabilize = config.fluid.stabilize
    fsolver, ssolver, tol = solver_setup(config, model)
    state = initial_state(model, s.dt, config.structure.beta, config.structure.gamma)
    states, reports = [state], []
    runlog = RunLog(out_dir) if out_dir is not None else None
    try:
        for step in range(1, s.n_steps + 1):
            try:
                state, rep = dn_iteration(model, state, step, fsolver, ssolver, tol, omega0=s.omega0,
                                          max_dn=s.max_dn, max_newton=s.max_newton)
            except DnError as exc:
                if runlog is not None and exc.report is not None:
                    runlog.log_step(step, exc.report)
                raise
            states.append(state)
            reports.append(rep)
            log.info("step %d: t=%.4f ms, %d DN iterations, %.1f s", step, state.t, rep.iterations,
                     rep.wall_ms / 1e3)
            if runlog is not None:
                runlog.log_step(step, rep)
                if s.output_every and step % s.output_every == 0:
                    write_vtk(f"{out_dir}/step_{step:04d}.vtk", mesh.vertices, mesh.tets,
                              nodal_fields(model, state), title=f"fsikit t={state.t:.6g} ms")
            if on_step is not None:
                on_step(step, state, rep)
    finally:
        if runlog is not None:
            runlog.close()
    return SimulationResult(model, states, reports, None if out_dir is None else str(out_dir))
