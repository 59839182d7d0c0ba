"""Acceptance criteria 1-12.

Each test records one ``CRITERION k PASS/FAIL ...`` line before asserting;
the lines are printed together in the terminal summary.  Desk-scale runs use
the benchmark configs in ``configs/``.  Expect the whole module to take about
half an hour on one core.
"""
import functools
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fsikit.amg import AmgOptions, SaddleAMG
from fsikit.config import parse_config
from fsikit.coupling import (
    LinearSolver, SolverOptions, ToleranceController, build_model, extract_fluid_traction, initial_state,
    solver_setup, time_loop,
)
from fsikit.fluid import (
    DomainMotion, FluidProblem, FluidState, assemble_fluid, divergence_residual, solve_fluid_step,
)
from fsikit.linsolve import StructurePreconditioner, bicgstab, direct_solve, gcr
from fsikit.materials import (
    ADVENTITIA_PARAMS, MEDIA_PARAMS, Kinematics, MooneyRivlinParams, kinematics, material_tangent, pk2,
)
from fsikit.mesh import Region, generate_tube_mesh
from fsikit.structure import (
    NewmarkState, StructureProblem, StructureState, assemble_structure, constraint_residual, solve_structure_step,
)

from conftest import ACCEPTANCE, interface_pressure_load, lumen_system, wall_system

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BENCH = {"mooney_rivlin": "benchmark_mooney_rivlin.cfg", "artery": "benchmark_artery.cfg"}
DT = 0.125
DN_LINES = {}


def record(k, ok, detail):
    ACCEPTANCE[k] = f"CRITERION {k:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[k])
    return ok


def tube(cfg, **over):
    g = replace(cfg.geometry, **over)
    return generate_tube_mesh(g.radius, g.length, g.media_thickness, g.adventitia_thickness,
                              g.n_axial, g.n_circ, g.n_radial_fluid, g.n_radial_layer)


@functools.lru_cache(maxsize=None)
def config(name):
    return parse_config(CONFIGS / BENCH[name])


@functools.lru_cache(maxsize=None)
def desk_model(name):
    cfg = config(name)
    return build_model(tube(cfg), cfg.fluid_params(), cfg.materials(), rho_s=cfg.structure.rho)


@functools.lru_cache(maxsize=None)
def first_step(name, mode):
    """Fluid then structure Newton solve of the first time step, wall at rest."""
    cfg = config(name)
    model = desk_model(name)
    fs, ss, _ = solver_setup(cfg, model)
    tol = ToleranceController(mode=mode, eps2=cfg.solver.eps2, eps1=cfg.solver.eps1)
    st0 = initial_state(model, DT, cfg.structure.beta, cfg.structure.gamma)
    motion = DomainMotion.still(model.fluid.n)
    fs.motion = motion
    f, fr = solve_fluid_step(model.fluid, st0.fluid, motion, fs, DT, tol)
    load = extract_fluid_traction(model, f, st0.fluid.u, motion, DT)
    s, sr = solve_structure_step(model.structure, st0.newmark, load, ss, tol)
    return dict(model=model, fluid=f, structure=s, fluid_report=fr, structure_report=sr, load=load,
                history=st0.newmark, u_old=st0.fluid.u, motion=motion)


@functools.lru_cache(maxsize=None)
def desk_systems():
    m = tube(config("mooney_rivlin"))
    return wall_system(m), lumen_system(m)


def amg_cycles(system, smoother, steps, tol=1e-8):
    amg = SaddleAMG(system, AmgOptions(smoother=smoother, steps=steps, omega=0.78))
    _, rep = amg.solve(system.newton_rhs(), tol, 100)
    return amg, rep.iterations


def krylov_iterations(field, problem, system, max_it=500):
    ls = LinearSolver(field, problem, SolverOptions(fluid="krylov", structure="krylov", max_krylov=max_it))
    _, it = ls(system, 1e-8, np.zeros(system.A.shape[0] + system.C.shape[0]))
    return it, ls.reports[-1].converged


# ---------------------------------------------------------------------------
def test_c01_stress_free_reference():
    frame = np.eye(3)
    worst = 0.0
    for params in (MooneyRivlinParams(), MEDIA_PARAMS, ADVENTITIA_PARAMS):
        fib = params.fiber_vectors(frame) if hasattr(params, "fiber_vectors") else None
        worst = max(worst, np.abs(pk2(kinematics(np.zeros((3, 3)), fib), 0.0, params).S).max())
    assert record(1, worst <= 1e-12, f"max |S| at F=I, p=0: {worst:.1e} kPa")


def _random_grad(rng):
    g = rng.standard_normal((3, 3))
    return g / np.linalg.norm(g) * 0.2 * rng.uniform(0.05, 1.0)


def test_c02_constitutive_tangents():
    rng = np.random.default_rng(2024)
    frame = np.eye(3)
    worst = {}
    for params in (MooneyRivlinParams(), MEDIA_PARAMS, ADVENTITIA_PARAMS):
        fib = params.fiber_vectors(frame) if hasattr(params, "fiber_vectors") else None
        errs = []
        while len(errs) < 100:
            kin = kinematics(_random_grad(rng), fib)
            if fib is not None and not (kin.J4 > 1 and kin.J6 > 1):
                continue
            p = rng.uniform(-5, 5)
            D = rng.standard_normal((3, 3))
            D = 0.5 * (D + D.T)
            h = 1e-6 * np.linalg.norm(kin.C)
            fd = (pk2(Kinematics.from_C(kin.C + h * D, fib), p, params).S
                  - pk2(Kinematics.from_C(kin.C - h * D, fib), p, params).S) / (2 * h)
            an = np.einsum("ijkl,kl->ij", material_tangent(params, kin, p).dSdC, D)
            errs.append(np.linalg.norm(fd - an) / np.linalg.norm(an))
        worst[type(params).__name__ + ("" if fib is None else f"({params.alpha:g})")] = max(errs)
    ok = max(worst.values()) <= 1e-6
    assert record(2, ok, "worst rel. error over 100 states: "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_c03_assembled_jacobians():
    rng = np.random.default_rng(3)
    m = generate_tube_mesh(n_axial=4, n_circ=8, n_radial_fluid=1, n_radial_layer=1)
    eps = 1e-6

    lumen = m.submesh([Region.FLUID]).mesh
    fp = FluidProblem(lumen)
    motion = DomainMotion(0.02 * rng.standard_normal(3 * fp.n), rng.standard_normal(3 * fp.n))
    u_old = rng.standard_normal(3 * fp.n)
    state = FluidState(rng.standard_normal(3 * fp.n), rng.standard_normal(fp.n))
    K = assemble_fluid(fp, state, u_old, motion, 0.1, eliminate=False).matrix()

    def fres(x):
        return assemble_fluid(fp, FluidState.from_x(x, fp.n), u_old, motion, 0.1, eliminate=False).residual()

    wall = m.submesh([Region.MEDIA, Region.ADVENTITIA]).mesh
    sp_ = StructureProblem(wall, {Region.MEDIA: MEDIA_PARAMS, Region.ADVENTITIA: ADVENTITIA_PARAMS})
    x = wall.vertices
    d = np.column_stack([0.05 * x[:, 0], 0.05 * x[:, 1], 0.02 * x[:, 2]]).ravel()
    d += 1e-4 * rng.standard_normal(d.shape)
    sstate = StructureState(d, 5 * rng.standard_normal(sp_.n))
    hist = NewmarkState(1e-3 * rng.standard_normal(3 * sp_.n), 1e-2 * rng.standard_normal(3 * sp_.n),
                        rng.standard_normal(3 * sp_.n))
    Ks = assemble_structure(sp_, sstate, hist, None, eliminate=False).matrix()

    def sres(x):
        return assemble_structure(sp_, StructureState.from_x(x, sp_.n), hist, None, eliminate=False).residual()

    worst = {"fluid": 0.0, "structure": 0.0}
    for name, K_, res, x0, nv in (("fluid", K, fres, state.x, 3 * fp.n), ("structure", Ks, sres, sstate.x, 3 * sp_.n)):
        for _ in range(20):
            v = rng.standard_normal(len(x0))
            if name == "structure":
                v[:nv] *= 1e-3
            fd = (res(x0 + eps * v) - res(x0 - eps * v)) / (2 * eps)
            worst[name] = max(worst[name], np.linalg.norm(K_ @ v - fd) / np.linalg.norm(fd))
    ok = max(worst.values()) <= 1e-5
    assert record(3, ok, f"20 directions, worst rel. error fluid {worst['fluid']:.1e}, "
                         f"structure {worst['structure']:.1e}")


def _tail_ok(e, C=1.0, p=1.8):
    tail = e[-3:]
    return all(b <= C * a**p for a, b in zip(tail[:-1], tail[1:]))


def test_c04_newton_quadratic_tail():
    ok, parts = True, []
    for name in BENCH:
        r = first_step(name, "fixed")
        for rep in (r["fluid_report"], r["structure_report"]):
            e = rep.increments
            good = rep.converged and rep.iterations <= 6 and _tail_ok(e)
            ok &= good
            parts.append(f"{name}/{rep.name} " + " ".join(f"{x:.1e}" for x in e))
    assert record(4, ok, "; ".join(parts))


def test_c05_coarsening_ratio():
    (_, sw), (_, sf) = desk_systems()
    ratios = {}
    for name, s, sm in (("fluid", sf, "braess_sarazin"), ("structure", sw, "vanka")):
        amg = SaddleAMG(s, AmgOptions(smoother=sm))
        ratios[name] = amg.h.ratios()
    ok = all(5 <= r <= 12 for rs in ratios.values() for r in rs)
    assert record(5, ok, ", ".join(f"{k} " + "/".join(f"{r:.2f}" for r in v) for k, v in ratios.items()))


def test_c06_smoothing_halving():
    (_, sw), (_, sf) = desk_systems()
    parts, ok = [], True
    for name, s, sm, (lo, hi) in (("fluid", sf, "braess_sarazin", (4, 8)), ("structure", sw, "vanka", (6, 12))):
        _, c_lo = amg_cycles(s, sm, lo)
        _, c_hi = amg_cycles(s, sm, hi)
        ok &= c_lo / c_hi >= 1.6
        parts.append(f"{name} {lo}->{hi} steps: {c_lo}->{c_hi} cycles (x{c_lo / c_hi:.2f})")
    assert record(6, ok, "; ".join(parts))


def test_c07_incompressibility_robustness():
    m = tube(config("mooney_rivlin"))
    cycles, krylov = [], []
    for kappa in (1e3, 1e5, 1e7):
        pb, s = wall_system(m, kappa)
        cycles.append(amg_cycles(s, "vanka", 12)[1])
        krylov.append(krylov_iterations("structure", pb, s)[0])
    ok = max(cycles) - min(cycles) <= 3 and max(krylov) <= 1.5 * min(krylov)
    assert record(7, ok, f"kappa 1e3/1e5/1e7: AMG cycles {cycles}, BiCGStab {krylov}")


def test_c08_mesh_independence():
    cfg = config("mooney_rivlin")
    g = cfg.geometry
    fine = tube(cfg, n_axial=g.n_axial * 3 // 2, n_circ=g.n_circ * 3 // 2,
                n_radial_fluid=g.n_radial_fluid * 3 // 2, n_radial_layer=g.n_radial_layer * 3 // 2)
    coarse_sys = desk_systems()
    fine_sys = (wall_system(fine), lumen_system(fine))
    res = {}
    for label, ((pw, sw), (pf, sf)) in (("coarse", coarse_sys), ("fine", fine_sys)):
        res[label] = dict(
            fluid=(amg_cycles(sf, "braess_sarazin", 8)[1], krylov_iterations("fluid", pf, sf)[0]),
            structure=(amg_cycles(sw, "vanka", 12)[1], krylov_iterations("structure", pw, sw)[0]),
        )
    ok, parts = True, []
    for f in ("fluid", "structure"):
        (ac, kc), (af, kf) = res["coarse"][f], res["fine"][f]
        ok &= abs(af - ac) <= 3 and kf > kc
        parts.append(f"{f} AMG {ac}->{af}, Krylov {kc}->{kf}")
    assert record(8, ok, f"{fine.n_tets} tets refined; " + "; ".join(parts))


@pytest.mark.parametrize("name", list(BENCH))
def test_c09_dn_coupling(name):
    # small tube and direct sub-solves keep this within the time budget
    cfg = config(name)
    cfg = replace(cfg, solver=replace(cfg.solver, fluid_solver="direct", structure_solver="direct", n_steps=8,
                                      output_every=0))
    mesh = tube(cfg, n_axial=18, n_circ=16, n_radial_fluid=2, n_radial_layer=1)
    res = time_loop(cfg, mesh=mesh)
    counts = [r.iterations for r in res.reports]
    omegas = [w for r in res.reports for w in r.omegas]
    final = max(r.residuals[-1] for r in res.reports)
    ok = (len(res.reports) == 8 and all(r.converged for r in res.reports) and final < 1e-8
          and all(0 < w < 1 for w in omegas) and max(counts) <= 2 * min(counts))
    line = (f"{name}: DN counts {counts}, omega in [{min(omegas):.3f}, {max(omegas):.3f}], "
            f"max final |r|/sqrt(n) {final:.1e}")
    DN_LINES[name] = (ok, line)
    record(9, all(v[0] for v in DN_LINES.values()), " | ".join(v[1] for v in DN_LINES.values()))
    assert ok


def test_c10_adaptive_control():
    table = [1, 1, 2, 5]
    ok, parts = True, []
    for name in BENCH:
        fixed, adapt = first_step(name, "fixed"), first_step(name, "adaptive")
        for key in ("fluid_report", "structure_report"):
            f, a = fixed[key], adapt[key]
            pattern = all(abs(n - t) <= 2 for n, t in zip(a.inner_iters, table))
            good = (a.converged and a.iterations <= f.iterations + 1 and a.total_inner < f.total_inner
                    and pattern)
            ok &= good
            parts.append(f"{name}/{f.name} Newton {f.iterations}->{a.iterations}, inner {f.total_inner}->"
                         f"{a.total_inner} {a.inner_iters}{'' if pattern else ' (pattern off by >2)'}")
    assert record(10, ok, "; ".join(parts))


def test_c11_constraint_and_divergence():
    r = first_step("mooney_rivlin", "fixed")
    pb = r["model"].structure
    disc = constraint_residual(pb, r["structure"], "discrete", history=r["history"], load=r["load"])
    elem = constraint_residual(pb, r["structure"], "element")
    proj = constraint_residual(pb, r["structure"], "projected")
    div = divergence_residual(r["model"].fluid, r["fluid"], r["u_old"], r["motion"], DT)
    eps1 = config("mooney_rivlin").solver.eps1

    # without pressure stabilization the nodal constraint holds exactly
    m = generate_tube_mesh(n_axial=4, n_circ=8, n_radial_fluid=1, n_radial_layer=1)
    wall = m.submesh([Region.MEDIA, Region.ADVENTITIA]).mesh
    mr = MooneyRivlinParams()
    plain = StructureProblem(wall, {Region.MEDIA: mr, Region.ADVENTITIA: mr}, stabilize=False)
    load = interface_pressure_load(wall)
    hist = NewmarkState.at_rest(3 * plain.n)
    st, _ = solve_structure_step(plain, hist, load, lambda s, t, x: (direct_solve(s), 1), ToleranceController())
    proj_plain = constraint_residual(plain, st, "projected")

    ok = disc <= 1e-6 and proj_plain <= 1e-6 and div <= eps1
    assert record(11, ok, f"structure discrete {disc:.1e} (projected {proj:.1e}, element-wise {elem:.1e}, "
                          f"unstabilized projected {proj_plain:.1e}); fluid |R_div| {div:.1e}")


def test_c12_oracle_equivalence():
    m = generate_tube_mesh(length=2.0, n_axial=4, n_circ=8, n_radial_fluid=1, n_radial_layer=1)
    (pw, sw), (pf, sf) = wall_system(m), lumen_system(m)
    errs = {}
    for name, pb, s, sm in (("structure", pw, sw, "vanka"), ("fluid", pf, sf, "braess_sarazin")):
        n = s.A.shape[0] + s.C.shape[0]
        assert n <= 500
        K = s.matrix().toarray()
        b = s.newton_rhs()
        ref = np.linalg.solve(K, b)
        if name == "structure":
            pre = StructurePreconditioner(s, np.asarray(pb.M2.diagonal()))
        else:
            ls = LinearSolver("fluid", pb, SolverOptions(fluid="krylov"))
            pre = ls._fluid_preconditioner(s, np.zeros(n))
        x_g, _ = gcr(s.matrix(), b, pre, tol=1e-12, max_it=500)
        x_b, _ = bicgstab(s.matrix(), b, pre, tol=1e-12, max_it=500)
        x_a, _ = SaddleAMG(s, AmgOptions(smoother=sm)).solve(b, 1e-12, 300)
        nr = np.linalg.norm(ref)
        errs[f"{name}({n})"] = [np.linalg.norm(x - ref) / nr for x in (x_g, x_b, x_a)]
    ok = max(max(v) for v in errs.values()) <= 1e-8
    assert record(12, ok, "rel. error GCR/BiCGStab/AMG: " + "; ".join(
        f"{k} " + "/".join(f"{e:.0e}" for e in v) for k, v in errs.items()))
