#!/usr/bin/env python3
"""Fixed vs adaptive inner tolerances on the first time step of a benchmark.

    python3 scripts/adaptive_study.py configs/benchmark_mooney_rivlin.cfg
"""
import argparse

from fsikit.config import parse_config
from fsikit.coupling import ToleranceController, build_model, extract_fluid_traction, initial_state, solver_setup
from fsikit.fluid import DomainMotion, solve_fluid_step
from fsikit.mesh import generate_tube_mesh
from fsikit.structure import solve_structure_step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    args = ap.parse_args()
    cfg = parse_config(args.config)
    g = cfg.geometry
    mesh = generate_tube_mesh(g.radius, g.length, g.media_thickness, g.adventitia_thickness,
                              g.n_axial, g.n_circ, g.n_radial_fluid, g.n_radial_layer)
    model = build_model(mesh, cfg.fluid_params(), cfg.materials(), rho_s=cfg.structure.rho)
    dt = cfg.solver.dt
    for mode in ("fixed", "adaptive"):
        fs, ss, _ = solver_setup(cfg, model)
        tol = ToleranceController(mode=mode, eps2=cfg.solver.eps2, eps1=cfg.solver.eps1)
        st0 = initial_state(model, dt, cfg.structure.beta, cfg.structure.gamma)
        motion = DomainMotion.still(model.fluid.n)
        fs.motion = motion
        f, fr = solve_fluid_step(model.fluid, st0.fluid, motion, fs, dt, tol)
        load = extract_fluid_traction(model, f, st0.fluid.u, motion, dt)
        _, sr = solve_structure_step(model.structure, st0.newmark, load, ss, tol)
        print(f"== {mode}")
        for rep in (fr, sr):
            print(f"{rep.name:9s}  k  e_k        eps1_k   cycles")
            for k, (e, t, n) in enumerate(zip(rep.increments, rep.inner_tols, rep.inner_iters), 1):
                print(f"{'':9s} {k:2d}  {e:.2e}  {t:.1e}  {n}")
            print(f"{'':9s} total cycles {rep.total_inner}", flush=True)


if __name__ == "__main__":
    main()
