#!/usr/bin/env python3
"""AMG and Krylov iteration counts on the first Newton systems of a tube mesh.

    python3 scripts/amg_study.py 36 24 2 2
    python3 scripts/amg_study.py 36 24 2 2 --kappa 1e3 1e5 1e7
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import lumen_system, wall_system  # noqa: E402

from fsikit.amg import AmgOptions, SaddleAMG  # noqa: E402
from fsikit.coupling import LinearSolver, SolverOptions  # noqa: E402
from fsikit.mesh import generate_tube_mesh  # noqa: E402


def study(name, pb, s, smoother, steps_list):
    for steps in steps_list:
        t = time.perf_counter()
        amg = SaddleAMG(s, AmgOptions(smoother=smoother, steps=steps))
        _, rep = amg.solve(s.newton_rhs(), 1e-8, 100)
        print(f"{name:9s} {smoother:14s} steps {steps:2d}  levels {amg.h.sizes}  "
              f"ratios {' '.join(f'{r:.2f}' for r in amg.h.ratios())}  cycles {rep.iterations}  "
              f"{time.perf_counter() - t:.1f} s", flush=True)
    ls = LinearSolver(name, pb, SolverOptions(fluid="krylov", structure="krylov", max_krylov=500))
    _, it = ls(s, 1e-8, np.zeros(s.A.shape[0] + s.C.shape[0]))
    print(f"{name:9s} {'GCR' if name == 'fluid' else 'BiCGStab':14s} iterations {it}", flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dims", type=int, nargs=4, metavar="N", help="n_axial n_circ n_radial_fluid n_radial_layer")
    ap.add_argument("--kappa", type=float, nargs="*", default=[1e5])
    args = ap.parse_args()
    mesh = generate_tube_mesh(n_axial=args.dims[0], n_circ=args.dims[1], n_radial_fluid=args.dims[2],
                              n_radial_layer=args.dims[3])
    print(f"{mesh.n_tets} tets")
    study("fluid", *lumen_system(mesh), "braess_sarazin", (4, 8))
    for kappa in args.kappa:
        print(f"kappa = {kappa:g} kPa")
        study("structure", *wall_system(mesh, kappa), "vanka", (6, 12))


if __name__ == "__main__":
    main()
