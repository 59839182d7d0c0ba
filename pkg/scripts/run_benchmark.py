#!/usr/bin/env python3
"""Run a benchmark config and print the per-step DN summary.

    python3 scripts/run_benchmark.py configs/benchmark_artery.cfg --out runs/artery
"""
import argparse
import logging

from fsikit.config import parse_config
from fsikit.coupling import time_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--steps", type=int, default=None, help="override n_steps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(args.config)
    if args.steps is not None:
        cfg.solver.n_steps = args.steps

    def show(step, state, rep):
        print(f"step {step:3d}  t={state.t:.3f} ms  DN {rep.iterations:3d}  "
              f"omega [{min(rep.omegas, default=0):.3f}, {max(rep.omegas, default=0):.3f}]  "
              f"|r| {rep.residuals[-1]:.1e}  max|d| {abs(state.newmark.d).max():.4f} mm", flush=True)

    time_loop(cfg, out_dir=args.out, on_step=show)


if __name__ == "__main__":
    main()
