"""Command line: ``fsikit {run,mesh,check} --config FILE``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, parameter_table, parse_config
from .coupling import DnError, time_loop
from .mesh import MeshError, generate_tube_mesh, save_mesh

SYNOPSIS = """usage:
  fsikit run   --config <path> [--out <dir>]
  fsikit mesh  --config <path> --out <file>
  fsikit check --config <path>"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"fsikit: {message}\n{SYNOPSIS}\n")
        raise SystemExit(2)


def build_parser():
    p = _Parser(prog="fsikit", description="Partitioned FSI for a pressurized elastic tube")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the coupled simulation")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory (default: $FSIKIT_OUT or config)")
    mesh = sub.add_parser("mesh", help="generate the tube mesh only")
    mesh.add_argument("--config", required=True)
    mesh.add_argument("--out", required=True)
    check = sub.add_parser("check", help="validate a config and print the resolved parameters")
    check.add_argument("--config", required=True)
    return p


def _mesh_from(cfg):
    g = cfg.geometry
    return generate_tube_mesh(g.radius, g.length, g.media_thickness, g.adventitia_thickness,
                              g.n_axial, g.n_circ, g.n_radial_fluid, g.n_radial_layer)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.command == "check":
            print(parameter_table(cfg))
            return 0
        if args.command == "mesh":
            mesh = _mesh_from(cfg)
            save_mesh(mesh, args.out)
            print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
            return 0
        out = args.out or os.environ.get("FSIKIT_OUT") or cfg.solver.output_dir or "fsikit_out"
        result = time_loop(cfg, out_dir=out)
        counts = ", ".join(str(r.iterations) for r in result.reports)
        print(f"{len(result.reports)} steps written to {out}; DN iterations per step: {counts}")
        return 0
    except (ConfigError, MeshError, DnError, OSError) as exc:
        sys.stderr.write(f"fsikit: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
