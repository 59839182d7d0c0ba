"""Simulation outputs: legacy ASCII VTK snapshots and CSV convergence logs."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Optional

import numpy as np

VTK_TETRA = 10
DN_HEADER = ("step", "dn_iter", "interface_residual", "aitken_omega")
NEWTON_HEADER = ("step", "dn_iter", "field", "newton_iter", "outer_norm", "inner_tol", "inner_iters")


def _fmt(a) -> str:
    return " ".join("%.9e" % v for v in np.ravel(a))


def write_vtk(path, vertices, tets, fields: Optional[Dict[str, np.ndarray]] = None, title="fsikit") -> None:
    """Unstructured grid of tets with nodal scalar / 3-vector fields."""
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
    n = len(vertices)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [_fmt(p) for p in vertices]
    lines.append(f"CELLS {len(tets)} {5 * len(tets)}")
    lines += ["4 " + " ".join(str(i) for i in t) for t in tets]
    lines.append(f"CELL_TYPES {len(tets)}")
    lines += [str(VTK_TETRA)] * len(tets)
    if fields:
        lines.append(f"POINT_DATA {n}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.size == 3 * n:
                lines.append(f"VECTORS {name} double")
                lines += [_fmt(v) for v in values.reshape(n, 3)]
            elif values.size == n:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += ["%.9e" % v for v in values.ravel()]
            else:
                raise ValueError(f"field {name!r} has {values.size} values for {n} points")
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc


def read_vtk(path):
    """Minimal reader for files written by :func:`write_vtk` (tests, post-processing)."""
    tokens = Path(path).read_text().split("\n")
    i = 0
    pts = cells = None
    fields = {}
    n = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        key = line[0]
        if key == "POINTS":
            n = int(line[1])
            pts = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif key == "CELLS":
            nc = int(line[1])
            cells = np.array([[int(v) for v in tokens[i + 1 + k].split()[1:]] for k in range(nc)])
            i += nc + 1
        elif key == "VECTORS":
            fields[line[1]] = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif key == "SCALARS":
            fields[line[1]] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 2
        else:
            i += 1
    return pts, cells, fields


class RunLog:
    """Append-only CSV logs: one row per DN iteration and one per Newton iteration."""

    def __init__(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.dn_path = out / "dn_log.csv"
        self.newton_path = out / "newton_log.csv"
        self._dn = open(self.dn_path, "w", newline="")
        self._nt = open(self.newton_path, "w", newline="")
        self.dn = csv.writer(self._dn)
        self.newton = csv.writer(self._nt)
        self.dn.writerow(DN_HEADER)
        self.newton.writerow(NEWTON_HEADER)

    def log_dn(self, step, dn_iter, residual, omega):
        self.dn.writerow([step, dn_iter, "%.9e" % residual, "" if omega is None else "%.9e" % omega])

    def log_newton(self, step, dn_iter, report):
        for k, e in enumerate(report.increments):
            self.newton.writerow([step, dn_iter, report.name, k + 1, "%.9e" % e,
                                  "%.3e" % report.inner_tols[k], report.inner_iters[k]])

    def log_step(self, step, dn_report):
        for k, res in enumerate(dn_report.residuals):
            omega = dn_report.omegas[k] if k < len(dn_report.omegas) else None
            self.log_dn(step, k + 1, res, omega)
        for dn_iter, rep in dn_report.newton:
            self.log_newton(step, dn_iter, rep)
        self.flush()

    def flush(self):
        self._dn.flush()
        self._nt.flush()

    def close(self):
        self._dn.close()
        self._nt.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
