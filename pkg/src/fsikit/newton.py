"""Newton driver shared by the fluid and structure sub-problems."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .fem import InvertedElementError, weighted_norm
from .materials import KinematicsError


class ToleranceMode(str, enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class NewtonError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class ToleranceController:
    """Inner/outer tolerances.

    FIXED: every linear solve to ``eps1`` relative to its own right-hand
    side.  ADAPTIVE: the tolerance of Newton step k is the square of the
    relative increment ``e_{k-1} / e_1``, clamped to ``[floor, cap]`` and
    kept above what the outer stopping test can resolve.
    """
    mode: ToleranceMode = ToleranceMode.FIXED
    eps_dn: float = 1e-8
    eps2: float = 1e-8
    eps1: float = 1e-8
    floor: float = 1e-12
    cap: float = 1e-1
    absolute: bool = False  # stop on e_k <= 100 * eps2 instead of the relative rule

    def __post_init__(self):
        self.mode = ToleranceMode(self.mode)

    def inner_tolerance(self, increments) -> float:
        if self.mode is ToleranceMode.FIXED:
            return self.eps1
        return adaptive_tolerance(increments, self.floor, self.cap, None if self.absolute else self.eps2)

    def converged(self, increments, x_norm) -> bool:
        e1, ek = increments[0], increments[-1]
        if e1 == 0.0 or ek <= 1e-13 * x_norm:
            return True
        if self.absolute:
            return ek <= 100.0 * self.eps2
        return len(increments) > 1 and ek <= self.eps2 * e1


def adaptive_tolerance(increments, floor=1e-12, cap=1e-1, outer=None) -> float:
    """``eps1_k = (e_{k-1} / e_1)^2`` clamped to ``[floor, cap]``.

    The first step gets ``cap``.  With ``outer`` (the relative Newton
    tolerance) the inner solve is never asked for more than the outer test
    can see: ``eps1_k >= 0.5 * outer * e_1 / e_{k-1}``.
    """
    if len(increments) == 0 or increments[0] <= 0:
        return cap
    red = increments[-1] / increments[0]
    tol = max(floor, red * red)
    if outer is not None and increments[-1] > 0:
        tol = max(tol, 0.5 * outer / red)
    return float(min(cap, tol))


@dataclass
class NewtonReport:
    name: str = ""
    increments: list = field(default_factory=list)     # M-weighted increment norms e_k
    relative: list = field(default_factory=list)       # e_k / e_1
    inner_tols: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)  # Euclidean residual before each step
    damping: list = field(default_factory=list)
    converged: bool = False
    wall_ms: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.increments)

    @property
    def total_inner(self) -> int:
        return int(sum(self.inner_iters))


def newton_solve(x0, assemble_fn, linear_solve, M, tolerances: ToleranceController,
                 max_newton=25, max_halvings=5, field_name=""):
    """Generic Newton loop.

    ``x0`` must already carry the Dirichlet data, so all corrections vanish on
    constrained dofs.  ``assemble_fn(x, first)`` returns the eliminated
    BlockSaddleSystem at ``x``; ``linear_solve(system, tol, x)`` returns
    ``(delta, inner_iterations)``.  Element inversion after an update halves
    the step, at most ``max_halvings`` times.
    """
    t0 = time.perf_counter()
    report = NewtonReport(name=field_name)
    x = np.array(x0, dtype=float, copy=True)
    system = assemble_fn(x, first=True)
    for k in range(max_newton):
        report.residual_norms.append(float(np.linalg.norm(system.residual())))
        tol = tolerances.inner_tolerance(report.increments)
        delta, iters = linear_solve(system, tol, x)
        e = weighted_norm(M, delta)
        report.inner_tols.append(tol)
        report.inner_iters.append(int(iters))
        step = 1.0
        for _ in range(max_halvings + 1):
            try:
                trial = x + step * delta
                new_system = assemble_fn(trial, first=False)
                break
            except (InvertedElementError, KinematicsError):
                step *= 0.5
        else:
            raise NewtonError(f"{field_name}: element inversion persists after {max_halvings} step halvings",
                              report)
        x, system = trial, new_system
        report.damping.append(step)
        report.increments.append(step * e)
        report.relative.append(report.increments[-1] / report.increments[0] if report.increments[0] else 0.0)
        if step == 1.0 and tolerances.converged(report.increments, weighted_norm(M, x)):
            report.converged = True
            break
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    if not report.converged:
        hist = ", ".join(f"{v:.2e}" for v in report.increments)
        raise NewtonError(f"{field_name}: Newton did not converge in {max_newton} iterations (increments {hist})",
                          report)
    return x, system, report
