"""Krylov solvers and block-triangular preconditioners for the saddle systems.

``K = [[A, B1^T], [B2, -C]]``.  The fluid uses right-preconditioned flexible
GCR with the upper block factor; the structure uses left-preconditioned
BiCGStab with the lower block factor and a diagonal Schur approximation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import BlockSaddleSystem


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)  # monitored residual norms, first entry = initial
    reduction: float = np.inf                      # true ||b - Kx|| / ||b|| at exit
    wall_ms: float = 0.0
    converged: bool = False


def _as_op(K):
    return K.matvec if isinstance(K, spla.LinearOperator) else (lambda v: K @ v)


def _identity(v):
    return v


def gcr(K, b, precond: Optional[Callable] = None, tol=1e-8, max_it=200, restart=50, x0=None):
    """Flexible GCR with right preconditioning and modified Gram-Schmidt."""
    t0 = time.perf_counter()
    mv = _as_op(K)
    M = precond or _identity
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = b - mv(x) if x0 is not None else b.astype(float).copy()
    bnorm = np.linalg.norm(b)
    rep = SolveReport(residuals=[float(np.linalg.norm(r))])
    if bnorm == 0.0:
        rep.converged, rep.reduction = True, 0.0
        return np.zeros_like(x), rep
    Z, Q = [], []
    for it in range(1, max_it + 1):
        z = M(r)
        q = mv(z)
        for zi, qi in zip(Z, Q):
            beta = qi @ q
            q = q - beta * qi
            z = z - beta * zi
        nq = np.linalg.norm(q)
        if nq == 0.0:
            break
        # out of place: M may hand back r itself
        q = q / nq
        z = z / nq
        alpha = q @ r
        x += alpha * z
        r -= alpha * q
        Z.append(z)
        Q.append(q)
        if len(Z) >= restart:
            Z, Q = [], []
        rep.iterations = it
        rep.residuals.append(float(np.linalg.norm(r)))
        if rep.residuals[-1] <= tol * bnorm:
            break
    rep.reduction = float(np.linalg.norm(b - mv(x)) / bnorm)
    rep.converged = rep.residuals[-1] <= tol * bnorm
    rep.wall_ms = 1e3 * (time.perf_counter() - t0)
    return x, rep


def bicgstab(K, b, precond: Optional[Callable] = None, tol=1e-8, max_it=200, x0=None, max_restarts=5):
    """BiCGStab on the left-preconditioned system P^-1 K x = P^-1 b.

    Convergence is measured on the preconditioned residual.  When rho
    breaks down the shadow vector is reset to the current residual.
    """
    t0 = time.perf_counter()
    mv = _as_op(K)
    M = precond or _identity
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = M(b - mv(x))
    bnorm_p = np.linalg.norm(M(b))
    rep = SolveReport(residuals=[float(np.linalg.norm(r))])
    if np.linalg.norm(b) == 0.0:
        rep.converged, rep.reduction = True, 0.0
        return np.zeros_like(x), rep
    rhat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(r)
    pdir = np.zeros_like(r)
    restarts = 0
    it = 0
    eps = np.finfo(float).eps
    while it < max_it:
        rho = rhat @ r
        if abs(rho) <= eps * np.linalg.norm(rhat) * np.linalg.norm(r):
            if restarts >= max_restarts:
                break
            restarts += 1
            rhat = r.copy()
            rho_old = alpha = omega = 1.0
            v[:] = 0.0
            pdir[:] = 0.0
            continue
        it += 1
        beta = (rho / rho_old) * (alpha / omega)
        pdir = r + beta * (pdir - omega * v)
        v = M(mv(pdir))
        den = rhat @ v
        if den == 0.0:
            rhat = r.copy()
            restarts += 1
            rho_old = alpha = omega = 1.0
            v[:] = 0.0
            pdir[:] = 0.0
            if restarts > max_restarts:
                break
            continue
        alpha = rho / den
        s = r - alpha * v
        if np.linalg.norm(s) <= tol * bnorm_p:
            x += alpha * pdir
            r = s
            rep.residuals.append(float(np.linalg.norm(r)))
            break
        t = M(mv(s))
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * pdir + omega * s
        r = s - omega * t
        rho_old = rho
        rep.residuals.append(float(np.linalg.norm(r)))
        if rep.residuals[-1] <= tol * bnorm_p:
            break
        if omega == 0.0:
            rhat = r.copy()
            restarts += 1
            rho_old = alpha = omega = 1.0
            if restarts > max_restarts:
                break
    rep.iterations = it
    rep.converged = rep.residuals[-1] <= tol * bnorm_p
    rep.reduction = float(np.linalg.norm(b - mv(x)) / np.linalg.norm(b))
    rep.wall_ms = 1e3 * (time.perf_counter() - t0)
    return x, rep


# ---------------------------------------------------------------------------
# scalar AMG (bought): pyamg smoothed aggregation

class ScalarAMG:
    """Fixed number of V-cycles of pyamg smoothed aggregation from a zero start.

    ``n_null`` > 1 interleaves that many constant vectors (vector problems).
    """

    def __init__(self, A, cycles=1, n_null=1, symmetric=False):
        A = sp.csr_matrix(A)
        B = None
        if n_null > 1:
            B = np.kron(np.ones((A.shape[0] // n_null, 1)), np.eye(n_null))
        self.A = A
        self.ml = pyamg.smoothed_aggregation_solver(
            A, B=B, symmetry="symmetric" if symmetric else "nonsymmetric", max_coarse=100,
            presmoother=("gauss_seidel", {"sweep": "symmetric"}),
            postsmoother=("gauss_seidel", {"sweep": "symmetric"}))
        self.M = self.ml.aspreconditioner(cycle="V")
        self.cycles = cycles

    def __call__(self, b):
        x = self.M @ b
        for _ in range(self.cycles - 1):
            x = x + self.M @ (b - self.A @ x)
        return x


def pinned_laplacian(L, pinned):
    """Replace rows/columns of ``pinned`` dofs by identity."""
    mask = np.ones(L.shape[0])
    mask[np.atleast_1d(pinned)] = 0.0
    D = sp.diags(mask)
    return sp.csr_matrix(D @ L @ D + sp.diags(1.0 - mask))


@dataclass
class FluidPreconditioner:
    """Upper block factor with the pressure-convection-diffusion Schur approximation.

    ``S^-1 g ~ rho/dt Dp^-1 g + mu diag(Mp)^-1 g + rho diag(Mp)^-1 Cp Dp^-1 g``.
    """
    system: BlockSaddleSystem
    Dp: sp.csr_matrix
    Mp_diag: np.ndarray
    Cp: sp.csr_matrix
    rho: float
    mu: float
    dt: float
    a_solver: Callable = None
    dp_cycles: int = 2
    dp_solver: Callable = None
    pinned: np.ndarray = None

    def __post_init__(self):
        if self.a_solver is None:
            self.a_solver = ScalarAMG(self.system.A, cycles=1, n_null=3)
        if self.dp_solver is None:
            self.dp_solver = ScalarAMG(self.Dp, cycles=self.dp_cycles, symmetric=True)
        self.n = self.system.n_vector

    def schur_inverse(self, g):
        g = np.asarray(g, dtype=float)
        gz = g.copy()
        if self.pinned is not None:
            gz[self.pinned] = 0.0
        z = self.dp_solver(gz)
        return self.rho / self.dt * z + (self.mu * g + self.rho * (self.Cp @ z)) / self.Mp_diag

    def __call__(self, v):
        f, g = v[:self.n], v[self.n:]
        y = -self.schur_inverse(g)
        x = self.a_solver(f - self.system.B1.T @ y)
        return np.concatenate([x, y])


@dataclass
class StructurePreconditioner:
    """Lower block factor with ``S~ = (1/theta + 1/kappa) diag(Mp)``."""
    system: BlockSaddleSystem
    Mp_diag: np.ndarray
    theta: float = 6.0
    kappa: float = 1e5
    a_solver: Callable = None

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.a_solver is None:
            self.a_solver = ScalarAMG(self.system.A, cycles=1, n_null=3, symmetric=True)
        self.S_diag = (1.0 / self.theta + 1.0 / self.kappa) * self.Mp_diag
        self.n = self.system.n_vector

    def __call__(self, v):
        f, g = v[:self.n], v[self.n:]
        x = self.a_solver(f)
        y = (self.system.B2 @ x - g) / self.S_diag
        return np.concatenate([x, y])


def apply_fluid_preconditioner(pre: FluidPreconditioner, v):
    return pre(v)


def apply_structure_preconditioner(pre: StructurePreconditioner, v):
    return pre(v)


def direct_solve(system: BlockSaddleSystem, rhs=None):
    K = system.matrix().tocsc()
    b = system.newton_rhs() if rhs is None else rhs
    return spla.splu(K).solve(b)
