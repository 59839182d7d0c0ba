"""Algebraic multigrid for stabilized P1-P1 saddle-point systems.

Coarsening aggregates vertices; the three vector dofs and the pressure dof
of a vertex always go to the same aggregate.  Prolongation is piecewise
constant per field, coarse operators are Galerkin products, and the
stabilization block is scaled by 4 on every coarser level.  Two smoothers
are provided: Braess-Sarazin (inexact Uzawa with a Jacobi velocity block)
and multiplicative Vanka (one pressure dof plus its B2-connected velocity
dofs per patch).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import BlockSaddleSystem
from .linsolve import ScalarAMG, SolveReport


class AMGError(RuntimeError):
    pass


def _csr(m):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return m


# ---------------------------------------------------------------------------
# levels

@dataclass
class Level:
    A: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    C: sp.csr_matrix
    vnode: np.ndarray        # node of each vector dof
    vcomp: np.ndarray        # Cartesian component of each vector dof
    fixed: np.ndarray        # bool mask of Dirichlet (identity) vector dofs
    Pv: Optional[sp.csr_matrix] = None  # prolongation to this level from the next coarser one
    Pp: Optional[sp.csr_matrix] = None
    smoother: object = None

    @property
    def nv(self):
        return self.A.shape[0]

    @property
    def np_(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.nv + self.np_

    def matrix(self):
        return sp.bmat([[self.A, self.B1.T], [self.B2, -self.C]], format="csr")

    def residual(self, x, b):
        nv = self.nv
        w, p = x[:nv], x[nv:]
        return np.concatenate([b[:nv] - self.A @ w - self.B1.T @ p,
                               b[nv:] - self.B2 @ w + self.C @ p])


def detect_fixed(A, B2):
    """Vector dofs whose A row is a lone unit diagonal and whose B2 column is empty."""
    A = sp.csr_matrix(A)
    nnz = np.diff(A.indptr)
    lone = (nnz == 1) & (A.diagonal() == 1.0)
    colnnz = np.diff(sp.csc_matrix(B2).indptr)
    return lone & (colnnz == 0)


def node_graph(level: Level):
    """Symmetric node adjacency (no self loops) from the pressure block and B2."""
    n = level.np_
    B2n = sp.csr_matrix((np.ones(level.B2.nnz), level.B2.indices, level.B2.indptr), shape=level.B2.shape)
    toN = sp.csr_matrix((np.ones(level.nv), (np.arange(level.nv), level.vnode)), shape=(level.nv, n))
    G = (B2n @ toN) + sp.csr_matrix((np.ones(level.C.nnz), level.C.indices, level.C.indptr), shape=(n, n))
    G = G + G.T
    G = sp.csr_matrix(G)
    G.setdiag(0)
    G.eliminate_zeros()
    G.sort_indices()
    return G


@numba.njit(cache=True)
def _aggregate(indptr, indices, target):
    n = len(indptr) - 1
    agg = -np.ones(n, dtype=np.int64)
    size = np.zeros(n, dtype=np.int64)
    members = np.empty(target, dtype=np.int64)
    na = 0
    # greedy growth: from each free seed add the free neighbour (of any member)
    # with the most links into the aggregate, up to ``target`` nodes
    for i in range(n):
        if agg[i] >= 0:
            continue
        agg[i] = na
        members[0] = i
        cnt = 1
        while cnt < target:
            best = -1
            best_links = 0
            for mm in range(cnt):
                u = members[mm]
                for jj in range(indptr[u], indptr[u + 1]):
                    j = indices[jj]
                    if agg[j] >= 0:
                        continue
                    links = 0
                    for kk in range(indptr[j], indptr[j + 1]):
                        if agg[indices[kk]] == na:
                            links += 1
                    if links > best_links:
                        best_links = links
                        best = j
            if best < 0:
                break
            agg[best] = na
            members[cnt] = best
            cnt += 1
        if cnt == 1:
            # lonely seed: join the smallest neighbouring aggregate if there is one
            best = -1
            for jj in range(indptr[i], indptr[i + 1]):
                a = agg[indices[jj]]
                if a >= 0 and a != na and (best < 0 or size[a] < size[best]):
                    best = a
            if best >= 0:
                agg[i] = best
                size[best] += 1
                continue
        size[na] = cnt
        na += 1
    return agg, na


def aggregate_nodes(G: sp.csr_matrix, target=8):
    agg, na = _aggregate(G.indptr.astype(np.int64), G.indices.astype(np.int64), int(target))
    return agg, int(na)


def prolongations(level: Level, agg, n_agg):
    """Piecewise-constant Pv (free vector dofs only) and Pp; coarse vector
    dofs that would receive no free fine dof are dropped."""
    key = agg[level.vnode] * 3 + level.vcomp
    free = ~level.fixed
    used = np.unique(key[free])
    col = -np.ones(3 * n_agg, dtype=np.int64)
    col[used] = np.arange(len(used))
    rows = np.flatnonzero(free)
    Pv = sp.csr_matrix((np.ones(len(rows)), (rows, col[key[rows]])), shape=(level.nv, len(used)))
    Pp = sp.csr_matrix((np.ones(level.np_), (np.arange(level.np_), agg)), shape=(level.np_, n_agg))
    return Pv, Pp, used // 3, used % 3


@dataclass
class AmgHierarchy:
    levels: List[Level]
    c_scale: float = 4.0
    coarse_lu: object = None

    @property
    def sizes(self):
        return [lv.n for lv in self.levels]

    def ratios(self):
        s = self.sizes
        return [s[i] / s[i + 1] for i in range(len(s) - 1)]


def build_hierarchy(system: BlockSaddleSystem, fixed=None, target=8, max_coarse=300, c_scale=4.0,
                    max_levels=10, vnode=None) -> AmgHierarchy:
    A, B1, B2, C = (_csr(getattr(system, k)) for k in ("A", "B1", "B2", "C"))
    if fixed is None:
        fixed = detect_fixed(A, B2)
    else:
        f = np.zeros(A.shape[0], dtype=bool)
        f[np.asarray(fixed, dtype=np.int64)] = True
        fixed = f
    if vnode is None:
        vnode = np.repeat(np.arange(C.shape[0]), 3)
    levels = [Level(A, B1, B2, C, vnode, np.tile(np.arange(3), C.shape[0]), fixed)]
    while levels[-1].n > max_coarse and len(levels) < max_levels:
        lv = levels[-1]
        agg, na = aggregate_nodes(node_graph(lv), target)
        Pv, Pp, cnode, ccomp = prolongations(lv, agg, na)
        nc = Pv.shape[1] + Pp.shape[1]
        if lv.n / nc < 1.5:
            raise AMGError(f"coarsening stagnated at level {len(levels) - 1} "
                           f"({lv.n} -> {nc} dofs); try a larger aggregate target")
        Ac = _csr(Pv.T @ lv.A @ Pv)
        B1c = _csr(Pp.T @ lv.B1 @ Pv)
        B2c = _csr(Pp.T @ lv.B2 @ Pv)
        Cc = _csr(c_scale * (Pp.T @ lv.C @ Pp))
        lv.Pv, lv.Pp = Pv, Pp
        levels.append(Level(Ac, B1c, B2c, Cc, cnode, ccomp, np.zeros(Ac.shape[0], dtype=bool)))
    h = AmgHierarchy(levels, c_scale)
    h.coarse_lu = sla.lu_factor(levels[-1].matrix().toarray())
    return h


# ---------------------------------------------------------------------------
# smoothers

class BraessSarazin:
    """Inexact Uzawa sweep with ``A~ = 2 diag(A)`` and an approximate Schur solve.

    ``inner='amg'`` uses two V-cycles of scalar AMG from zero for
    ``S~ = B2 A~^-1 B1^T + C``; ``inner='exact'`` factorizes S~ (small tests).
    """

    def __init__(self, level: Level, inner="amg", inner_cycles=2):
        self.level = level
        self.dinv = 1.0 / (2.0 * level.A.diagonal())
        if np.any(~np.isfinite(self.dinv)) or np.any(level.A.diagonal()[~level.fixed] <= 0):
            raise AMGError("Braess-Sarazin needs a positive diagonal of A")
        S = _csr(level.B2 @ sp.diags(self.dinv) @ level.B1.T + level.C)
        self.S = S
        if inner == "exact" or S.shape[0] <= 200:
            lu = sla.lu_factor(S.toarray())
            self.solve_S = lambda r: sla.lu_solve(lu, r)
        else:
            self.solve_S = ScalarAMG(S, cycles=inner_cycles)

    def sweep(self, x, b, steps):
        lv = self.level
        nv = lv.nv
        w, p = x[:nv].copy(), x[nv:].copy()
        f, g = b[:nv], b[nv:]
        w[lv.fixed] = f[lv.fixed]
        for _ in range(steps):
            w = w + self.dinv * (f - lv.A @ w - lv.B1.T @ p)
            dp = self.solve_S(lv.B2 @ w - lv.C @ p - g)
            p = p + dp
            w = w - self.dinv * (lv.B1.T @ dp)
            w[lv.fixed] = f[lv.fixed]
        return np.concatenate([w, p])


@numba.njit(cache=True)
def _vanka_sweep(x, b, nv, steps, omega, A_ip, A_ix, A_v, B1t_ip, B1t_ix, B1t_v, B2_ip, B2_ix, B2_v,
                 C_ip, C_ix, C_v, p_ptr, p_dofs, inv_ptr, inv_val, order):
    for _ in range(steps):
        for ii in range(len(order)):
            i = order[ii]
            s, e = p_ptr[i], p_ptr[i + 1]
            m = e - s + 1
            r = np.empty(m)
            for a in range(e - s):
                row = p_dofs[s + a]
                acc = b[row]
                for k in range(A_ip[row], A_ip[row + 1]):
                    acc -= A_v[k] * x[A_ix[k]]
                for k in range(B1t_ip[row], B1t_ip[row + 1]):
                    acc -= B1t_v[k] * x[nv + B1t_ix[k]]
                r[a] = acc
            acc = b[nv + i]
            for k in range(B2_ip[i], B2_ip[i + 1]):
                acc -= B2_v[k] * x[B2_ix[k]]
            for k in range(C_ip[i], C_ip[i + 1]):
                acc += C_v[k] * x[nv + C_ix[k]]
            r[m - 1] = acc
            base = inv_ptr[i]
            for a in range(m):
                acc = 0.0
                for c in range(m):
                    acc += inv_val[base + a * m + c] * r[c]
                if a < m - 1:
                    x[p_dofs[s + a]] += omega * acc
                else:
                    x[nv + i] += omega * acc
    return x


@numba.njit(cache=True)
def _vanka_setup(nv, A_ip, A_ix, A_v, B1t_ip, B1t_ix, B1t_v, B2_ip, B2_ix, B2_v, C_ip, C_ix, C_v,
                 p_ptr, p_dofs, inv_ptr, inv_val, loc):
    npr = len(p_ptr) - 1
    bad = -1
    for i in range(npr):
        s, e = p_ptr[i], p_ptr[i + 1]
        m = e - s + 1
        K = np.zeros((m, m))
        for a in range(e - s):
            loc[p_dofs[s + a]] = a
        for a in range(e - s):
            row = p_dofs[s + a]
            for k in range(A_ip[row], A_ip[row + 1]):
                c = loc[A_ix[k]]
                if c >= 0:
                    K[a, c] = A_v[k]
            for k in range(B1t_ip[row], B1t_ip[row + 1]):
                if B1t_ix[k] == i:
                    K[a, m - 1] = B1t_v[k]
        for k in range(B2_ip[i], B2_ip[i + 1]):
            c = loc[B2_ix[k]]
            if c >= 0:
                K[m - 1, c] = B2_v[k]
        for k in range(C_ip[i], C_ip[i + 1]):
            if C_ix[k] == i:
                K[m - 1, m - 1] = -C_v[k]
        for a in range(e - s):
            loc[p_dofs[s + a]] = -1
        Kinv = np.linalg.inv(K)
        if not np.all(np.isfinite(Kinv)) or np.abs(Kinv).max() * np.abs(K).max() > 1e14:
            bad = i
            break
        base = inv_ptr[i]
        for a in range(m):
            for c in range(m):
                inv_val[base + a * m + c] = Kinv[a, c]
    return bad


class Vanka:
    """Multiplicative Vanka smoother; patches are built from the B2 row pattern."""

    def __init__(self, level: Level, omega=0.8):
        if not 0 < omega <= 1:
            raise ValueError("Vanka omega must lie in (0, 1]")
        self.level, self.omega = level, omega
        B2 = _csr(level.B2)
        free = ~level.fixed
        p_ptr = np.zeros(level.np_ + 1, dtype=np.int64)
        dofs = []
        for i in range(level.np_):
            cols = B2.indices[B2.indptr[i]:B2.indptr[i + 1]]
            cols = cols[free[cols]]
            dofs.append(cols)
            p_ptr[i + 1] = p_ptr[i] + len(cols)
        self.p_ptr = p_ptr
        self.p_dofs = np.concatenate(dofs).astype(np.int64) if dofs else np.zeros(0, np.int64)
        sizes = np.diff(p_ptr) + 1
        self.inv_ptr = np.concatenate([[0], np.cumsum(sizes**2)]).astype(np.int64)
        self.inv_val = np.empty(self.inv_ptr[-1])
        self.A = _csr(level.A)
        self.B1t = _csr(level.B1.T)
        self.B2 = B2
        self.C = _csr(level.C)
        self.order = np.arange(level.np_, dtype=np.int64)
        bad = _vanka_setup(level.nv, *self._arrays(), self.p_ptr, self.p_dofs, self.inv_ptr, self.inv_val,
                           -np.ones(level.nv, dtype=np.int64))
        if bad >= 0:
            raise AMGError(f"Vanka patch {bad} has a singular local matrix (missing stabilization?)")

    def _arrays(self):
        out = []
        for M in (self.A, self.B1t, self.B2, self.C):
            out += [M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data]
        return out

    def sweep(self, x, b, steps, order=None):
        lv = self.level
        x = np.array(x, dtype=float, copy=True)
        x[:lv.nv][lv.fixed] = b[:lv.nv][lv.fixed]
        o = self.order if order is None else np.asarray(order, dtype=np.int64)
        return _vanka_sweep(x, np.asarray(b, dtype=float), lv.nv, int(steps), float(self.omega),
                            *self._arrays(), self.p_ptr, self.p_dofs, self.inv_ptr, self.inv_val, o)


def braess_sarazin_smooth(level: Level, x, rhs, steps):
    if not isinstance(level.smoother, BraessSarazin):
        level.smoother = BraessSarazin(level)
    return level.smoother.sweep(x, rhs, steps)


def vanka_smooth(level: Level, x, rhs, steps, omega):
    if not isinstance(level.smoother, Vanka) or level.smoother.omega != omega:
        level.smoother = Vanka(level, omega)
    return level.smoother.sweep(x, rhs, steps)


# ---------------------------------------------------------------------------
# cycles

@dataclass
class AmgOptions:
    smoother: str = "vanka"      # or "braess_sarazin"
    steps: int = 12              # pre = post smoothing steps
    omega: float = 0.78          # Vanka relaxation
    target: int = 8              # vertices per aggregate
    max_coarse: int = 300
    c_scale: float = 4.0
    bs_inner: str = "amg"


def setup_smoothers(h: AmgHierarchy, opts: AmgOptions):
    for lv in h.levels[:-1]:
        if opts.smoother == "vanka":
            lv.smoother = Vanka(lv, opts.omega)
        elif opts.smoother == "braess_sarazin":
            lv.smoother = BraessSarazin(lv, inner=opts.bs_inner)
        else:
            raise ValueError(f"unknown smoother {opts.smoother!r}")
    return h


def vcycle(h: AmgHierarchy, x, rhs, pre, post, level=0):
    lv = h.levels[level]
    if level == len(h.levels) - 1:
        return sla.lu_solve(h.coarse_lu, rhs)
    x = lv.smoother.sweep(x, rhs, pre)
    r = lv.residual(x, rhs)
    rc = np.concatenate([lv.Pv.T @ r[:lv.nv], lv.Pp.T @ r[lv.nv:]])
    nxt = h.levels[level + 1]
    ec = vcycle(h, np.zeros(nxt.n), rc, pre, post, level + 1)
    x = x + np.concatenate([lv.Pv @ ec[:nxt.nv], lv.Pp @ ec[nxt.nv:]])
    return lv.smoother.sweep(x, rhs, post)


class SaddleAMG:
    """Hierarchy plus smoothers for one matrix; ``solve`` runs V-cycles to a tolerance."""

    def __init__(self, system: BlockSaddleSystem, opts: AmgOptions = None, fixed=None):
        self.opts = opts or AmgOptions()
        t0 = time.perf_counter()
        self.h = build_hierarchy(system, fixed, self.opts.target, self.opts.max_coarse, self.opts.c_scale)
        setup_smoothers(self.h, self.opts)
        self.setup_ms = 1e3 * (time.perf_counter() - t0)

    def refresh(self, system: BlockSaddleSystem):
        """New fine matrix, same aggregates: re-project and rebuild the smoothers."""
        t0 = time.perf_counter()
        lv = self.h.levels[0]
        lv.A, lv.B1, lv.B2, lv.C = (_csr(getattr(system, k)) for k in ("A", "B1", "B2", "C"))
        for fine, coarse in zip(self.h.levels[:-1], self.h.levels[1:]):
            coarse.A = _csr(fine.Pv.T @ fine.A @ fine.Pv)
            coarse.B1 = _csr(fine.Pp.T @ fine.B1 @ fine.Pv)
            coarse.B2 = _csr(fine.Pp.T @ fine.B2 @ fine.Pv)
            coarse.C = _csr(self.h.c_scale * (fine.Pp.T @ fine.C @ fine.Pp))
        self.h.coarse_lu = sla.lu_factor(self.h.levels[-1].matrix().toarray())
        setup_smoothers(self.h, self.opts)
        self.setup_ms = 1e3 * (time.perf_counter() - t0)

    def cycle(self, x, b):
        s = self.opts.steps
        return vcycle(self.h, x, b, s, s)

    def solve(self, b, tol=1e-8, max_cycles=100, x0=None):
        t0 = time.perf_counter()
        lv = self.h.levels[0]
        x = np.zeros(lv.n) if x0 is None else np.array(x0, dtype=float)
        bnorm = np.linalg.norm(b)
        r = lv.residual(x, b)
        rep = SolveReport(residuals=[float(np.linalg.norm(r))])
        if bnorm == 0.0:
            rep.converged, rep.reduction = True, 0.0
            return np.zeros(lv.n), rep
        if len(self.h.levels) == 1:
            x = sla.lu_solve(self.h.coarse_lu, b)
            rep.iterations, rep.converged = 1, True
            rep.reduction = float(np.linalg.norm(lv.residual(x, b)) / bnorm)
            rep.residuals.append(rep.reduction * bnorm)
            return x, rep
        for k in range(1, max_cycles + 1):
            x = self.cycle(x, b)
            rnorm = float(np.linalg.norm(lv.residual(x, b)))
            rep.residuals.append(rnorm)
            rep.iterations = k
            if not np.isfinite(rnorm):
                break
            if rnorm <= tol * bnorm:
                rep.converged = True
                break
        rep.reduction = rep.residuals[-1] / bnorm
        rep.wall_ms = 1e3 * (time.perf_counter() - t0)
        return x, rep


def amg_solve(system: BlockSaddleSystem, rhs=None, opts: AmgOptions = None, tol=1e-8, max_cycles=100):
    amg = SaddleAMG(system, opts)
    b = system.newton_rhs() if rhs is None else rhs
    return amg.solve(b, tol, max_cycles)
