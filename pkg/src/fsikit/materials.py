"""Hyperelastic laws in mixed (displacement/pressure) form.

Both models are written in terms of the modified invariants
``J1 = I1 I3^(-1/3)``, ``J2 = I2 I3^(-2/3)`` and, for the fibre families,
``Ji = I3^(-1/3) Ai:C``.  Stresses and tangents are evaluated through the
chain rule on the principal invariants ``(I1, I2, I3, I4, I6)``::

    S'     = 2 sum_a psi_a dIa/dC
    dS'/dC = 2 sum_ab psi_ab dIa/dC (x) dIb/dC + 2 sum_a psi_a d2Ia/dC2

and the mixed pressure enters as ``S = S' - p J C^-1``.  All functions are
vectorized over leading axes (one 3x3 tensor per element or quadrature
point).  Units: kPa.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

EXP_GUARD = 50.0
_I = np.eye(3)


class MaterialError(ValueError):
    pass


class KinematicsError(MaterialError):
    """det F <= 0: the element is inverted."""


@dataclass(frozen=True)
class MooneyRivlinParams:
    c10: float = 3.0
    c01: float = 0.3
    kappa: float = 1e5

    def __post_init__(self):
        if min(self.c10, self.c01, self.kappa) <= 0:
            raise ValueError("Mooney-Rivlin parameters must be positive")

    @property
    def mu_l(self) -> float:
        return 2.0 * (self.c10 + self.c01)


@dataclass(frozen=True)
class ArteryLayerParams:
    c10: float
    k1: float
    k2: float
    alpha: float  # degrees, fibre angle from the circumferential direction
    kappa: float = 1e5

    def __post_init__(self):
        if min(self.c10, self.k1, self.k2, self.kappa) <= 0:
            raise ValueError("artery parameters must be positive")

    @property
    def mu_l(self) -> float:
        return 2.0 * (self.c10 + self.k1 / (2.0 * self.k2))

    def local_fibers(self):
        a = np.deg2rad(self.alpha)
        return np.array([0.0, np.cos(a), np.sin(a)]), np.array([0.0, np.cos(a), -np.sin(a)])

    def fiber_vectors(self, frame):
        """Global fibre directions for local triads ``frame`` (..., 3, 3), rows (rad, circ, axial)."""
        l1, l2 = self.local_fibers()
        return l1 @ frame, l2 @ frame


MEDIA_PARAMS = ArteryLayerParams(c10=3.0, k1=2.3632, k2=0.8393, alpha=29.0)
ADVENTITIA_PARAMS = ArteryLayerParams(c10=0.3, k1=0.562, k2=0.7112, alpha=62.0)


@dataclass
class Kinematics:
    F: np.ndarray
    C: np.ndarray
    Cinv: np.ndarray
    J: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    A1: Optional[np.ndarray] = None
    A2: Optional[np.ndarray] = None
    J4: Optional[np.ndarray] = None
    J6: Optional[np.ndarray] = None

    @classmethod
    def from_C(cls, C, fibers=None, F=None):
        C = np.asarray(C, dtype=float)
        I3 = np.linalg.det(C)
        if np.any(I3 <= 0):
            raise KinematicsError("C is not positive definite")
        J = np.sqrt(I3) if F is None else np.linalg.det(F)
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1**2 - np.einsum("...ij,...ji->...", C, C))
        kin = cls(F=F, C=C, Cinv=np.linalg.inv(C), J=J, I1=I1, I2=I2, I3=I3,
                  J1=I1 * I3 ** (-1 / 3), J2=I2 * I3 ** (-2 / 3))
        if fibers is not None:
            a1, a2 = (np.asarray(a, dtype=float) for a in fibers)
            kin.A1 = a1[..., :, None] * a1[..., None, :]
            kin.A2 = a2[..., :, None] * a2[..., None, :]
            kin.J4 = I3 ** (-1 / 3) * np.einsum("...ij,...ij->...", kin.A1, C)
            kin.J6 = I3 ** (-1 / 3) * np.einsum("...ij,...ij->...", kin.A2, C)
        return kin


def kinematics(grad_d, fibers=None) -> Kinematics:
    """Kinematics of ``F = I + grad_d``; ``fibers`` is a pair of unit vectors."""
    F = _I + np.asarray(grad_d, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise KinematicsError(f"det F = {float(np.min(J)):.3e} <= 0 (inverted element)")
    C = np.swapaxes(F, -1, -2) @ F
    return Kinematics.from_C(C, fibers, F=F)


@dataclass
class StressState:
    S: np.ndarray
    S_prime: np.ndarray


@dataclass
class MaterialTangent:
    dSdC: np.ndarray  # (..., 3, 3, 3, 3), dS_ij / dC_kl for symmetric increments
    dSdp: np.ndarray  # (..., 3, 3)

    def voigt(self, part=None) -> np.ndarray:
        D = self.dSdC if part is None else part
        return D[..., _VI[:, None], _VJ[:, None], _VI[None, :], _VJ[None, :]]


_VI = np.array([0, 1, 2, 1, 0, 0])
_VJ = np.array([0, 1, 2, 2, 2, 1])


# ---------------------------------------------------------------------------
# invariant calculus

def _outer(a, b):
    return a[..., :, :, None, None] * b[..., None, None, :, :]


def _dCinv(Cinv):
    """d(C^-1)_ij / dC_kl for symmetric C."""
    return -0.5 * (np.einsum("...ik,...jl->...ijkl", Cinv, Cinv)
                   + np.einsum("...il,...jk->...ijkl", Cinv, Cinv))


_SYM_ID = 0.5 * (np.einsum("ik,jl->ijkl", _I, _I) + np.einsum("il,jk->ijkl", _I, _I))


class _Energy:
    """First and second derivatives of psi with respect to (I1, I2, I3, I4, I6)."""

    def __init__(self, shape):
        self.d1 = np.zeros((5,) + shape)
        self.d2 = np.zeros((5, 5) + shape)

    def power_term(self, c, a, q, kin):
        """psi += c * Ia * I3^q  (a in {0: I1, 1: I2})."""
        Ia = (kin.I1, kin.I2)[a]
        I3 = kin.I3
        self.d1[a] += c * I3**q
        self.d1[2] += c * q * Ia * I3 ** (q - 1)
        self.d2[a, 2] += c * q * I3 ** (q - 1)
        self.d2[2, a] += c * q * I3 ** (q - 1)
        self.d2[2, 2] += c * q * (q - 1) * Ia * I3 ** (q - 2)

    def fiber_term(self, k1, k2, a, Jf, I4, kin):
        """psi += k1/(2 k2) (exp(k2 (Jf-1)^2) - 1), active only for Jf > 1."""
        x = np.maximum(Jf - 1.0, 0.0)
        arg = k2 * x * x
        if np.any(arg > EXP_GUARD):
            raise MaterialError(
                f"fibre exponent k2*(J-1)^2 = {float(arg.max()):.1f} exceeds {EXP_GUARD}; "
                "reduce the load or time step")
        e = np.exp(arg)
        dE = k1 * x * e
        d2E = np.where(Jf > 1.0, k1 * e * (1.0 + 2.0 * arg), 0.0)
        I3 = kin.I3
        j4 = I3 ** (-1 / 3)                 # dJf/dI4
        j3 = -I4 * I3 ** (-4 / 3) / 3.0     # dJf/dI3
        j33 = 4.0 / 9.0 * I4 * I3 ** (-7 / 3)
        j34 = -I3 ** (-4 / 3) / 3.0
        self.d1[a] += dE * j4
        self.d1[2] += dE * j3
        self.d2[a, a] += d2E * j4 * j4
        self.d2[2, 2] += d2E * j3 * j3 + dE * j33
        self.d2[a, 2] += d2E * j4 * j3 + dE * j34
        self.d2[2, a] += d2E * j4 * j3 + dE * j34


def _invariant_derivatives(kin):
    C, Cinv = kin.C, kin.Cinv
    I = np.broadcast_to(_I, C.shape)
    dI = [I, kin.I1[..., None, None] * I - C, kin.I3[..., None, None] * Cinv]
    if kin.A1 is not None:
        dI += [kin.A1, kin.A2]
    return dI


def _second_derivatives(kin):
    d2 = [None, _outer(_I, _I) - _SYM_ID,
          kin.I3[..., None, None, None, None] * (_outer(kin.Cinv, kin.Cinv) + _dCinv(kin.Cinv))]
    return d2


def _energy(kin, params) -> _Energy:
    psi = _Energy(np.shape(kin.I1))
    if isinstance(params, MooneyRivlinParams):
        psi.power_term(params.c10 / 2, 0, -1 / 3, kin)
        psi.power_term(params.c01 / 2, 1, -2 / 3, kin)
    elif isinstance(params, ArteryLayerParams):
        if kin.J4 is None:
            raise MaterialError("artery model needs fibre directions")
        psi.power_term(params.c10 / 2, 0, -1 / 3, kin)
        I4 = np.einsum("...ij,...ij->...", kin.A1, kin.C)
        I6 = np.einsum("...ij,...ij->...", kin.A2, kin.C)
        psi.fiber_term(params.k1, params.k2, 3, kin.J4, I4, kin)
        psi.fiber_term(params.k1, params.k2, 4, kin.J6, I6, kin)
    else:
        raise TypeError(f"unknown material {type(params).__name__}")
    return psi


def _s(x):
    return np.asarray(x)[..., None, None]


def _stress(kin, p, params) -> StressState:
    psi = _energy(kin, params)
    dI = _invariant_derivatives(kin)
    Sp = sum(2.0 * _s(psi.d1[a]) * dI[a] for a in range(len(dI)))
    S = Sp - _s(np.asarray(p) * kin.J) * kin.Cinv
    return StressState(S=S, S_prime=Sp)


def pk2_mooney_rivlin(kin: Kinematics, p, params: MooneyRivlinParams) -> StressState:
    return _stress(kin, p, params)


def pk2_artery(kin: Kinematics, p, params: ArteryLayerParams) -> StressState:
    return _stress(kin, p, params)


def pk2(kin, p, params) -> StressState:
    return _stress(kin, p, params)


def material_tangent(params, kin: Kinematics, p, split=False):
    """Consistent tangent dS/dC at fixed p, and dS/dp = -J C^-1.

    With ``split=True`` also returns the isochoric/fibre part dS'/dC alone.
    """
    psi = _energy(kin, params)
    dI = _invariant_derivatives(kin)
    d2I = _second_derivatives(kin)
    n = len(dI)
    D = np.zeros(kin.C.shape + (3, 3))
    for a in range(n):
        for b in range(n):
            if np.any(psi.d2[a, b]):
                D += 2.0 * psi.d2[a, b][..., None, None, None, None] * _outer(dI[a], dI[b])
        if a in (1, 2) and np.any(psi.d1[a]):
            D += 2.0 * psi.d1[a][..., None, None, None, None] * d2I[a]
    pJ = (np.asarray(p) * kin.J)[..., None, None, None, None]
    Dp = -pJ * (0.5 * _outer(kin.Cinv, kin.Cinv) + _dCinv(kin.Cinv))
    tangent = MaterialTangent(dSdC=D + Dp, dSdp=-_s(kin.J) * kin.Cinv)
    return (tangent, D) if split else tangent


def strain_energy(kin, params) -> np.ndarray:
    """Isochoric plus fibre energy (no volumetric part)."""
    if isinstance(params, MooneyRivlinParams):
        return params.c10 / 2 * (kin.J1 - 3) + params.c01 / 2 * (kin.J2 - 3)
    w = params.c10 / 2 * (kin.J1 - 3)
    for Jf in (kin.J4, kin.J6):
        x = np.maximum(Jf - 1.0, 0.0)
        w = w + params.k1 / (2 * params.k2) * (np.exp(params.k2 * x * x) - 1.0)
    return w


# ---------------------------------------------------------------------------
# fibre frames

def fiber_frames(x, tets) -> np.ndarray:
    """Local (radial, circumferential, axial) triads at the element centroids.

    The tube axis is the z axis.  Returns (n, 3, 3) with the triad as rows.
    """
    c = x[tets].mean(axis=1)
    r = np.hypot(c[:, 0], c[:, 1])
    if np.any(r < 1e-12):
        raise MaterialError("element centroid on the tube axis: fibre frame undefined")
    e_rad = np.column_stack([c[:, 0] / r, c[:, 1] / r, np.zeros(len(c))])
    e_ax = np.tile([0.0, 0.0, 1.0], (len(c), 1))
    e_circ = np.cross(e_ax, e_rad)
    return np.stack([e_rad, e_circ, e_ax], axis=1)


def fiber_frame(mesh, tet: int) -> np.ndarray:
    return fiber_frames(mesh.vertices, mesh.tets[[tet]])[0]
