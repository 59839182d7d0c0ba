import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsikit.materials import (
    ADVENTITIA_PARAMS, MEDIA_PARAMS, ArteryLayerParams, Kinematics, KinematicsError, MaterialError,
    MooneyRivlinParams, fiber_frame, fiber_frames, kinematics, material_tangent, pk2, pk2_artery,
    pk2_mooney_rivlin, strain_energy,
)
from fsikit.mesh import Region, generate_tube_mesh

MR = MooneyRivlinParams(3.0, 0.3, 1e5)
E_CIRC, E_AX = np.array([0.0, 1, 0]), np.array([0.0, 0, 1])


def frame_fibers(params):
    frame = np.array([[1.0, 0, 0], E_CIRC, E_AX])
    return params.fiber_vectors(frame)


def random_grad(rng, scale=0.2):
    g = rng.standard_normal((3, 3))
    return g / np.linalg.norm(g) * scale * rng.uniform(0.1, 1.0)


def random_sym(rng):
    d = rng.standard_normal((3, 3))
    return 0.5 * (d + d.T)


def artery_states(n, seed, params=MEDIA_PARAMS):
    rng = np.random.default_rng(seed)
    fib = frame_fibers(params)
    out = []
    while len(out) < n:
        kin = kinematics(random_grad(rng), fib)
        if kin.J4 > 1 and kin.J6 > 1:
            out.append(kin)
    return out, fib


def test_reference_kinematics():
    kin = kinematics(np.zeros((3, 3)), frame_fibers(MEDIA_PARAMS))
    for name, v in [("J", 1), ("I1", 3), ("I2", 3), ("I3", 1), ("J1", 3), ("J2", 3), ("J4", 1), ("J6", 1)]:
        assert getattr(kin, name) == pytest.approx(v, abs=1e-14)


def test_uniaxial_kinematics():
    kin = kinematics(np.diag([0.1, 0, 0]))
    assert kin.J == pytest.approx(1.1)
    assert kin.I1 == pytest.approx(1.21 + 2)
    assert kin.I3 == pytest.approx(1.21)
    assert kin.J4 is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_I3_is_J_squared(seed):
    kin = kinematics(random_grad(np.random.default_rng(seed), 0.29))
    assert kin.I3 == pytest.approx(kin.J**2, rel=1e-12)


def test_inverted_kinematics_raises():
    with pytest.raises(KinematicsError):
        kinematics(np.diag([-1.5, 0, 0]))


@pytest.mark.parametrize("params", [MR, MEDIA_PARAMS, ADVENTITIA_PARAMS])
def test_stress_free_reference(params):
    kin = kinematics(np.zeros((3, 3)), frame_fibers(params) if params is not MR else None)
    assert np.abs(pk2(kin, 0.0, params).S).max() <= 1e-12
    np.testing.assert_allclose(pk2(kin, 2.5, params).S, -2.5 * np.eye(3), atol=1e-12)
    np.testing.assert_allclose(material_tangent(params, kin, 0.0).dSdp, -np.eye(3), atol=1e-15)


def _energy_fd(kin_fn, params, C, D, h):
    return (strain_energy(kin_fn(C + h * D), params) - strain_energy(kin_fn(C - h * D), params)) / (2 * h)


@pytest.mark.parametrize("seed", range(10))
def test_mooney_rivlin_stress_matches_energy(seed):
    rng = np.random.default_rng(seed)
    kin = kinematics(random_grad(rng))
    D = random_sym(rng)
    h = 1e-6 * np.linalg.norm(kin.C)
    fd = _energy_fd(Kinematics.from_C, MR, kin.C, D, h)
    an = 0.5 * np.sum(pk2_mooney_rivlin(kin, 0.0, MR).S_prime * D)
    assert abs(fd - an) <= 1e-6 * abs(an)


@pytest.mark.parametrize("seed", range(10))
def test_artery_stress_matches_energy(seed):
    states, fib = artery_states(1, seed)
    kin = states[0]
    rng = np.random.default_rng(100 + seed)
    D = random_sym(rng)
    h = 1e-6 * np.linalg.norm(kin.C)
    fd = _energy_fd(lambda C: Kinematics.from_C(C, fib), MEDIA_PARAMS, kin.C, D, h)
    an = 0.5 * np.sum(pk2_artery(kin, 0.0, MEDIA_PARAMS).S_prime * D)
    assert abs(fd - an) <= 1e-6 * abs(an)


def tangent_fd_error(params, kin, p, D, fib=None):
    h = 1e-6 * np.linalg.norm(kin.C)
    sp_ = pk2(Kinematics.from_C(kin.C + h * D, fib), p, params).S
    sm_ = pk2(Kinematics.from_C(kin.C - h * D, fib), p, params).S
    fd = (sp_ - sm_) / (2 * h)
    an = np.einsum("ijkl,kl->ij", material_tangent(params, kin, p).dSdC, D)
    return np.linalg.norm(fd - an) / np.linalg.norm(an)


def test_mooney_rivlin_tangent_100_states():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        kin = kinematics(random_grad(rng))
        p = rng.uniform(-5, 5)
        worst = max(worst, tangent_fd_error(MR, kin, p, random_sym(rng)))
    assert worst <= 1e-6


@pytest.mark.parametrize("params", [MEDIA_PARAMS, ADVENTITIA_PARAMS])
def test_artery_tangent_100_states(params):
    states, fib = artery_states(100, 11, params)
    rng = np.random.default_rng(12)
    worst = max(tangent_fd_error(params, k, rng.uniform(-5, 5), random_sym(rng), fib) for k in states)
    assert worst <= 1e-6


def test_batched_evaluation_matches_single():
    states, fib = artery_states(5, 3)
    C = np.stack([k.C for k in states])
    kin = Kinematics.from_C(C, (np.broadcast_to(fib[0], (5, 3)), np.broadcast_to(fib[1], (5, 3))))
    p = np.linspace(-1, 1, 5)
    S = pk2(kin, p, MEDIA_PARAMS).S
    T = material_tangent(MEDIA_PARAMS, kin, p).dSdC
    for i, k in enumerate(states):
        np.testing.assert_allclose(S[i], pk2(k, p[i], MEDIA_PARAMS).S, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(T[i], material_tangent(MEDIA_PARAMS, k, p[i]).dSdC, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("params", [MR, MEDIA_PARAMS])
def test_tangent_major_symmetry(params):
    states, fib = artery_states(20, 5)
    for kin in states:
        if params is MR:
            kin = Kinematics.from_C(kin.C)
        _, Dp = material_tangent(params, kin, 0.0, split=True)
        V = material_tangent(params, kin, 0.0).voigt(Dp)
        assert np.abs(V - V.T).max() <= 1e-10 * np.abs(V).max()


def test_inactive_fibers_have_no_tangent_contribution():
    # compress along the fibre plane: J4, J6 < 1
    fib = frame_fibers(MEDIA_PARAMS)
    kin = kinematics(np.diag([0.05, -0.05, -0.05]), fib)
    assert kin.J4 < 1 and kin.J6 < 1
    iso = ArteryLayerParams(c10=MEDIA_PARAMS.c10, k1=1e-30, k2=1.0, alpha=29.0)
    _, D = material_tangent(MEDIA_PARAMS, kin, 0.0, split=True)
    _, D0 = material_tangent(iso, kin, 0.0, split=True)
    np.testing.assert_allclose(D, D0, atol=1e-14)


def test_fiber_direction_carries_more_stress():
    fib = frame_fibers(MEDIA_PARAMS)
    a = fib[0]
    # perpendicular to a01 in the circ/axial plane
    b = np.cross([1.0, 0, 0], a)
    stress = []
    for e in (a, b):
        F = np.eye(3) + 0.05 * np.outer(e, e)
        kin = kinematics(F - np.eye(3), fib)
        stress.append(e @ pk2_artery(kin, 0.0, MEDIA_PARAMS).S @ e)
    assert stress[0] > stress[1]


def test_exponent_guard():
    fib = frame_fibers(MEDIA_PARAMS)
    F = np.eye(3) + 30.0 * np.outer(fib[0], fib[0])
    kin = kinematics(F - np.eye(3), fib)
    with pytest.raises(MaterialError, match="reduce"):
        pk2_artery(kin, 0.0, MEDIA_PARAMS)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mixed_form_reproduces_pure_displacement(seed):
    rng = np.random.default_rng(seed)
    kin = kinematics(random_grad(rng))
    p = -MR.kappa * (kin.J - 1)
    S = pk2(kin, p, MR).S
    # pure displacement: S' + 2 kappa (J-1) dJ/dC with dJ/dC = J C^-1 / 2
    pure = pk2(kin, 0.0, MR).S_prime + 2 * MR.kappa * (kin.J - 1) * 0.5 * kin.J * kin.Cinv
    np.testing.assert_allclose(S, pure, rtol=1e-12, atol=1e-12 * np.abs(pure).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objectivity(seed):
    rng = np.random.default_rng(seed)
    g = random_grad(rng)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    F0 = np.eye(3) + g
    S0 = pk2(kinematics(g), 1.3, MR).S
    S1 = pk2(kinematics(Q @ F0 - np.eye(3)), 1.3, MR).S
    np.testing.assert_allclose(S1, S0, atol=1e-10)


def test_fiber_frame_alignment():
    m = generate_tube_mesh(n_axial=4, n_circ=8)
    frames = fiber_frames(m.vertices, m.tets[m.regions != Region.FLUID])
    np.testing.assert_allclose(np.linalg.norm(frames, axis=2), 1, atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(frames), 1, atol=1e-12)
    x = np.array([[1.43, 0, 5], [1.5, 0.01, 5.1], [1.5, -0.01, 4.9], [1.6, 0, 5]])
    x[1:, 1] -= x[:, 1].mean()
    frame = fiber_frames(x, np.array([[0, 1, 2, 3]]))[0]
    np.testing.assert_allclose(frame, np.eye(3), atol=1e-12)
    a01, _ = MEDIA_PARAMS.fiber_vectors(frame)
    t = np.deg2rad(29.0)
    np.testing.assert_allclose(a01, [0, np.cos(t), np.sin(t)], atol=1e-15)
    flat = ArteryLayerParams(3.0, 1.0, 1.0, alpha=0.0)
    np.testing.assert_allclose(flat.fiber_vectors(frame)[0], frame[1])
    assert fiber_frame(m, int(np.flatnonzero(m.regions == Region.MEDIA)[0])).shape == (3, 3)


def test_mu_l():
    assert MR.mu_l == pytest.approx(6.6)
    assert MEDIA_PARAMS.mu_l == pytest.approx(2 * (3 + 2.3632 / (2 * 0.8393)))
