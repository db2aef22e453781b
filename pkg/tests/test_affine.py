import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from nonholo.affine import (
    AffineConfiguration,
    AffineError,
    InertiaData,
    affine_velocity,
    build_affine_model,
    compare_green,
    default_potential,
    deformation_state,
    green_tensor,
    initial_state,
    kinetic_internal,
    omega_hat_from_constraint,
    omega_hat_from_rotator,
    polar_decompose,
    simulate_affine,
    symmetry_residual,
    vakonomic_kinetic,
    vakonomic_lagrangian,
)
from nonholo.integrate import IntegratorConfig, Status

seeds = st.integers(0, 2**32 - 1)


def rot(th):
    return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])


def spd(rng, n, shift=None):
    B = rng.normal(size=(n, n))
    return B @ B.T + (n if shift is None else shift) * np.eye(n)


def sqrtm(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def random_rotation(rng, n):
    Q, R = np.linalg.qr(rng.normal(size=(n, n)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    return Q


def random_phi(rng, n, lo=0.1, hi=5.0):
    """det > 0 with singular values in [lo, hi]."""
    return random_rotation(rng, n) @ np.diag(rng.uniform(lo, hi, size=n)) @ random_rotation(rng, n).T


# -- kinematics -----------------------------------------------------------------


def test_affine_velocity_examples():
    S = np.array([[0.3, 1.0], [-2.0, 0.5]])
    Om, Omh = affine_velocity(np.eye(2), S)
    np.testing.assert_allclose(Om, S)
    np.testing.assert_allclose(Omh, S)
    Om, _ = affine_velocity(np.diag([2.0, 3.0]), np.zeros((2, 2)))
    np.testing.assert_allclose(Om, 0.0)
    Om, Omh = affine_velocity(np.diag([2.0, 1.0]), np.diag([2.0, 0.0]))
    np.testing.assert_allclose(Om, np.diag([1.0, 0.0]))
    np.testing.assert_allclose(Omh, np.diag([1.0, 0.0]))


def test_symmetry_residual_examples():
    assert np.max(np.abs(symmetry_residual(np.array([[1.0, 2.0], [2.0, 3.0]])))) == 0.0
    K = np.array([[0.0, 1.5], [-1.5, 0.0]])
    np.testing.assert_allclose(symmetry_residual(K), 2 * K)
    # index-wise oracle Omega^i_j - g^{ik} Omega^l_k g_lj (tests/_oracles.py)
    np.testing.assert_allclose(
        symmetry_residual(np.array([[0.0, 1.0], [0.0, 0.0]]), np.diag([1.0, 4.0])), [[0.0, 1.0], [-0.25, 0.0]]
    )


@given(seeds)
def test_symmetry_residual_index_formula(seed):
    rng = np.random.default_rng(seed)
    g = spd(rng, 3)
    Om = rng.normal(size=(3, 3))
    gi = np.linalg.inv(g)
    ref = Om - np.einsum("ik,lk,lj->ij", gi, Om, g)
    np.testing.assert_allclose(symmetry_residual(Om, g), ref, atol=1e-12)


def test_polar_examples():
    pf = polar_decompose(np.eye(2))
    np.testing.assert_allclose(pf.U, np.eye(2))
    np.testing.assert_allclose(pf.A, np.eye(2))
    pf = polar_decompose(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(pf.U, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(pf.A, np.diag([2.0, 3.0]), atol=1e-14)
    phi = rot(0.3) @ np.diag([2.0, 1.0])
    pf = polar_decompose(phi)
    assert np.max(np.abs(pf.U @ pf.A - phi)) < 1e-10
    assert np.max(np.abs(pf.U - rot(0.3))) < 1e-10
    assert np.max(np.abs(pf.A - np.diag([2.0, 1.0]))) < 1e-10


def check_polar(phi, g, eta, tol=1e-10):
    pf = polar_decompose(phi, g, eta)
    U, A = pf.U, pf.A
    scale = max(1.0, np.linalg.norm(phi))
    assert np.max(np.abs(U.T @ g @ U - eta)) < tol * np.linalg.norm(eta)
    assert np.max(np.abs(eta @ A - (eta @ A).T)) < tol * scale * np.linalg.norm(eta)
    assert np.min(np.linalg.eigvals(A).real) > 0
    assert np.max(np.abs(U @ A - phi)) < tol * scale


@given(seeds, st.sampled_from([2, 3]))
def test_polar_invariants(seed, n):
    rng = np.random.default_rng(seed)
    check_polar(random_phi(rng, n), spd(rng, n), spd(rng, n))


def test_polar_rejects_reflection():
    with pytest.raises(AffineError):
        polar_decompose(np.diag([1.0, -1.0]))


def test_rotator_examples():
    np.testing.assert_allclose(omega_hat_from_rotator(rot(0.4), np.zeros((2, 2))), 0.0)
    w = 1.7
    U = rot(0.4)
    Udot = w * rot(0.4 + np.pi / 2)
    np.testing.assert_allclose(omega_hat_from_rotator(U, Udot), [[0.0, -w], [w, 0.0]], atol=1e-14)
    with pytest.raises(AffineError):
        omega_hat_from_rotator(np.diag([1.0, 2.0]), np.zeros((2, 2)))


@given(seeds)
def test_rotator_skew_on_fd_path(seed):
    rng = np.random.default_rng(seed)
    g, eta = spd(rng, 3), spd(rng, 3)
    K = rng.normal(size=(3, 3))
    K = K - K.T
    gih, eh = np.linalg.inv(sqrtm(g)), sqrtm(eta)
    path = lambda s: gih @ scipy.linalg.expm(s * K) @ eh  # (eta, g)-orthogonal for every s
    h = 1e-5
    Udot = (path(h) - path(-h)) / (2 * h)
    w = omega_hat_from_rotator(path(0.0), Udot, eta, g)
    assert np.max(np.abs(eta @ w + (eta @ w).T)) < 1e-8


def test_constraint_rotator_examples():
    np.testing.assert_allclose(omega_hat_from_constraint(np.diag([2.0, 1.0]), np.diag([0.3, -1.0])), 0.0)
    np.testing.assert_allclose(omega_hat_from_constraint(np.eye(2), np.array([[0.2, 1.0], [1.0, 0.0]])), 0.0)
    w = omega_hat_from_constraint(np.diag([2.0, 1.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(w, [[0.0, -0.25], [0.25, 0.0]], atol=1e-15)


def test_rotation_less_path_consistency():
    # phi(t) = expm(S t) phi0 with S symmetric is rotation-less
    rng = np.random.default_rng(7)
    S = rng.normal(size=(3, 3))
    S = 0.5 * (S + S.T)
    phi0 = np.diag([1.3, 0.8, 1.1]) + 0.1 * rng.normal(size=(3, 3))
    phi = lambda t: scipy.linalg.expm(S * t) @ phi0
    h = 1e-5
    for t in (0.0, 0.2, 0.5):
        p0, pp, pm = (polar_decompose(phi(t + d)) for d in (0.0, h, -h))
        Udot = (pp.U - pm.U) / (2 * h)
        Adot = (pp.A - pm.A) / (2 * h)
        w_rot = omega_hat_from_rotator(p0.U, Udot)
        w_con = omega_hat_from_constraint(p0.A, Adot)
        assert np.max(np.abs(w_rot - w_con)) < 1e-6


# -- energies -------------------------------------------------------------------


def test_kinetic_examples():
    rng = np.random.default_rng(3)
    A = spd(rng, 2)
    Ad = rng.normal(size=(2, 2))
    assert kinetic_internal(A, Ad, np.zeros((2, 2))) == pytest.approx(0.5 * np.sum(Ad**2))
    w = np.array([[0.0, -0.7], [0.7, 0.0]])
    assert kinetic_internal(np.eye(2), np.zeros((2, 2)), w) == pytest.approx(0.5 * np.sum(w**2))


@given(seeds, st.sampled_from([2, 3]))
def test_substitution_identity(seed, n):
    rng = np.random.default_rng(seed)
    J, eta = spd(rng, n), spd(rng, n)
    A = np.linalg.solve(eta, spd(rng, n, shift=0.5))
    Sd = rng.normal(size=(n, n))
    Ad = np.linalg.solve(eta, Sd + Sd.T)
    lhs = kinetic_internal(A, Ad, omega_hat_from_constraint(A, Ad), J, eta)
    rhs = vakonomic_kinetic(A, Ad, J, eta)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_vakonomic_lagrangian_examples():
    V = default_potential(2.0)
    A = np.diag([1.2, 0.9])
    assert vakonomic_lagrangian(A, np.zeros((2, 2)), V=V) == pytest.approx(-V(A.T @ A))
    Ad = np.array([[0.3, -0.4], [-0.4, 0.1]])
    assert vakonomic_lagrangian(np.eye(2), Ad, V=V) == pytest.approx(0.5 * np.trace(Ad @ Ad) - V(np.eye(2)))
    assert V(np.eye(2)) == 0.0


@given(seeds)
def test_green_tensor_invariance(seed):
    rng = np.random.default_rng(seed)
    g = spd(rng, 3)
    phi = random_phi(rng, 3)
    G = green_tensor(phi, g)
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(G)) > 0
    K = rng.normal(size=(3, 3))
    R = np.linalg.inv(sqrtm(g)) @ scipy.linalg.expm(K - K.T) @ sqrtm(g)  # R^T g R = g
    np.testing.assert_allclose(green_tensor(R @ phi, g), G, rtol=1e-10, atol=1e-10)


@given(seeds)
def test_deformation_state_invariants(seed):
    rng = np.random.default_rng(seed)
    body = InertiaData(2, eta=spd(rng, 2), g=spd(rng, 2))
    cfg = AffineConfiguration(None, random_phi(rng, 2), None, rng.normal(size=(2, 2)))
    ds = deformation_state(cfg, body)
    np.testing.assert_allclose(ds.Omega_hat, np.linalg.solve(cfg.phi, ds.Omega @ cfg.phi), atol=1e-10)
    ew = body.eta @ ds.omega_hat
    assert np.max(np.abs(ew + ew.T)) < 1e-10 * max(1, np.max(np.abs(ew)))
    assert np.min(np.linalg.eigvalsh(ds.G)) > 0
    # phi' = U (A' + w A)
    pf = polar_decompose(cfg.phi, body.g, body.eta)
    np.testing.assert_allclose(pf.U @ (ds.Adot + ds.omega_hat @ pf.A), cfg.phidot, atol=1e-9)


def test_from_deformation_is_rotation_less():
    A = np.diag([1.2, 0.9])
    Ad = np.array([[0.1, 0.3], [0.3, -0.1]])
    cfg = AffineConfiguration.from_deformation(A, Ad, U=rot(0.5))
    Om, _ = affine_velocity(cfg.phi, cfg.phidot)
    assert np.max(np.abs(symmetry_residual(Om))) < 1e-14
    np.testing.assert_allclose(deformation_state(cfg).Adot, Ad, atol=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        InertiaData(2, J=np.diag([1.0, -1.0]))
    with pytest.raises(AffineError):
        AffineConfiguration(None, np.diag([1.0, -1.0]), None, np.zeros((2, 2)))
    am = build_affine_model(InertiaData(2), None, "dalembert")
    bad = AffineConfiguration(None, np.eye(2), None, np.array([[0.0, 1.0], [-1.0, 0.0]]))
    with pytest.raises(AffineError):
        initial_state(am, bad)
    with pytest.raises(ValueError):
        build_affine_model(InertiaData(2), None, "both")


# -- dynamics -------------------------------------------------------------------


def test_isotropic_runs_coincide():
    init = AffineConfiguration.from_deformation(np.eye(2), 0.2 * np.eye(2))
    cfg = IntegratorConfig(1e-3, 0.5, record_every=10)
    body = InertiaData(2)
    V = default_potential(1.0)
    vak = simulate_affine(body, V, "vakonomic", init, cfg)
    dal = simulate_affine(body, V, "dalembert", init, cfg)
    assert vak.status is Status.COMPLETED and dal.status is Status.COMPLETED
    assert np.max(compare_green(vak, dal)) < 1e-10
    # pure dilatation: G stays a multiple of the identity
    for G in vak.G:
        assert abs(G[0, 1]) < 1e-12 and G[0, 0] == pytest.approx(G[1, 1], abs=1e-12)


def test_energy_and_symmetry_along_runs():
    init = AffineConfiguration.from_deformation(np.diag([1.05, 0.97]), np.array([[0.02, 0.03], [0.03, -0.01]]), rdot=[0.1, 0.0])
    cfg = IntegratorConfig(1e-2, 10.0, record_every=10)
    body = InertiaData(2, J=np.diag([1.0, 0.5]))
    for form in ("vakonomic", "dalembert"):
        res = simulate_affine(body, None, form, init, cfg)
        assert res.status is Status.COMPLETED, res.sim.message
        assert res.energy_drift < 1e-6
        assert np.max(res.symmetry_residual) < 1e-6
        for G in res.G:
            assert np.min(np.linalg.eigvalsh(G)) > 0
        np.testing.assert_allclose(res.r[-1], [1.0, 0.0], atol=1e-10)
