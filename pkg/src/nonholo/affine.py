"""Rotation-less affinely-rigid body.

The body moves as xi = r + phi a.  Rotation-less motion means the affine
velocity Omega = phi' phi^{-1} is g-symmetric.  Two dynamics are offered:

* ``dalembert``: the free affine body (translation plus the n^2 entries of
  phi) under the linear velocity constraint skew(phi^T g phi') = 0.  This is
  equivalent to g-symmetry of Omega (congruence by phi) and keeps the
  constraint polynomial.  Reactions lie in the span of the constraint rows,
  i.e. the symmetric part (indices lowered with g) of the free equations is
  what drives the motion.
* ``vakonomic``: the rotation-free kinetic energy is substituted before
  varying, giving an unconstrained Lagrangian on (r, A) with A
  eta-symmetric, parametrised by the upper triangle of S = eta A.

All matrix helpers accept float arrays or object arrays of generic scalars
so that the derivative engine can trace them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .constraints import ConstraintSet
from .dalembert import DalembertSystem
from .integrate import IntegratorConfig, SimulationResult, Status, simulate
from .kernel import EngineError, inv
from .lagrangian import LagrangianModel
from .state import AugmentedState

logger = logging.getLogger(__name__)

DET_MIN = 1e-10
FORMULATIONS = ("vakonomic", "dalembert")


class AffineError(EngineError):
    pass


# ---------------------------------------------------------------------------
# data


@dataclass
class InertiaData:
    """Total mass, co-moving inertia J and the spatial/material metrics."""

    n: int = 2
    m_total: float = 1.0
    J: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        I = np.eye(self.n)
        self.J = I.copy() if self.J is None else np.asarray(self.J, float)
        self.g = I.copy() if self.g is None else np.asarray(self.g, float)
        self.eta = I.copy() if self.eta is None else np.asarray(self.eta, float)
        if self.m_total <= 0:
            raise ValueError("total mass must be positive")
        for name in ("J", "g", "eta"):
            M = getattr(self, name)
            if M.shape != (self.n, self.n):
                raise ValueError(f"{name} must be {self.n}x{self.n}")
            if not np.allclose(M, M.T, atol=1e-12) or np.min(np.linalg.eigvalsh(M)) <= 0:
                raise ValueError(f"{name} must be symmetric positive-definite")


@dataclass
class AffineConfiguration:
    """Centre r, deformation phi and their velocities."""

    r: np.ndarray
    phi: np.ndarray
    rdot: np.ndarray
    phidot: np.ndarray

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi, float))
        n = self.phi.shape[0]
        self.phidot = np.asarray(self.phidot, float).reshape(n, n)
        self.r = np.zeros(n) if self.r is None else np.asarray(self.r, float).ravel()
        self.rdot = np.zeros(n) if self.rdot is None else np.asarray(self.rdot, float).ravel()
        if not np.all(np.isfinite(self.phi)) or not np.all(np.isfinite(self.phidot)):
            raise AffineError("configuration has non-finite entries")
        if np.linalg.det(self.phi) <= DET_MIN:
            raise AffineError(f"det phi = {np.linalg.det(self.phi):.3g} is not positive")

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def from_deformation(cls, A, Adot, r=None, rdot=None, U=None, eta=None) -> "AffineConfiguration":
        """phi = U A with phi' chosen so that the motion is rotation-less at this instant."""
        A = np.asarray(A, float)
        Adot = np.asarray(Adot, float)
        U = np.eye(len(A)) if U is None else np.asarray(U, float)
        w = omega_hat_from_constraint(A, Adot)
        return cls(r, U @ A, rdot, U @ (Adot + w @ A))


@dataclass
class PolarFactors:
    U: np.ndarray
    A: np.ndarray


@dataclass
class DeformationState:
    Omega: np.ndarray
    Omega_hat: np.ndarray
    omega_hat: np.ndarray
    G: np.ndarray
    Adot: np.ndarray


# ---------------------------------------------------------------------------
# kinematics


def affine_velocity(phi, phidot):
    """Spatial and co-moving affine velocities (phi' phi^-1, phi^-1 phi')."""
    phi = np.asarray(phi, float)
    if abs(np.linalg.det(phi)) <= DET_MIN:
        raise AffineError("singular deformation matrix")
    pinv = np.linalg.inv(phi)
    return phidot @ pinv, pinv @ phidot


def symmetry_residual(Omega, g=None):
    """Omega - g^-1 Omega^T g; zero exactly for rotation-less motion."""
    Omega = np.asarray(Omega, float)
    if g is None:
        return Omega - Omega.T
    g = np.asarray(g, float)
    return Omega - np.linalg.solve(g, Omega.T @ g)


def _sqrtm_spd(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def polar_decompose(phi, g=None, eta=None) -> PolarFactors:
    """phi = U A with U^T g U = eta and eta A symmetric positive-definite.

    Works through the SVD of g^{1/2} phi eta^{-1/2}, which avoids forming
    the squared pullback phi^T g phi and so keeps full accuracy for
    moderately conditioned phi.
    """
    phi = np.asarray(phi, float)
    n = phi.shape[0]
    if not np.all(np.isfinite(phi)):
        raise AffineError("non-finite deformation matrix")
    if np.linalg.det(phi) <= 0:
        raise AffineError("polar decomposition needs det phi > 0")
    gh = np.eye(n) if g is None else _sqrtm_spd(np.asarray(g, float))
    eh = np.eye(n) if eta is None else _sqrtm_spd(np.asarray(eta, float))
    try:
        W, s, Vt = np.linalg.svd(gh @ phi @ np.linalg.inv(eh))
    except np.linalg.LinAlgError as exc:
        raise AffineError(f"polar decomposition failed: {exc}") from exc
    S = (Vt.T * s) @ Vt
    A = np.linalg.solve(eh, S @ eh)
    U = np.linalg.solve(gh, W @ Vt @ eh)
    return PolarFactors(U, A)


def green_tensor(phi, g=None):
    """G = phi^T g phi."""
    if g is None:
        return phi.T @ phi
    return phi.T @ g @ phi


def omega_hat_from_rotator(U, Udot, eta=None, g=None, tol=1e-8):
    """U^-1 U' for an (eta, g)-orthogonal U."""
    U = np.asarray(U, float)
    n = U.shape[0]
    eta = np.eye(n) if eta is None else np.asarray(eta, float)
    g = np.eye(n) if g is None else np.asarray(g, float)
    if np.max(np.abs(U.T @ g @ U - eta)) > tol * max(1.0, np.max(np.abs(eta))):
        raise AffineError("U is not orthogonal with respect to (eta, g)")
    return np.linalg.solve(U, Udot)


def omega_hat_from_constraint(A, Adot):
    """1/2 [A^-1, A'], the rotator velocity forced by rotation-less motion."""
    Ai = inv(A)
    return 0.5 * (Ai @ Adot - Adot @ Ai)


def _pair(X, Y, J, eta):
    # tr(X^T eta Y J)
    return np.trace(X.T @ eta @ Y @ J)


def kinetic_internal(A, Adot, omega_hat, J=None, eta=None):
    """Internal kinetic energy in the three-term (A', w A A', w A w A) form."""
    n = len(A)
    J = np.eye(n) if J is None else J
    eta = np.eye(n) if eta is None else eta
    wA = omega_hat @ A
    return 0.5 * _pair(Adot, Adot, J, eta) + _pair(wA, Adot, J, eta) + 0.5 * _pair(wA, wA, J, eta)


def vakonomic_kinetic(A, Adot, J=None, eta=None):
    """Kinetic part of the vakonomic Lagrangian (four-term form without the potential)."""
    n = len(A)
    J = np.eye(n) if J is None else J
    eta = np.eye(n) if eta is None else eta
    B = inv(A) @ Adot @ A
    return 0.125 * _pair(Adot, Adot, J, eta) + 0.25 * _pair(B, Adot, J, eta) + 0.125 * _pair(B, B, J, eta)


def vakonomic_lagrangian(A, Adot, J=None, eta=None, V: Optional[Callable] = None):
    n = len(A)
    eta_ = np.eye(n) if eta is None else eta
    T = vakonomic_kinetic(A, Adot, J, eta_)
    if V is None:
        return T
    return T - V(A.T @ eta_ @ A)


def default_potential(k: float = 1.0, eta=None) -> Callable:
    """(k/4) tr((G - eta) eta^-1 (G - eta) eta^-1): minimum at G = eta."""

    def V(G):
        n = len(G)
        e = np.eye(n) if eta is None else np.asarray(eta, float)
        ei = np.linalg.inv(e)
        D = (G - e) @ ei
        return 0.25 * k * np.trace(D @ D)

    return V


def deformation_state(config: AffineConfiguration, body: Optional[InertiaData] = None) -> DeformationState:
    """Omega, co-moving Omega, rotator velocity, Green tensor and A'.

    A' is recovered from dG/dt via a Sylvester equation, which is valid for
    any motion (rotation-less or not).
    """
    n = config.n
    body = body or InertiaData(n)
    g, eta = body.g, body.eta
    Om, Omh = affine_velocity(config.phi, config.phidot)
    pf = polar_decompose(config.phi, g, eta)
    G = green_tensor(config.phi, g)
    Gdot = config.phidot.T @ g @ config.phi + config.phi.T @ g @ config.phidot
    ei = np.linalg.inv(eta)
    Ah = eta @ pf.A  # symmetric
    Sd = scipy.linalg.solve_sylvester(Ah @ ei, ei @ Ah, Gdot)
    Sd = 0.5 * (Sd + Sd.T)
    Adot = ei @ Sd
    X = np.linalg.solve(pf.U, config.phidot)
    w = (X - Adot) @ np.linalg.inv(pf.A)
    return DeformationState(Om, Omh, w, G, Adot)


# ---------------------------------------------------------------------------
# dynamics


def _tri(n):
    return np.triu_indices(n)


def _sym_from(vec, n):
    iu = _tri(n)
    S = np.empty((n, n), dtype=object if vec.dtype == object else float)
    S[iu] = vec
    S[iu[1], iu[0]] = vec
    return S


@dataclass(eq=False)
class AffineModel:
    """Assembled system plus the maps between its coordinates and (A, phi, G)."""

    formulation: str
    body: InertiaData
    V: Callable
    system: object
    n_coords: int

    def split(self, q):
        n = self.body.n
        return q[:n], q[n:]

    def green(self, q):
        n = self.body.n
        _, x = self.split(q)
        if self.formulation == "dalembert":
            return green_tensor(x.reshape(n, n), self.body.g)
        A = np.linalg.solve(self.body.eta, _sym_from(x, n))
        return A.T @ self.body.eta @ A

    def kinetic_internal(self, q, v):
        n = self.body.n
        _, x = self.split(q)
        _, xd = self.split(v)
        if self.formulation == "dalembert":
            P = xd.reshape(n, n)
            return 0.5 * np.trace(P.T @ self.body.g @ P @ self.body.J)
        ei = np.linalg.inv(self.body.eta)
        A = ei @ _sym_from(x, n)
        Ad = ei @ _sym_from(xd, n)
        return float(vakonomic_kinetic(A, Ad, self.body.J, self.body.eta))

    def symmetry_residual(self, q, v):
        n = self.body.n
        if self.formulation != "dalembert":
            return np.zeros((n, n))
        _, x = self.split(q)
        _, xd = self.split(v)
        Om, _ = affine_velocity(x.reshape(n, n), xd.reshape(n, n))
        return symmetry_residual(Om, self.body.g)


def build_affine_model(body: InertiaData, V: Optional[Callable], formulation: str, backend="auto") -> AffineModel:
    formulation = formulation.lower()
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    n = body.n
    V = V or default_potential(1.0, body.eta)
    m, J, g, eta = body.m_total, body.J, body.g, body.eta
    ei = np.linalg.inv(eta)
    if formulation == "dalembert":
        N = n + n * n

        def L(q, v, t):
            rd = v[:n]
            P = q[n:].reshape(n, n)
            Pd = v[n:].reshape(n, n)
            T = 0.5 * m * (rd @ g @ rd) + 0.5 * np.trace(Pd.T @ g @ Pd @ J)
            return T - V(P.T @ g @ P)

        iu = np.triu_indices(n, 1)

        def F(q, v, t):
            P = q[n:].reshape(n, n)
            Pd = v[n:].reshape(n, n)
            M = P.T @ g @ Pd
            return (M - M.T)[iu]

        model = LagrangianModel(N, L, backend=backend)
        cs = ConstraintSet.linear_pfaffian(N, F=F, m=len(iu[0]), backend=backend)
        system = DalembertSystem(model, cs)
    else:
        N = n + n * (n + 1) // 2

        def L(q, v, t):
            rd = v[:n]
            A = ei @ _sym_from(q[n:], n)
            Ad = ei @ _sym_from(v[n:], n)
            return 0.5 * m * (rd @ g @ rd) + vakonomic_lagrangian(A, Ad, J, eta, V)

        model = LagrangianModel(N, L, backend=backend)
        system = DalembertSystem(model, None)
        system.formulation = "vakonomic"
    return AffineModel(formulation, body, V, system, N)


def initial_state(am: AffineModel, init: AffineConfiguration, tol=1e-8) -> AugmentedState:
    body = am.body
    n = body.n
    if init.n != n:
        raise ValueError("configuration and body dimensions differ")
    Om, _ = affine_velocity(init.phi, init.phidot)
    res = symmetry_residual(Om, body.g)
    if np.max(np.abs(res)) > tol:
        raise AffineError(f"initial affine velocity is not rotation-less (residual {np.max(np.abs(res)):.3g})")
    if am.formulation == "dalembert":
        return AugmentedState(np.concatenate([init.r, init.phi.ravel()]), np.concatenate([init.rdot, init.phidot.ravel()]))
    ds = deformation_state(init, body)
    pf = polar_decompose(init.phi, body.g, body.eta)
    iu = _tri(n)
    S = body.eta @ pf.A
    Sd = body.eta @ ds.Adot
    return AugmentedState(np.concatenate([init.r, S[iu]]), np.concatenate([init.rdot, Sd[iu]]))


@dataclass
class AffineResult:
    formulation: str
    sim: SimulationResult
    t: np.ndarray
    G: np.ndarray
    T_int: np.ndarray
    energy: np.ndarray
    symmetry_residual: np.ndarray
    r: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def status(self):
        return self.sim.status

    @property
    def energy_drift(self) -> float:
        return self.sim.energy_drift


def simulate_affine(
    body: InertiaData,
    V: Optional[Callable],
    formulation: str,
    init: AffineConfiguration,
    cfg: IntegratorConfig,
    model: Optional[AffineModel] = None,
) -> AffineResult:
    """Integrate one formulation and record G, T_int and energy along the run.

    ``model`` may be passed to reuse a previously built (and compiled) system.
    """
    am = model if model is not None else build_affine_model(body, V, formulation)
    state = initial_state(am, init)
    sim = simulate(am.system, state, cfg)
    n = body.n
    Gs, Ts, res, rs = [], [], [], []
    for s in sim.samples:
        G = am.green(s.q)
        if np.min(np.linalg.eigvalsh(0.5 * (G + G.T))) <= 0:
            sim.status = Status.SINGULAR_SYSTEM
            sim.message = f"t={s.t:.6g}: Green tensor lost positive-definiteness"
            break
        Gs.append(G)
        Ts.append(am.kinetic_internal(s.q, s.v))
        res.append(np.max(np.abs(am.symmetry_residual(s.q, s.v))))
        rs.append(s.q[:n])
    k = len(Gs)
    return AffineResult(
        formulation=am.formulation,
        sim=sim,
        t=sim.t[:k],
        G=np.array(Gs).reshape(k, n, n),
        T_int=np.array(Ts),
        energy=sim.E_total[:k],
        symmetry_residual=np.array(res),
        r=np.array(rs).reshape(k, n),
    )


def compare_green(a: AffineResult, b: AffineResult) -> np.ndarray:
    """Frobenius distance between the two G series on their common grid."""
    k = min(len(a.t), len(b.t))
    if not np.allclose(a.t[:k], b.t[:k]):
        raise ValueError("results are on different time grids")
    return np.linalg.norm((a.G[:k] - b.G[:k]).reshape(k, -1), axis=1)
