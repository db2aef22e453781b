"""Unconstrained Lagrangian systems: Legendre map, energy, regularity, dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernel import DerivativeBundle, Differentiator, EngineError, SingularSystemError, solve_saddle


class RegularityError(SingularSystemError):
    """The velocity Hessian of L is singular at the requested state."""

    def __init__(self, message, det=0.0):
        super().__init__(message, block="mass")
        self.det = det


@dataclass(frozen=True)
class EnergyReport:
    E_L: float
    power_D: float
    power_R: float
    E_M: float = 0.0

    @property
    def E_total(self) -> float:
        return self.E_L + self.E_M


@dataclass(eq=False)
class LagrangianModel:
    """A mechanical system given by L(q, v, t) and a dissipative covector D(q, v, t).

    ``D`` is evaluated on plain float arrays and never differentiated.
    """

    n: int
    L: Callable
    D: Optional[Callable] = None
    labels: Sequence[str] = ()
    backend: str = "auto"
    _diff: Differentiator = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")
        if not self.labels:
            self.labels = tuple(f"q{i}" for i in range(self.n))
        self._diff = Differentiator(self.L, self.n, backend=self.backend)

    def derivatives(self, q, v, t=0.0) -> DerivativeBundle:
        return self._diff(q, v, t)

    def dissipation(self, q, v, t=0.0) -> np.ndarray:
        if self.D is None:
            return np.zeros(self.n)
        out = np.asarray(self.D(np.asarray(q, float), np.asarray(v, float), float(t)), dtype=float).ravel()
        if out.shape != (self.n,):
            raise EngineError(f"dissipation returned shape {out.shape}, expected ({self.n},)")
        return out


def legendre(model: LagrangianModel, q, v, t=0.0) -> np.ndarray:
    return model.derivatives(q, v, t).grad_v.copy()


def energy(model: LagrangianModel, q, v, t=0.0) -> float:
    d = model.derivatives(q, v, t)
    return float(np.dot(v, d.grad_v) - d.value)


def energy_from_bundle(d: DerivativeBundle, v) -> float:
    return float(np.dot(v, d.grad_v) - d.value)


def regularity(model: LagrangianModel, q, v, t=0.0, rel_tol: float = 1e-12):
    """Return ``(det, regular)`` for the velocity Hessian of L.

    The threshold scales with the Hessian norm so the test is unit-free.
    """
    H = model.derivatives(q, v, t).hess_vv
    d = float(np.linalg.det(H))
    scale = np.linalg.norm(H, 2)
    return d, bool(scale > 0 and abs(d) > rel_tol * scale ** model.n)


def generalized_force(d: DerivativeBundle, v, Dvec) -> np.ndarray:
    """Right side of the Euler-Lagrange equation once the inertia term is moved left.

    dL/dq + D - (d2L/dv dq) v - d2L/dv dt
    """
    return d.grad_q + Dvec - d.hess_vq @ v - d.hess_vt


def unconstrained_accel(model: LagrangianModel, q, v, t=0.0) -> np.ndarray:
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    d = model.derivatives(q, v, t)
    rhs = generalized_force(d, v, model.dissipation(q, v, t))
    try:
        a, _ = solve_saddle(d.hess_vv, None, rhs, None)
    except SingularSystemError as exc:
        raise RegularityError(f"velocity Hessian singular at q={q}, v={v}", det=float(np.linalg.det(d.hess_vv))) from exc
    return a


def inverse_legendre(model: LagrangianModel, q, p, t=0.0, v0=None, tol=1e-12, maxiter=50) -> np.ndarray:
    """Recover v from momenta p by Newton iteration on dL/dv(q, v) = p."""
    v = np.zeros(model.n) if v0 is None else np.array(v0, float)
    for _ in range(maxiter):
        d = model.derivatives(q, v, t)
        r = d.grad_v - p
        if np.max(np.abs(r), initial=0.0) < tol:
            return v
        v = v - np.linalg.solve(d.hess_vv, r)
    raise EngineError("inverse Legendre map did not converge")
