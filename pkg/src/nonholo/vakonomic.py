"""Variational (vakonomic) constrained dynamics.

The multipliers are dynamical variables: the Euler-Lagrange equations of
L + lambda^a F_a are solved jointly with the differentiated constraints for
the acceleration and the multiplier rate.  For velocity-linear constraints
this produces the curl ("magnetic") correction to the reaction; for general
velocity constraints the multiplier also enters the effective mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .constraints import ConstraintKind, ConstraintSet, OffManifoldError
from .kernel import SingularSystemError, solve_saddle
from .lagrangian import EnergyReport, LagrangianModel, energy_from_bundle, generalized_force
from .state import AugmentedState, StepEval

__all__ = [
    "AugmentedState",
    "EffectiveMassError",
    "VakonomicSolution",
    "VakonomicSystem",
    "assemble_vakonomic_linear",
    "assemble_vakonomic_nonlinear",
    "assemble_vakonomic_second_order",
    "constraint_energy",
    "total_energy",
]


class EffectiveMassError(SingularSystemError):
    """The multiplier-dependent inertia L_vv + lambda F_vv has become singular."""

    def __init__(self, message, condition=np.inf):
        super().__init__(message, block="mass", condition=condition)


class VakonomicSolution(NamedTuple):
    a: np.ndarray
    lam_rate: np.ndarray  # lambda-dot (first order) or lambda-ddot (second order)
    R: np.ndarray


def _weighted(lam, T):
    """sum_a lam_a T[a, ...] without einsum overhead."""
    return (lam @ T.reshape(len(lam), -1)).reshape(T.shape[1:])


def _check_effective_mass(Meff, exc):
    s = np.linalg.svd(Meff, compute_uv=False)
    if s[-1] <= 1e-10 * max(s[0], 1.0):
        raise EffectiveMassError(
            f"effective mass singular (smallest singular value {s[-1]:.3g})", condition=exc.condition
        ) from exc
    raise exc


@dataclass(eq=False)
class VakonomicSystem:
    """Model, constraint set and initial multipliers for a variational run.

    For first-order sets the state carries lambda; for second-order sets it
    carries lambda and lambda-dot.  Baumgarte: first-order constraints are
    enforced as F' + alpha F = 0.  Second-order constraints are imposed
    exactly at acceleration level and need no stabilisation.
    """

    model: LagrangianModel
    cs: ConstraintSet
    lam0: Optional[np.ndarray] = None
    lam_dot0: Optional[np.ndarray] = None
    alpha: float = 20.0
    beta: float = 100.0
    _first_order_view: Optional[ConstraintSet] = field(default=None, init=False, repr=False)

    formulation = "vakonomic"
    default_projection = True  # velocity projection only; lambda is left alone

    def __post_init__(self):
        if self.cs.kind is ConstraintKind.HOLONOMIC:
            raise ValueError("holonomic constraints: the variational and d'Alembert treatments coincide; use DalembertSystem")
        if self.cs.n != self.model.n:
            raise ValueError("constraint and model dimensions differ")
        m = self.cs.m
        self.lam0 = np.zeros(m) if self.lam0 is None else np.asarray(self.lam0, float).ravel()
        if self.lam0.shape != (m,):
            raise ValueError(f"lam0 must have length {m}")
        if self.second_order:
            self.lam_dot0 = np.zeros(m) if self.lam_dot0 is None else np.asarray(self.lam_dot0, float).ravel()

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.cs.m

    @property
    def second_order(self) -> bool:
        return self.cs.kind is ConstraintKind.SECOND_ORDER

    # -- integrator interface ---------------------------------------------

    def extra_size(self) -> int:
        return 2 * self.m if self.second_order else self.m

    def pack(self, state: AugmentedState) -> np.ndarray:
        lam = self.lam0 if state.lam is None else state.lam
        parts = [state.q, state.v, lam]
        if self.second_order:
            parts.append(self.lam_dot0 if state.lam_dot is None else state.lam_dot)
        return np.concatenate(parts)

    def unpack(self, y):
        n, m = self.n, self.m
        q, v, lam = y[:n], y[n : 2 * n], y[2 * n : 2 * n + m]
        if self.second_order:
            return q, v, lam, y[2 * n + m : 2 * n + 2 * m]
        return q, v, lam

    def evaluate(self, t: float, y: np.ndarray, full: bool = True) -> StepEval:
        """Derivative of the packed state; ``full=False`` skips the energy diagnostics."""
        parts = self.unpack(y)
        q, v, lam = parts[:3]
        dL = self.model.derivatives(q, v, t)
        Dvec = self.model.dissipation(q, v, t)
        force = generalized_force(dL, v, Dvec)
        E_L = energy_from_bundle(dL, v) if full else 0.0
        if self.second_order:
            lam_dot = parts[3]
            a, lam_ddot, R, res = self._second_order(q, v, lam, lam_dot, t, dL, force)
            return StepEval(
                dy=np.concatenate([v, a, lam_dot, lam_ddot]),
                a=a,
                lam=lam,
                lam_dot=lam_dot,
                R=R,
                E_L=E_L,
                E_M=0.0,
                power_D=float(Dvec @ v),
                residuals=res,
            )
        dF = self.cs.derivatives(q, v, t)
        if self.cs.kind is ConstraintKind.LINEAR_PFAFFIAN:
            a, lam_dot, R = self._linear(q, v, lam, t, dL, dF, force)
        else:
            a, lam_dot, R = self._nonlinear(q, v, lam, t, dL, dF, force)
        return StepEval(
            dy=np.concatenate([v, a, lam_dot]),
            a=a,
            lam=lam,
            lam_dot=lam_dot,
            R=R,
            E_L=E_L,
            E_M=float(lam @ (dF.grad_v @ v)) if full else 0.0,
            power_D=float(Dvec @ v),
            residuals=dF.value,
        )

    def residuals(self, t, y) -> np.ndarray:
        parts = self.unpack(y)
        if self.second_order:
            a = self.evaluate(t, y).a
            return self.cs.residuals(parts[0], parts[1], t, a)
        return self.cs.residuals(parts[0], parts[1], t)

    def project(self, t, y, tol) -> np.ndarray:
        if self.second_order:
            return y
        from .integrate import project_to_manifold

        q, v = y[: self.n], y[self.n : 2 * self.n]
        q2, v2 = project_to_manifold(self.cs, q, v, t, tol=tol)
        return np.concatenate([q2, v2, y[2 * self.n :]])

    # -- assemblers -------------------------------------------------------

    def _bottom(self, dF, v):
        return -(dF.grad_q @ v) - dF.dt_partial - self.alpha * dF.value

    def _linear(self, q, v, lam, t, dL, dF, force):
        omega = dF.grad_v
        domega = dF.hess_vq  # [a, i, j] = d omega_ai / d q_j
        curl = np.swapaxes(domega, -1, -2) - domega
        magnetic = _weighted(lam, curl) @ v - lam @ dF.hess_vt
        a, lam_dot = solve_saddle(dL.hess_vv, omega, force + magnetic, self._bottom(dF, v))
        R = -omega.T @ lam_dot + magnetic
        return a, lam_dot, R

    def _nonlinear(self, q, v, lam, t, dL, dF, force):
        n = self.n
        Fv = dF.grad_v
        H = _weighted(lam, dF.hess)  # lambda-weighted Hessian over (q, v, t)
        Fvv = H[n : 2 * n, n : 2 * n]
        Meff = dL.hess_vv + Fvv
        explicit = lam @ dF.grad_q - H[n : 2 * n, :n] @ v - H[n : 2 * n, 2 * n]
        try:
            a, lam_dot = solve_saddle(Meff, Fv, force + explicit, self._bottom(dF, v))
        except SingularSystemError as exc:
            _check_effective_mass(Meff, exc)
        R = -Fv.T @ lam_dot + explicit - Fvv @ a
        return a, lam_dot, R

    def _first_order(self) -> ConstraintSet:
        if self._first_order_view is None:
            F = self.cs.F
            self._first_order_view = ConstraintSet.nonlinear(
                self.n, lambda q, v, t: F(q, v, np.zeros(len(q)), t), m=self.m, backend=self.cs.backend
            )
        return self._first_order_view

    def _second_order(self, q, v, lam, lam_dot, t, dL, force):
        n, m = self.n, self.m
        dA = self.cs.accel_coefficient(q, t)
        A = dA.value.reshape(m, n)
        if np.max(np.abs(A)) < 1e-14:
            raise SingularSystemError(
                "second-order constraint does not depend on the acceleration; treat it as first order",
                block="constraint",
            )
        dF = self.cs.derivatives(q, v, t, a=np.zeros(n))
        b = dF.value
        Aq = dA.grad_q.reshape(m, n, n)  # [a, j, k] = d A_aj / d q_k
        Adot = Aq @ v + dA.dt_partial.reshape(m, n)
        c = (
            (dA.hess_qq @ v) @ v + 2 * dA.hess_qt @ v + dA.hess_tt
        ).reshape(m, n)
        T1 = _weighted(lam, Aq).T
        Fvv = _weighted(lam, dF.hess_vv)
        Meff = dL.hess_vv - T1 - T1.T + Fvv
        rest = (
            lam @ dF.grad_q
            - _weighted(lam, dF.hess_vq) @ v
            - lam @ dF.hess_vt
            - dF.grad_v.T @ lam_dot
            + 2 * lam_dot @ Adot
            + lam @ c
        )
        try:
            a, y = solve_saddle(Meff, A, force + rest, -b)
        except SingularSystemError as exc:
            _check_effective_mass(Meff, exc)
        lam_ddot = -y
        R = (T1 + T1.T - Fvv) @ a + A.T @ lam_ddot + rest
        res = self.cs.residuals(q, v, t, a)
        return a, lam_ddot, R, res


def _check_on_manifold(cs, q, v, t):
    r = cs.residuals(q, v, t)
    if np.max(np.abs(r)) >= cs.drift_tol:
        raise OffManifoldError(f"state violates constraints (max |F| = {np.max(np.abs(r)):.3g})", r)


def _assemble(sys: VakonomicSystem, state: AugmentedState, check: bool) -> StepEval:
    if check and not sys.second_order:
        _check_on_manifold(sys.cs, state.q, state.v, state.t)
    return sys.evaluate(state.t, sys.pack(state))


def assemble_vakonomic_linear(sys: VakonomicSystem, state: AugmentedState, check=True) -> VakonomicSolution:
    if sys.cs.kind is not ConstraintKind.LINEAR_PFAFFIAN:
        raise ValueError("linear assembler needs a linear Pfaffian constraint set")
    ev = _assemble(sys, state, check)
    return VakonomicSolution(ev.a, ev.lam_dot, ev.R)


def assemble_vakonomic_nonlinear(sys: VakonomicSystem, state: AugmentedState, check=True) -> VakonomicSolution:
    if not sys.cs.kind.first_order:
        raise ValueError("nonlinear assembler needs a first-order constraint set")
    if check:
        _check_on_manifold(sys.cs, state.q, state.v, state.t)
    q, v, t = state.q, state.v, state.t
    lam = sys.lam0 if state.lam is None else state.lam
    dL = sys.model.derivatives(q, v, t)
    force = generalized_force(dL, v, sys.model.dissipation(q, v, t))
    a, lam_dot, R = sys._nonlinear(q, v, lam, t, dL, sys.cs.derivatives(q, v, t), force)
    return VakonomicSolution(a, lam_dot, R)


def assemble_vakonomic_second_order(sys: VakonomicSystem, state: AugmentedState) -> VakonomicSolution:
    """Acceleration, multiplier second derivative and reaction for acceleration constraints.

    When the constraint turns out not to depend on the acceleration at all,
    it is handed to the first-order assembler and ``lam_rate`` is lambda-dot.
    """
    if not sys.second_order:
        raise ValueError("second-order assembler needs a second-order constraint set")
    q, v, t = state.q, state.v, state.t
    lam = sys.lam0 if state.lam is None else state.lam
    lam_dot = sys.lam_dot0 if state.lam_dot is None else state.lam_dot
    A = sys.cs.accel_coefficient(q, t).value
    if np.max(np.abs(A)) < 1e-14:
        fo = VakonomicSystem(sys.model, sys._first_order(), lam0=lam, alpha=sys.alpha, beta=sys.beta)
        return assemble_vakonomic_nonlinear(fo, AugmentedState(q, v, lam, t=t), check=False)
    dL = sys.model.derivatives(q, v, t)
    force = generalized_force(dL, v, sys.model.dissipation(q, v, t))
    a, lam_ddot, R, _ = sys._second_order(q, v, lam, lam_dot, t, dL, force)
    return VakonomicSolution(a, lam_ddot, R)


def constraint_energy(cs: ConstraintSet, lam, q, v, t=0.0) -> float:
    """lambda^a v^i dF_a/dv^i."""
    if not cs.kind.first_order:
        raise ValueError("constraint energy is defined for first-order velocity constraints")
    return float(np.asarray(lam, float) @ (cs.derivatives(q, v, t).grad_v @ np.asarray(v, float)))


def total_energy(model: LagrangianModel, cs: ConstraintSet, state: AugmentedState) -> EnergyReport:
    """Mechanical plus constraint energy, with dissipative and reaction power."""
    _check_on_manifold(cs, state.q, state.v, state.t)
    sys = VakonomicSystem(model, cs, lam0=state.lam)
    ev = sys.evaluate(state.t, sys.pack(state))
    return EnergyReport(E_L=ev.E_L, power_D=ev.power_D, power_R=ev.reaction_power, E_M=ev.E_M)
