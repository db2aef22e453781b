"""d'Alembert / Appell-Chetaev constrained dynamics and penalty realisation.

Reactions lie along dF/dv for velocity constraints (dF/dq for holonomic
ones) and the multiplier is an instantaneous algebraic unknown, solved for
jointly with the acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .constraints import ConstraintKind, ConstraintSet, OffManifoldError
from .kernel import SingularSystemError, solve_saddle
from .lagrangian import LagrangianModel, RegularityError, energy_from_bundle, generalized_force
from .state import AugmentedState, StepEval


class DalembertSolution(NamedTuple):
    a: np.ndarray
    lam: np.ndarray
    R: np.ndarray


@dataclass(eq=False)
class DalembertSystem:
    """Lagrangian model plus an optional holonomic or first-order constraint set.

    ``alpha`` and ``beta`` are Baumgarte gains.  Holonomic constraints are
    enforced as F'' + alpha F' + beta F = 0; first-order ones as
    F' + alpha F = 0 (``beta`` unused).  ``cs=None`` gives plain
    unconstrained dynamics.
    """

    model: LagrangianModel
    cs: Optional[ConstraintSet] = None
    alpha: float = 20.0
    beta: float = 100.0

    formulation = "dalembert"
    default_projection = True

    def __post_init__(self):
        if self.cs is not None:
            if self.cs.kind is ConstraintKind.SECOND_ORDER:
                raise ValueError("d'Alembert systems take holonomic or first-order constraints")
            if self.cs.n != self.model.n:
                raise ValueError("constraint and model dimensions differ")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Baumgarte gains must be nonnegative")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return 0 if self.cs is None else self.cs.m

    # -- integrator interface ---------------------------------------------

    def extra_size(self) -> int:
        return 0

    def pack(self, state: AugmentedState) -> np.ndarray:
        return np.concatenate([state.q, state.v])

    def unpack(self, y):
        n = self.n
        return y[:n], y[n : 2 * n]

    def evaluate(self, t: float, y: np.ndarray, full: bool = True) -> StepEval:
        """Derivative of the packed state; ``full=False`` skips the energy diagnostics."""
        q, v = self.unpack(y)
        dL = self.model.derivatives(q, v, t)
        Dvec = self.model.dissipation(q, v, t)
        force = generalized_force(dL, v, Dvec)
        if self.cs is None:
            try:
                a, _ = solve_saddle(dL.hess_vv, None, force, None)
            except SingularSystemError as exc:
                raise RegularityError(f"velocity Hessian singular at t={t}") from exc
            lam = np.zeros(0)
            R = np.zeros(self.n)
            res = np.zeros(0)
        else:
            a, lam, R, res = self._solve(q, v, t, dL, force)
        return StepEval(
            dy=np.concatenate([v, a]),
            a=a,
            lam=lam,
            R=R,
            E_L=energy_from_bundle(dL, v) if full else 0.0,
            E_M=0.0,
            power_D=float(Dvec @ v),
            residuals=res,
        )

    def residuals(self, t, y) -> np.ndarray:
        if self.cs is None:
            return np.zeros(0)
        q, v = self.unpack(y)
        return self.cs.residuals(q, v, t)

    def project(self, t, y, tol) -> np.ndarray:
        if self.cs is None:
            return y
        from .integrate import project_to_manifold

        q, v = self.unpack(y)
        q2, v2 = project_to_manifold(self.cs, q, v, t, tol=tol)
        return np.concatenate([q2, v2, y[2 * self.n :]])

    # -- assembly -----------------------------------------------------------

    def _solve(self, q, v, t, dL, force):
        cs = self.cs
        dF = cs.derivatives(q, v, t)
        F = dF.value
        if cs.kind is ConstraintKind.HOLONOMIC:
            C = dF.grad_q
            Fdot = C @ v + dF.dt_partial
            curvature = (dF.hess_qq @ v) @ v + 2 * dF.hess_qt @ v + dF.hess_tt
            bottom = -curvature - self.alpha * Fdot - self.beta * F
        else:
            C = dF.grad_v
            bottom = -(dF.grad_q @ v) - dF.dt_partial - self.alpha * F
        x, y = solve_saddle(dL.hess_vv, C, force, bottom)
        lam = -y
        return x, lam, C.T @ lam, F


def assemble_dalembert(sys: DalembertSystem, q, v, t=0.0, check: bool = True) -> DalembertSolution:
    """Acceleration, instantaneous multipliers and reaction covector at (q, v, t)."""
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    if sys.cs is not None and check:
        r = sys.cs.residuals(q, v, t)
        if np.max(np.abs(r)) >= sys.cs.drift_tol:
            raise OffManifoldError(f"initial state violates constraints (max |F| = {np.max(np.abs(r)):.3g})", r)
    ev = sys.evaluate(t, np.concatenate([q, v]))
    return DalembertSolution(ev.a, ev.lam, ev.R)


def reaction_power(R, v) -> float:
    return float(np.dot(R, v))


@dataclass(eq=False)
class PenaltyRealization:
    """Holonomic constraints replaced by the stiff potential 1/2 kappa^{ab} F_a F_b."""

    model: LagrangianModel
    cs: ConstraintSet
    kappa: np.ndarray

    def __post_init__(self):
        if self.cs.kind is not ConstraintKind.HOLONOMIC:
            raise ValueError("penalty realisation needs holonomic constraints")
        if self.cs.n != self.model.n:
            raise ValueError("constraint and model dimensions differ")
        k = np.atleast_2d(np.asarray(self.kappa, dtype=float))
        if k.shape == (1, 1) and self.cs.m > 1:
            k = k[0, 0] * np.eye(self.cs.m)
        if k.shape != (self.cs.m, self.cs.m) or not np.allclose(k, k.T):
            raise ValueError("kappa must be a symmetric m x m matrix")
        if np.min(np.linalg.eigvalsh(k)) <= 0:
            raise ValueError("kappa must be positive definite")
        self.kappa = k
        base, F, kap = self.model, self.cs.F, k

        def L_pen(q, v, t):
            Fv = np.asarray(F(q, v, t), dtype=object).ravel()
            return base.L(q, v, t) - 0.5 * (Fv @ (kap @ Fv))

        self.penalized = LagrangianModel(base.n, L_pen, base.D, base.labels, backend=base.backend)

    def system(self) -> DalembertSystem:
        return DalembertSystem(self.penalized, None)


def penalty_accel(pr: PenaltyRealization, q, v, t=0.0) -> np.ndarray:
    from .lagrangian import unconstrained_accel

    return unconstrained_accel(pr.penalized, q, v, t)
