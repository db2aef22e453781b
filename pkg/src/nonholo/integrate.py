"""Fixed-step integration of assembled dynamics with drift monitoring."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .constraints import ConstraintError, ConstraintKind, ConstraintSet, OffManifoldError
from .kernel import EngineError, SingularSystemError
from .state import AugmentedState, StepEval
from .vakonomic import EffectiveMassError

logger = logging.getLogger(__name__)

SCHEMES = ("rk4", "semi_implicit_euler")


class Status(str, enum.Enum):
    COMPLETED = "Completed"
    SINGULAR_SYSTEM = "SingularSystem"
    DRIFT_EXCEEDED = "DriftExceeded"
    EFFECTIVE_MASS_SINGULAR = "EffectiveMassSingular"


class ProjectionError(ConstraintError):
    pass


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "rk4"
    projection: Optional[bool] = None  # None: the system's default
    drift_tolerance: float = 1e-8
    record_every: int = 1

    def __post_init__(self):
        self.scheme = self.scheme.lower().replace("-", "_")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.dt <= self.t_end:
            raise ValueError("dt must not exceed t_end")
        if not self.drift_tolerance > 0:
            raise ValueError("drift_tolerance must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class TrajectorySample:
    t: float
    q: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    R: np.ndarray
    E_L: float
    E_M: float
    reaction_power: float
    residuals: np.ndarray
    power_D: float
    work_D: float
    lam_dot: Optional[np.ndarray] = None

    @property
    def residual_max(self) -> float:
        return float(np.max(np.abs(self.residuals), initial=0.0))

    @property
    def E_total(self) -> float:
        return self.E_L + self.E_M


@dataclass
class SimulationResult:
    samples: List[TrajectorySample]
    status: Status
    message: str = ""
    formulation: str = ""
    max_drift: float = 0.0
    energy_drift: float = 0.0

    @property
    def completed(self) -> bool:
        return self.status is Status.COMPLETED

    def _stack(self, name):
        return np.array([getattr(s, name) for s in self.samples])

    @property
    def t(self):
        return self._stack("t")

    @property
    def q(self):
        return self._stack("q")

    @property
    def v(self):
        return self._stack("v")

    @property
    def lam(self):
        return self._stack("lam")

    @property
    def a(self):
        return self._stack("a")

    @property
    def E_L(self):
        return self._stack("E_L")

    @property
    def E_M(self):
        return self._stack("E_M")

    @property
    def E_total(self):
        return self._stack("E_total")

    @property
    def work_D(self):
        return self._stack("work_D")

    @property
    def reaction_power(self):
        return self._stack("reaction_power")

    @property
    def residual_max(self):
        return self._stack("residual_max")

    @property
    def final(self) -> TrajectorySample:
        return self.samples[-1]


def _sample(t, y, ev: StepEval, n, work) -> TrajectorySample:
    return TrajectorySample(
        t=t,
        q=y[:n].copy(),
        v=y[n : 2 * n].copy(),
        lam=np.array(ev.lam, dtype=float),
        a=ev.a,
        R=ev.R,
        E_L=ev.E_L,
        E_M=ev.E_M,
        reaction_power=ev.reaction_power,
        residuals=np.asarray(ev.residuals, dtype=float),
        power_D=ev.power_D,
        work_D=work,
        lam_dot=None if ev.lam_dot is None else np.array(ev.lam_dot, dtype=float),
    )


def project_to_manifold(cs: ConstraintSet, q, v, t=0.0, tol: Optional[float] = None, maxiter: int = 20):
    """Minimal-norm Newton correction back onto the constraint manifold.

    Holonomic sets move q and then remove the normal velocity component;
    first-order sets move v only.  ``tol`` defaults to a tenth of the set's
    drift tolerance.
    """
    tol = cs.drift_tol / 10 if tol is None else tol
    q = np.array(q, dtype=float)
    v = np.array(v, dtype=float)
    if cs.kind is ConstraintKind.SECOND_ORDER:
        raise ProjectionError("second-order constraints are not projected")
    if cs.kind is ConstraintKind.HOLONOMIC:
        for _ in range(maxiter + 1):
            r = cs.residuals(q, v, t)
            if np.max(np.abs(r)) < tol:
                break
            C = cs.derivatives(q, v, t).grad_q
            q = q - C.T @ np.linalg.solve(C @ C.T, r)
        else:
            raise ProjectionError(f"position projection did not converge in {maxiter} iterations")
        d = cs.derivatives(q, v, t)
        rv = d.grad_q @ v + d.dt_partial
        if np.max(np.abs(rv)) >= tol:
            C = d.grad_q
            v = v - C.T @ np.linalg.solve(C @ C.T, rv)
        return q, v
    for _ in range(maxiter + 1):
        r = cs.residuals(q, v, t)
        if np.max(np.abs(r)) < tol:
            return q, v
        C = cs.derivatives(q, v, t).grad_v
        v = v - C.T @ np.linalg.solve(C @ C.T, r)
    raise ProjectionError(f"velocity projection did not converge in {maxiter} iterations")


def simulate(system, init: AugmentedState, cfg: IntegratorConfig) -> SimulationResult:
    """Advance ``system`` from ``init`` with a fixed step.

    Raises :class:`OffManifoldError` when the initial state violates the
    constraints by more than ``cfg.drift_tolerance``.  Failures during the
    run are reported through the result status.
    """
    n = system.n
    t = float(init.t)
    y = system.pack(init)
    res0 = system.residuals(t, y)
    if res0.size and np.max(np.abs(res0)) > cfg.drift_tolerance:
        raise OffManifoldError(
            f"initial state violates constraints by {np.max(np.abs(res0)):.3g} > {cfg.drift_tolerance:g}", res0
        )
    project = system.default_projection if cfg.projection is None else cfg.projection
    proj_tol = cfg.drift_tolerance / 10
    h = cfg.dt
    nsteps = int(math.ceil(cfg.t_end / h - 1e-9))
    t0 = t
    work = 0.0
    samples: List[TrajectorySample] = []
    status = Status.COMPLETED
    message = ""
    rk4 = cfg.scheme == "rk4"
    for k in range(nsteps + 1):
        record = k % cfg.record_every == 0 or k == nsteps
        try:
            ev = system.evaluate(t, y, full=record)
        except EffectiveMassError as exc:
            status, message = Status.EFFECTIVE_MASS_SINGULAR, f"t={t:.6g}: {exc}"
            break
        except (SingularSystemError, EngineError, np.linalg.LinAlgError) as exc:
            status, message = Status.SINGULAR_SYSTEM, f"t={t:.6g}: {exc}"
            break
        if record:
            samples.append(_sample(t, y, ev, n, work))
        drift = float(np.max(np.abs(ev.residuals), initial=0.0))
        if drift > cfg.drift_tolerance:
            if not record:
                samples.append(_sample(t, y, system.evaluate(t, y), n, work))
            status = Status.DRIFT_EXCEEDED
            message = f"t={t:.6g}: constraint drift {drift:.3g} exceeds {cfg.drift_tolerance:g}"
            break
        if k == nsteps:
            break
        step = min(h, t0 + cfg.t_end - t) if k == nsteps - 1 else h
        try:
            if rk4:
                k1, p1 = ev.dy, ev.power_D
                e2 = system.evaluate(t + step / 2, y + step / 2 * k1, full=False)
                e3 = system.evaluate(t + step / 2, y + step / 2 * e2.dy, full=False)
                e4 = system.evaluate(t + step, y + step * e3.dy, full=False)
                y = y + step / 6 * (k1 + 2 * e2.dy + 2 * e3.dy + e4.dy)
                work += step / 6 * (p1 + 2 * e2.power_D + 2 * e3.power_D + e4.power_D)
            else:
                y_new = y + step * ev.dy
                y_new[:n] = y[:n] + step * y_new[n : 2 * n]
                y = y_new
                work += step * ev.power_D
            t = t0 + (k + 1) * h if k < nsteps - 1 else t0 + cfg.t_end
            if project:
                y = system.project(t, y, proj_tol)
        except EffectiveMassError as exc:
            status, message = Status.EFFECTIVE_MASS_SINGULAR, f"t={t:.6g}: {exc}"
            break
        except (SingularSystemError, EngineError, np.linalg.LinAlgError) as exc:
            status, message = Status.SINGULAR_SYSTEM, f"t={t:.6g}: {exc}"
            break
        if not np.all(np.isfinite(y)):
            status, message = Status.SINGULAR_SYSTEM, f"t={t:.6g}: state became non-finite"
            break
    if status is not Status.COMPLETED:
        logger.warning("simulation halted: %s", message)
    result = SimulationResult(samples, status, message, getattr(system, "formulation", ""))
    if samples:
        result.max_drift = max(s.residual_max for s in samples)
        e0 = samples[0].E_total
        scale = max(abs(e0), 1e-12)
        result.energy_drift = max(abs(s.E_total - s.work_D - e0) for s in samples) / scale
    return result
