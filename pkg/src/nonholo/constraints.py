"""Constraint sets of every order and their classification.

Four kinds are supported:

* holonomic ``F(q, t) = 0``
* linear Pfaffian ``omega(q, t) @ v = 0`` (homogeneous in v, no affine offset)
* nonlinear first order ``F(q, v, t) = 0``
* second order ``F(q, v, a, t) = A(q, t) @ a + b(q, v, t) = 0``

Holonomic and first-order functions are wrapped to the common ``(q, v, t)``
signature so the derivative engine sees one layout.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernel import DerivativeBundle, Differentiator, EngineError, EvaluationError

DRIFT_TOL = 1e-8
RANK_RTOL = 1e-10


class ConstraintKind(enum.Enum):
    HOLONOMIC = "holonomic"
    LINEAR_PFAFFIAN = "pfaffian"
    NONLINEAR_FIRST_ORDER = "nonlinear"
    SECOND_ORDER = "second_order"

    @property
    def first_order(self) -> bool:
        return self in (ConstraintKind.LINEAR_PFAFFIAN, ConstraintKind.NONLINEAR_FIRST_ORDER)


class ConstraintError(EngineError):
    pass


class OffManifoldError(ConstraintError):
    """A state that should lie on the constraint manifold does not."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class MissingAccelerationError(ConstraintError, ValueError):
    pass


def _as_vector(out):
    return np.asarray(out, dtype=object).ravel()


@dataclass(eq=False)
class ConstraintSet:
    """m constraint functions of one kind on an n-dimensional configuration space.

    Use the ``holonomic``/``linear_pfaffian``/``nonlinear``/``second_order``
    constructors rather than building instances directly.
    """

    kind: ConstraintKind
    n: int
    m: int
    F: Callable
    names: Sequence[str] = ()
    drift_tol: float = DRIFT_TOL
    backend: str = "auto"
    _diff: Differentiator = field(init=False, repr=False)
    _acoef: Optional[Differentiator] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if not 1 <= self.m < self.n:
            raise ConstraintError(f"need 1 <= m < n, got m={self.m}, n={self.n}")
        if not self.names:
            self.names = tuple(f"F{a}" for a in range(self.m))
        second = self.kind is ConstraintKind.SECOND_ORDER
        self._diff = Differentiator(self.F, self.n, has_accel=second, vector=True, backend=self.backend)
        if second:
            F, n = self.F, self.n

            def acoef(q, v, t):
                # F is affine in a, so F(q, 0, e_j) - F(q, 0, 0) is column j of A(q, t)
                zero = np.zeros(n)
                base = _as_vector(F(q, zero, zero, t))
                cols = []
                for j in range(n):
                    e = np.zeros(n)
                    e[j] = 1.0
                    cols.append(_as_vector(F(q, zero, e, t)) - base)
                return np.stack(cols, axis=1).ravel()

            self._acoef = Differentiator(acoef, n, vector=True, backend=self.backend)

    # -- constructors -----------------------------------------------------

    @classmethod
    def holonomic(cls, n: int, F: Callable, m: Optional[int] = None, **kw) -> "ConstraintSet":
        """``F(q, t)`` returning m values."""

        def wrapped(q, v, t):
            return F(q, t)

        m = m if m is not None else len(np.atleast_1d(F(np.zeros(n) + 0.5, 0.0)))
        return cls(ConstraintKind.HOLONOMIC, n, m, wrapped, **kw)

    @classmethod
    def linear_pfaffian(
        cls, n: int, omega: Optional[Callable] = None, F: Optional[Callable] = None, m: Optional[int] = None, **kw
    ) -> "ConstraintSet":
        """Either ``omega(q, t)`` returning an m x n matrix, or ``F(q, v, t)`` linear in v."""
        if (omega is None) == (F is None):
            raise ConstraintError("give exactly one of omega or F")
        if omega is not None:

            def wrapped(q, v, t):
                return np.asarray(omega(q, t), dtype=object) @ v

            if m is None:
                m = np.atleast_2d(np.asarray(omega(np.zeros(n) + 0.5, 0.0), dtype=float)).shape[0]
        else:
            wrapped = F
            at_rest = np.asarray(F(np.zeros(n) + 0.5, np.zeros(n), 0.0), dtype=float).ravel()
            if np.max(np.abs(at_rest)) > 1e-12:
                raise ConstraintError("linear Pfaffian constraints must vanish at zero velocity")
            if m is None:
                m = len(at_rest)
        return cls(ConstraintKind.LINEAR_PFAFFIAN, n, m, wrapped, **kw)

    @classmethod
    def nonlinear(cls, n: int, F: Callable, m: Optional[int] = None, **kw) -> "ConstraintSet":
        """``F(q, v, t)`` returning m values."""
        if m is None:
            m = len(np.atleast_1d(F(np.zeros(n) + 0.5, np.ones(n), 0.0)))
        return cls(ConstraintKind.NONLINEAR_FIRST_ORDER, n, m, F, **kw)

    @classmethod
    def second_order(
        cls, n: int, F: Callable, m: Optional[int] = None, samples: Optional[Sequence] = None, **kw
    ) -> "ConstraintSet":
        """``F(q, v, a, t)`` affine in a with an a-coefficient independent of v.

        Affinity is checked at ``samples`` (tuples ``(q, v, a, t)``) or at a
        few seeded random points; violations raise :class:`ConstraintError`.
        """
        if m is None:
            m = len(np.atleast_1d(F(np.zeros(n) + 0.5, np.ones(n), np.ones(n), 0.0)))
        cs = cls(ConstraintKind.SECOND_ORDER, n, m, F, **kw)
        if samples is None:
            rng = np.random.default_rng(12345)
            samples = [(rng.normal(size=n), rng.normal(size=n), rng.normal(size=n), 0.0) for _ in range(3)]
        for q, v, a, t in samples:
            try:
                d = cs._diff(q, v, t, a=a)
            except EvaluationError:
                continue
            scale = max(1.0, float(np.max(np.abs(d.grad), initial=0.0)))
            if np.max(np.abs(d.hess_aa), initial=0.0) > 1e-8 * scale:
                raise ConstraintError("second-order constraint must be affine in the acceleration")
            if np.max(np.abs(d.hess_av), initial=0.0) > 1e-8 * scale:
                raise ConstraintError("acceleration coefficient of a second-order constraint must not depend on v")
        return cs

    # -- evaluation -------------------------------------------------------

    def derivatives(self, q, v, t=0.0, a=None) -> DerivativeBundle:
        if self.kind is ConstraintKind.SECOND_ORDER:
            if a is None:
                raise MissingAccelerationError("second-order constraints need the acceleration argument")
            return self._diff(q, v, t, a=a)
        return self._diff(q, v, t)

    def accel_coefficient(self, q, t=0.0) -> DerivativeBundle:
        """Derivatives of the flattened m x n acceleration coefficient A(q, t)."""
        if self._acoef is None:
            raise ConstraintError("only second-order constraints have an acceleration coefficient")
        return self._acoef(q, np.zeros(self.n), t)

    def residuals(self, q, v, t=0.0, a=None) -> np.ndarray:
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        if self.kind is ConstraintKind.SECOND_ORDER:
            if a is None:
                raise MissingAccelerationError("second-order constraints need the acceleration argument")
            out = self.F(q, v, np.asarray(a, float), float(t))
        else:
            out = self.F(q, v, float(t))
        r = np.asarray(out, dtype=float).ravel()
        if not np.all(np.isfinite(r)):
            raise EvaluationError("non-finite constraint residual", point=(q, v, t))
        return r

    def on_manifold(self, q, v, t=0.0, a=None, tol=None) -> bool:
        tol = self.drift_tol if tol is None else tol
        return float(np.max(np.abs(self.residuals(q, v, t, a)))) < tol


def evaluate(cs: ConstraintSet, q, v=None, a=None, t=0.0) -> np.ndarray:
    if v is None:
        v = np.zeros(cs.n)
    return cs.residuals(q, v, t, a)


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassificationReport:
    velocity_rank: int
    integrable: Optional[bool]
    direction_only: bool
    homogeneity_defect: float


def exterior_derivative(cs: ConstraintSet, q, t=0.0) -> np.ndarray:
    """Components (d omega_a)_ij = d_i omega_aj - d_j omega_ai, shape (m, n, n)."""
    if cs.kind is not ConstraintKind.LINEAR_PFAFFIAN:
        raise ConstraintError("exterior derivative is defined for linear Pfaffian sets")
    d = cs.derivatives(q, np.zeros(cs.n), t)
    dwdq = d.hess_vq  # [a, i, j] = d omega_ai / d q_j
    return np.swapaxes(dwdq, -1, -2) - dwdq


def pfaff_forms(cs: ConstraintSet, q, t=0.0) -> np.ndarray:
    return cs.derivatives(q, np.zeros(cs.n), t).grad_v


def wedge_components(two_form: np.ndarray, one_forms: np.ndarray) -> dict:
    """Components of two_form ^ w_1 ^ ... ^ w_m on increasing index sets.

    The value on e_S is the shuffle sum over position pairs p < r of
    sign * T[S_p, S_r] * det(W[:, S minus {S_p, S_r}]).
    """
    W = np.atleast_2d(one_forms)
    m, n = W.shape
    k = m + 2
    out = {}
    for S in itertools.combinations(range(n), k):
        total = 0.0
        for p, r in itertools.combinations(range(k), 2):
            rest = [S[i] for i in range(k) if i not in (p, r)]
            sign = (-1) ** (p + r - 1)
            minor = np.linalg.det(W[:, rest]) if m else 1.0
            total += sign * two_form[S[p], S[r]] * minor
        out[S] = total
    return out


def frobenius_integrable(cs: ConstraintSet, q_samples, t=0.0, tol: float = 1e-8) -> list:
    """Pointwise Frobenius test d(omega_a) ^ omega_1 ^ ... ^ omega_m == 0."""
    if cs.kind is not ConstraintKind.LINEAR_PFAFFIAN:
        raise ConstraintError("Frobenius test applies to linear Pfaffian sets")
    if cs.m + 2 > cs.n:
        return [True for _ in q_samples]
    result = []
    for q in q_samples:
        W = pfaff_forms(cs, q, t)
        dW = exterior_derivative(cs, q, t)
        scale = max(1.0, float(np.max(np.abs(W))) ** cs.m * max(1.0, float(np.max(np.abs(dW)))))
        ok = True
        for a in range(cs.m):
            comps = wedge_components(dW[a], W)
            if any(abs(c) > tol * scale for c in comps.values()):
                ok = False
                break
        result.append(ok)
    return result


def homogeneity_defect(cs: ConstraintSet, q, v, t=0.0, check: bool = True) -> np.ndarray:
    """v^i dF_a/dv^i for each constraint, evaluated on the manifold."""
    if not cs.kind.first_order:
        raise ConstraintError("homogeneity defect applies to first-order velocity constraints")
    if check:
        r = cs.residuals(q, v, t)
        if np.max(np.abs(r)) >= cs.drift_tol:
            raise OffManifoldError(f"state not on the constraint manifold (max |F| = {np.max(np.abs(r)):.3g})", r)
    return cs.derivatives(q, v, t).grad_v @ np.asarray(v, float)


def velocity_rank(cs: ConstraintSet, q, v, t=0.0, rtol: float = RANK_RTOL) -> int:
    if cs.kind is ConstraintKind.SECOND_ORDER:
        raise ConstraintError("velocity rank applies to first-order sets")
    J = np.atleast_2d(cs.derivatives(q, v, t).grad_v)
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] <= 1e-14:
        return 0
    return int(np.sum(s > rtol * s[0]))


def classify(cs: ConstraintSet, states, t=0.0, tol: float = 1e-8) -> ClassificationReport:
    """Summarise a first-order set over sample states ``[(q, v), ...]`` lying on M."""
    ranks = []
    defects = []
    for q, v in states:
        ranks.append(velocity_rank(cs, q, v, t))
        defects.append(float(np.max(np.abs(homogeneity_defect(cs, q, v, t)))))
    integrable = None
    if cs.kind is ConstraintKind.LINEAR_PFAFFIAN:
        integrable = all(frobenius_integrable(cs, [q for q, _ in states], t))
    worst = max(defects) if defects else 0.0
    return ClassificationReport(min(ranks) if ranks else 0, integrable, worst < tol, worst)
