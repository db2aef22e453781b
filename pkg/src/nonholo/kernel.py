"""Dense linear algebra and the derivative engine.

User functions are written against generic scalars: they receive ``q``, ``v``
(and ``a`` for acceleration-dependent functions) as 1-D numpy arrays and ``t``
as a scalar, and must use ordinary arithmetic plus the math helpers exported
here (:func:`sin`, :func:`cos`, :func:`exp`, :func:`sqrt`, :func:`log`).  Such
functions can then be differentiated by one of three backends:

``symbolic``
    the function is traced once with sympy symbols and its first and second
    partial derivatives are compiled with ``lambdify``.  Fast to evaluate.
``dual``
    second-order forward mode (:class:`Jet`): value, gradient and Hessian are
    propagated exactly through every arithmetic operation.
``fd``
    central differences, used when the function only accepts floats.

``auto`` tries them in that order.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
import scipy.linalg.lapack as lapack

EPS = np.finfo(float).eps
BACKENDS = ("auto", "symbolic", "dual", "fd")


class EngineError(Exception):
    """Base class for numerical failures inside the engine."""


class EvaluationError(EngineError):
    """A user function returned a non-finite value or could not be evaluated."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class SingularSystemError(EngineError):
    """A block linear system is singular or too badly conditioned to trust."""

    def __init__(self, message: str, block: str = "full", condition: float = math.inf):
        super().__init__(message)
        self.block = block
        self.condition = condition


# ---------------------------------------------------------------------------
# generic-scalar math helpers


def _is_sympy(x) -> bool:
    return type(x).__module__.startswith("sympy")


def _apply(name: str, x):
    if isinstance(x, np.ndarray):
        if x.dtype == object:
            out = np.empty(x.shape, dtype=object)
            for idx, item in np.ndenumerate(x):
                out[idx] = _apply(name, item)
            return out
        return getattr(np, name)(x)
    if isinstance(x, Jet):
        return getattr(x, name)()
    if _is_sympy(x):
        import sympy

        return getattr(sympy, name)(x)
    return getattr(math, name)(x)


def sin(x):
    return _apply("sin", x)


def cos(x):
    return _apply("cos", x)


def exp(x):
    return _apply("exp", x)


def sqrt(x):
    return _apply("sqrt", x)


def log(x):
    return _apply("log", x)


def det(M):
    """Determinant that also works on object arrays of generic scalars (n <= 3)."""
    M = np.asarray(M)
    if M.dtype != object:
        return float(np.linalg.det(M))
    n = M.shape[0]
    if n == 1:
        return M[0, 0]
    if n == 2:
        return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if n == 3:
        return (
            M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
            - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
            + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
        )
    raise NotImplementedError("generic-scalar determinant only for n <= 3")


def inv(M):
    """Matrix inverse; adjugate formula for object arrays (n <= 3)."""
    M = np.asarray(M)
    if M.dtype != object:
        return np.linalg.inv(M)
    n = M.shape[0]
    d = det(M)
    if n == 1:
        return np.array([[1 / M[0, 0]]], dtype=object)
    adj = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, j, axis=0), i, axis=1)
            adj[i, j] = (-1) ** (i + j) * det(minor)
    return adj / d


# ---------------------------------------------------------------------------
# second-order forward mode


class Jet:
    """Truncated Taylor jet: value, gradient and Hessian w.r.t. N seed variables."""

    __slots__ = ("v", "g", "h")
    __array_priority__ = 1000

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def seed(cls, x: np.ndarray) -> np.ndarray:
        N = len(x)
        out = np.empty(N, dtype=object)
        zero_h = np.zeros((N, N))
        for i in range(N):
            g = np.zeros(N)
            g[i] = 1.0
            out[i] = cls(float(x[i]), g, zero_h)
        return out

    def _chain(self, f0, f1, f2):
        return Jet(f0, f1 * self.g, f1 * self.h + f2 * np.outer(self.g, self.g))

    def _lift(self, other):
        if isinstance(other, Jet):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return None
        return NotImplemented

    def __add__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        if o is None:
            return Jet(self.v + other, self.g, self.h)
        return Jet(self.v + o.v, self.g + o.g, self.h + o.h)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, -self.h)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        if o is None:
            return Jet(self.v - other, self.g, self.h)
        return Jet(self.v - o.v, self.g - o.g, self.h - o.h)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        if o is None:
            return Jet(self.v * other, self.g * other, self.h * other)
        cross = np.outer(self.g, o.g)
        return Jet(
            self.v * o.v,
            self.g * o.v + o.g * self.v,
            self.h * o.v + o.h * self.v + cross + cross.T,
        )

    __rmul__ = __mul__

    def reciprocal(self):
        x = self.v
        return self._chain(1.0 / x, -1.0 / x**2, 2.0 / x**3)

    def __truediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        if o is None:
            return self * (1.0 / other)
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return (p * self.log()).exp()
        p = float(p)
        x = self.v
        if p == 0.0:
            return Jet(1.0, np.zeros_like(self.g), np.zeros_like(self.h))
        if p == 1.0:
            return self
        if p == 2.0:
            return self * self
        f1 = p * x ** (p - 1)
        f2 = p * (p - 1) * x ** (p - 2) if p != 1.0 else 0.0
        return self._chain(x**p, f1, f2)

    def __rpow__(self, base):
        return (self * math.log(base)).exp()

    def sin(self):
        s, c = math.sin(self.v), math.cos(self.v)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = math.sin(self.v), math.cos(self.v)
        return self._chain(c, -s, -c)

    def exp(self):
        e = math.exp(self.v)
        return self._chain(e, e, e)

    def log(self):
        x = self.v
        return self._chain(math.log(x), 1.0 / x, -1.0 / x**2)

    def sqrt(self):
        r = math.sqrt(self.v)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.v))

    def __abs__(self):
        return -self if self.v < 0 else self

    # comparisons act on the value so that piecewise user code still runs
    def __lt__(self, o):
        return self.v < (o.v if isinstance(o, Jet) else o)

    def __le__(self, o):
        return self.v <= (o.v if isinstance(o, Jet) else o)

    def __gt__(self, o):
        return self.v > (o.v if isinstance(o, Jet) else o)

    def __ge__(self, o):
        return self.v >= (o.v if isinstance(o, Jet) else o)

    def __float__(self):
        # refusing keeps float() inside user code from silently dropping derivatives
        raise TypeError("Jet cannot be converted to float")

    def __repr__(self):
        return f"Jet({self.v!r})"


# ---------------------------------------------------------------------------
# derivative bundle

_SLICES: dict = {}


def _slices(n, has_accel):
    out = {
        "q": slice(0, n),
        "v": slice(n, 2 * n),
        "a": slice(2 * n, 3 * n) if has_accel else None,
        "t": 3 * n if has_accel else 2 * n,
    }
    _SLICES[(n, has_accel)] = out
    return out


class DerivativeBundle:
    """Value, gradient and Hessian of f(q, v[, a], t) at one point.

    Scalar functions have ``value`` as a float, ``grad`` of shape (N,) and
    ``hess`` of shape (N, N); vector functions carry a leading axis of length m.
    The variable order is q, v, a (when present), t.
    """

    __slots__ = ("value", "grad", "hess", "n", "has_accel", "asymmetry", "_s")

    def __init__(self, value, grad, hess, n, has_accel=False, asymmetry=0.0):
        self.value = value
        self.grad = grad
        self.hess = hess
        self.n = n
        self.has_accel = has_accel
        self.asymmetry = asymmetry
        self._s = _SLICES[(n, has_accel)] if (n, has_accel) in _SLICES else _slices(n, has_accel)

    def __repr__(self):
        return f"DerivativeBundle(value={self.value!r}, n={self.n}, has_accel={self.has_accel})"

    def _blocks(self):
        b = self._s
        return b["q"], b["v"], b["a"], b["t"]

    @property
    def grad_q(self):
        return self.grad[..., self._s["q"]]

    @property
    def grad_v(self):
        return self.grad[..., self._s["v"]]

    @property
    def grad_a(self):
        a = self._s["a"]
        if a is None:
            raise AttributeError("function has no acceleration argument")
        return self.grad[..., a]

    @property
    def dt_partial(self):
        return self.grad[..., self._s["t"]]

    def _h(self, x, y):
        b = self._s
        if b[x] is None or b[y] is None:
            raise AttributeError("function has no acceleration argument")
        return self.hess[..., b[x], b[y]]

    @property
    def hess_vv(self):
        return self._h("v", "v")

    @property
    def hess_vq(self):
        """Entries d2f / dv_i dq_j."""
        return self._h("v", "q")

    @property
    def hess_vt(self):
        return self._h("v", "t")

    @property
    def hess_qq(self):
        return self._h("q", "q")

    @property
    def hess_qt(self):
        return self._h("q", "t")

    @property
    def hess_tt(self):
        return self._h("t", "t")

    @property
    def hess_aq(self):
        return self._h("a", "q")

    @property
    def hess_av(self):
        return self._h("a", "v")

    @property
    def hess_aa(self):
        return self._h("a", "a")


# ---------------------------------------------------------------------------
# backends


def _split(z: np.ndarray, n: int, has_accel: bool):
    q = z[:n]
    v = z[n : 2 * n]
    if has_accel:
        return (q, v, z[2 * n : 3 * n], z[3 * n])
    return (q, v, z[2 * n])


def _as_outputs(res, vector: bool) -> list:
    if vector:
        return list(np.asarray(res, dtype=object).ravel())
    arr = np.asarray(res, dtype=object)
    if arr.size != 1:
        raise ValueError("scalar function returned %d values" % arr.size)
    return [arr.ravel()[0]]


class _SymbolicBackend:
    def __init__(self, f, n, has_accel, vector):
        import sympy

        N = (3 if has_accel else 2) * n + 1
        zs = sympy.symbols(f"z0:{N}", real=True)
        z = np.empty(N, dtype=object)
        z[:] = zs
        outs = _as_outputs(f(*_split(z, n, has_accel)), vector)
        exprs = [sympy.sympify(e) for e in outs]
        for e in exprs:
            if not isinstance(e, sympy.Expr):
                raise TypeError("function did not trace to a scalar expression")
        self.m = len(exprs)
        iu = np.triu_indices(N)
        flat = []
        for e in exprs:
            grad = [sympy.diff(e, s) for s in zs]
            flat.append(e)
            flat.extend(grad)
            flat.extend(sympy.diff(grad[i], zs[j]) for i, j in zip(*iu))
        self._fn = sympy.lambdify(zs, flat, modules="math", cse=True)
        self.N = N
        self._per = 1 + N + len(iu[0])
        # map every (i, j) of the full Hessian onto its upper-triangle slot
        slot = np.empty((N, N), dtype=np.intp)
        slot[iu] = np.arange(len(iu[0]))
        slot[iu[1], iu[0]] = slot[iu]
        self._gather = (1 + N + slot).ravel()

    def __call__(self, z):
        # plain floats: math-module arithmetic on numpy scalars is several times slower
        zl = z.tolist() if isinstance(z, np.ndarray) else list(z)
        try:
            flat = self._fn(*zl)
            total = sum(flat)  # nan and inf both propagate
        except (ValueError, ZeroDivisionError, OverflowError, TypeError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}", point=np.asarray(zl)) from exc
        if not math.isfinite(total):
            raise EvaluationError("non-finite value or derivative", point=np.asarray(zl))
        raw = np.array(flat, dtype=float).reshape(self.m, self._per)
        N = self.N
        hess = raw[:, self._gather].reshape(self.m, N, N)
        return raw[:, 0], raw[:, 1 : 1 + N], hess


def _floats(x) -> list:
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return x.tolist()
    return np.ravel(np.asarray(x, dtype=float)).tolist()


def _dual_eval(f, z, n, has_accel, vector):
    zj = Jet.seed(z)
    outs = _as_outputs(f(*_split(zj, n, has_accel)), vector)
    N = len(z)
    m = len(outs)
    value = np.empty(m)
    grad = np.zeros((m, N))
    hess = np.zeros((m, N, N))
    for k, o in enumerate(outs):
        if isinstance(o, Jet):
            value[k] = o.v
            grad[k] = o.g
            hess[k] = o.h
        else:
            value[k] = float(o)
    return value, grad, hess


def _fd_eval(f, z, n, has_accel, vector):
    def call(x):
        out = _as_outputs(f(*_split(x, n, has_accel)), vector)
        return np.array([float(o) for o in out])

    N = len(z)
    f0 = call(z)
    m = len(f0)
    grad = np.zeros((m, N))
    hess = np.zeros((m, N, N))
    h1 = np.cbrt(EPS) * np.maximum(1.0, np.abs(z))
    h2 = EPS**0.25 * np.maximum(1.0, np.abs(z))
    for i in range(N):
        e = np.zeros(N)
        e[i] = h1[i]
        grad[:, i] = (call(z + e) - call(z - e)) / (2 * h1[i])
    for i in range(N):
        ei = np.zeros(N)
        ei[i] = h2[i]
        for j in range(i, N):
            ej = np.zeros(N)
            ej[j] = h2[j]
            d = (call(z + ei + ej) - call(z + ei - ej) - call(z - ei + ej) + call(z - ei - ej)) / (
                4 * h2[i] * h2[j]
            )
            hess[:, i, j] = d
            hess[:, j, i] = d
    return f0, grad, hess


class Differentiator:
    """Reusable derivative evaluator for one user function.

    ``vector=True`` for functions returning a sequence of m values.  With
    ``backend="auto"`` the symbolic trace is attempted on first use, then
    dual numbers, then central differences; the chosen backend is exposed as
    :attr:`backend_used`.
    """

    def __init__(
        self,
        f: Callable,
        n: int,
        *,
        has_accel: bool = False,
        vector: bool = False,
        backend: str = "auto",
    ):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        self.f = f
        self.n = n
        self.has_accel = has_accel
        self.vector = vector
        self.backend = backend
        self.backend_used: Optional[str] = None
        self._symbolic: Optional[_SymbolicBackend] = None

    def _order(self):
        if self.backend_used is not None:
            return [self.backend_used]
        if self.backend == "auto":
            return ["symbolic", "dual", "fd"]
        return [self.backend]

    def _raw(self, z):
        last_exc: Optional[Exception] = None
        for name in self._order():
            try:
                if name == "symbolic":
                    if self._symbolic is None:
                        self._symbolic = _SymbolicBackend(self.f, self.n, self.has_accel, self.vector)
                    out = self._symbolic(z)
                elif name == "dual":
                    out = _dual_eval(self.f, z, self.n, self.has_accel, self.vector)
                else:
                    out = _fd_eval(self.f, z, self.n, self.has_accel, self.vector)
            except EvaluationError:
                raise
            except Exception as exc:  # backend could not handle this function
                if self.backend_used is not None or self.backend != "auto":
                    raise EvaluationError(f"{name} backend failed: {exc}", point=z) from exc
                last_exc = exc
                continue
            self.backend_used = name
            return out
        raise EvaluationError(f"no backend could evaluate the function: {last_exc}", point=z)

    def __call__(self, q, v, t=0.0, a=None) -> DerivativeBundle:
        if self.has_accel:
            if a is None:
                raise ValueError("acceleration argument required")
            z = np.concatenate((q, v, a, (t,)), axis=None).astype(float, copy=False)
        elif self.backend_used == "symbolic":
            z = [*_floats(q), *_floats(v), float(t)]
        else:
            z = np.concatenate((q, v, (t,)), axis=None).astype(float, copy=False)
        if self.backend_used == "symbolic":
            value, grad, hess = self._symbolic(z)  # checks finiteness itself
        else:
            value, grad, hess = self._raw(z)
            if not (np.isfinite(value).all() and np.isfinite(grad).all() and np.isfinite(hess).all()):
                raise EvaluationError("non-finite value or derivative", point=z)
        n = self.n
        asym = 0.0
        if self.backend_used != "symbolic":  # symbolic Hessians are symmetric by construction
            vs = slice(n, 2 * n)
            hvv = hess[:, vs, vs]
            hvt = np.swapaxes(hvv, -1, -2)
            asym = float(np.max(np.abs(hvv - hvt), initial=0.0))
            hess[:, vs, vs] = 0.5 * (hvv + hvt)
        if not self.vector:
            return DerivativeBundle(float(value[0]), grad[0], hess[0], n, self.has_accel, asym)
        return DerivativeBundle(value, grad, hess, n, self.has_accel, asym)


def differentiate(f: Callable, q, v, t: float = 0.0, *, backend: str = "dual") -> DerivativeBundle:
    """One-shot derivatives of a scalar f(q, v, t).

    Dual numbers are used when ``f`` accepts generic scalars; otherwise the
    call falls back to central differences.
    """
    n = len(np.atleast_1d(q))
    if backend == "dual":
        try:
            return Differentiator(f, n, backend="dual")(q, v, t)
        except EvaluationError as exc:
            if isinstance(exc.__cause__, (TypeError, AttributeError)):
                return Differentiator(f, n, backend="fd")(q, v, t)
            raise
    return Differentiator(f, n, backend=backend)(q, v, t)


# ---------------------------------------------------------------------------
# saddle-point solve

COND_LIMIT = 1e12


def _lu_solve(K: np.ndarray, rhs: np.ndarray):
    anorm = lapack.dlange("1", K)
    lu, piv, x, info = lapack.dgesv(K, rhs)
    if info > 0:
        return None, math.inf
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    return x, cond


def solve_saddle(M, C, rhs_top, rhs_bot, cond_limit: float = COND_LIMIT):
    """Solve [[M, C^T], [C, 0]] [x; y] = [rhs_top; rhs_bot] by dense LU.

    Raises :class:`SingularSystemError` when the reciprocal condition estimate
    of the block matrix is below ``1/cond_limit``; the ``block`` attribute
    names the part that degenerated (``"constraint"`` when C loses row rank,
    ``"mass"`` when M is singular on the constraint null space).
    """
    if not (isinstance(M, np.ndarray) and M.ndim == 2):
        M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    rhs_top = np.asarray(rhs_top, dtype=float).ravel()
    if C is None or np.size(C) == 0:
        x, cond = _lu_solve(M, rhs_top)
        if x is None or cond > cond_limit:
            raise SingularSystemError("mass matrix is singular", block="mass", condition=cond)
        return x, np.zeros(0)
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    m = C.shape[0]
    K = np.zeros((n + m, n + m), order="F")  # LAPACK layout, no copy in dgesv
    K[:n, :n] = M
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.concatenate((rhs_top, np.ravel(rhs_bot)))
    sol, cond = _lu_solve(K, rhs)
    if sol is None or cond > cond_limit:
        s = np.linalg.svd(C, compute_uv=False)
        if s[-1] <= 1e-10 * max(s[0], 1e-300):
            block = "constraint"
        else:
            block = "mass"
        raise SingularSystemError(
            f"saddle system singular (condition ~ {cond:.3g}, degenerate {block} block)",
            block=block,
            condition=cond,
        )
    return sol[:n], sol[n:]
