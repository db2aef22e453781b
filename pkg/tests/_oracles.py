"""Independent reference computations for the frozen values in the test suite.

Nothing here imports nonholo.  Run ``python tests/_oracles.py`` to print the
numbers that the tests hard-code.
"""

from __future__ import annotations

import itertools

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp


def levi_civita(perm):
    p = list(perm)
    sign = 1
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def contact_wedge_coefficient(q, h=1e-6):
    """eps^{ijk} (d omega)_ij omega_k / 2 for omega = dz - y dx, by brute force."""

    def omega(x):
        return np.array([-x[1], 0.0, 1.0])

    q = np.asarray(q, float)
    J = np.zeros((3, 3))  # J[j, i] = d omega_j / d q_i
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        J[:, i] = (omega(q + e) - omega(q - e)) / (2 * h)
    dw = J.T - J  # (d omega)_ij = d_i omega_j - d_j omega_i
    w = omega(q)
    total = 0.0
    for i, j, k in itertools.permutations(range(3)):
        total += levi_civita((i, j, k)) * dw[i, j] * w[k]
    return total / 2


def magnetic_oracle(q, v, lam, h=1e-6):
    """Linear variational dynamics for omega = dz - y dx, L = |v|^2/2.

    Euler-Lagrange of L + lam omega.v: a + lam_dot omega + lam (dw . v) = 0
    with (dw)_ij = d_j omega_i - d_i omega_j, plus omega.a + (d_j omega_i v^j) v^i = 0.
    Derivatives of omega by central differences.
    """

    def omega(x):
        return np.array([-x[1], 0.0, 1.0])

    q = np.asarray(q, float)
    v = np.asarray(v, float)
    J = np.zeros((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        J[:, i] = (omega(q + e) - omega(q - e)) / (2 * h)
    w = omega(q)
    K = np.zeros((4, 4))
    K[:3, :3] = np.eye(3)
    K[:3, 3] = w
    K[3, :3] = w
    rhs = np.zeros(4)
    rhs[:3] = -lam * ((J - J.T) @ v)
    rhs[3] = -v @ (J @ v)
    sol = np.linalg.solve(K, rhs)
    return sol[:3], sol[3]


def speed_vakonomic_oracle(q, v, lam, m=1.0, alpha=1.0):
    """Symbolic Euler-Lagrange for L + lam(t) (|v|^2 - 1), V = alpha |q|^2."""
    t = sp.symbols("t")
    x, y, l = (sp.Function(s)(t) for s in ("x", "y", "l"))
    L = sp.Rational(1, 2) * m * (x.diff(t) ** 2 + y.diff(t) ** 2) - alpha * (x**2 + y**2)
    Lt = L + l * (x.diff(t) ** 2 + y.diff(t) ** 2 - 1)
    eqs = [sp.diff(Lt.diff(c.diff(t)), t) - Lt.diff(c) for c in (x, y)]
    eqs.append(sp.diff(x.diff(t) ** 2 + y.diff(t) ** 2 - 1, t))
    ax, ay, ld = sp.symbols("ax ay ld")
    subs = {x.diff(t, 2): ax, y.diff(t, 2): ay, l.diff(t): ld}
    eqs = [e.subs(subs) for e in eqs]
    vals = {x: q[0], y: q[1], x.diff(t): v[0], y.diff(t): v[1], l: lam}
    eqs = [e.subs({x.diff(t): v[0], y.diff(t): v[1]}).subs(vals) for e in eqs]
    sol = sp.solve(eqs, [ax, ay, ld], dict=True)[0]
    return np.array([float(sol[ax]), float(sol[ay])]), float(sol[ld])


def circle_chart_oracle(grav=9.81, t_end=1.0):
    """Angle chart theta of the unit circle with V = grav * sin(theta)."""
    f = lambda t, s: [s[1], -grav * np.cos(s[0])]
    sol = solve_ivp(f, (0, t_end), [0.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-14, dense_output=True)
    th, thd = sol.y[:, -1]
    return np.array([np.cos(th), np.sin(th)]), np.array([-np.sin(th) * thd, np.cos(th) * thd]), sol


def symmetry_residual_oracle(Omega, g):
    n = len(g)
    gi = np.linalg.inv(g)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                for l in range(n):
                    s += gi[i, k] * Omega[l, k] * g[l, j]
            out[i, j] = Omega[i, j] - s
    return out


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    print("contact wedge", contact_wedge_coefficient([0.3, 2.0, -1.0]))
    a, ld = magnetic_oracle([0.3, 0.7, -0.2], [1.0, 0.5, 0.7], 0.4)
    print("magnetic a", repr(a), "lam_dot", repr(ld))
    a, ld = speed_vakonomic_oracle([0.6, -0.3], [0.6, 0.8], 0.5)
    print("speed vak a", repr(a), "lam_dot", repr(ld))
    qT, vT, _ = circle_chart_oracle()
    print("circle q(1)", repr(qT), "v(1)", repr(vT))
    print("symres", symmetry_residual_oracle(np.array([[0.0, 1.0], [0.0, 0.0]]), np.diag([1.0, 4.0])))
