"""Reference implementations used only by the tests.

Each oracle is written from the defining formulas with plain loops or a
different numerical method than the package, so agreement is evidence
rather than a tautology.
"""

import math

import mpmath
import numpy as np
import sympy
from scipy.optimize import least_squares


def rates_loop(reactions, u):
    """Mass-action rates from a list of ``(y, y', k)`` with explicit loops."""
    I = len(u)
    f = [0.0] * I
    for y, yp, k in reactions:
        mono = 1.0
        for i in range(I):
            if y[i] != 0:
                mono *= max(u[i], 0.0) ** y[i]
        for i in range(I):
            f[i] += k * mono * (yp[i] - y[i])
    return np.array(f)


def rk4(rhs, u0, t_end, dt):
    u = np.array(u0, dtype=float)
    n = int(round(t_end / dt))
    for _ in range(n):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def regularised_loop(reactions, eps):
    def rhs(u):
        f = rates_loop(reactions, u)
        return f / (1.0 + eps * np.sum(np.abs(f)))
    return rhs


def kernel_rank(W_rows):
    """Dimension of ``{q : W q = 0}`` for the R x I reaction-vector matrix (exact, sympy)."""
    W = sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) if hasattr(x, "numerator") else x
                       for x in row] for row in W_rows])
    return len(W.nullspace())


def complex_balance_loop(reactions, v):
    """Max over complexes of |outflow - inflow| by explicit bookkeeping."""
    bal = {}
    for y, yp, k in reactions:
        mono = 1.0
        for i, c in enumerate(y):
            if c:
                mono *= v[i] ** c
        bal[tuple(y)] = bal.get(tuple(y), 0.0) + k * mono
        bal[tuple(yp)] = bal.get(tuple(yp), 0.0) - k * mono
    return max(abs(x) for x in bal.values())


def equilibrium_bounded_ls(reactions, Q, M, x0):
    """Positive complex-balanced point in a class via bounded least squares on ``u`` itself."""
    complexes = []
    for y, yp, _ in reactions:
        for c in (tuple(y), tuple(yp)):
            if c not in complexes:
                complexes.append(c)

    def res(u):
        out = {c: 0.0 for c in complexes}
        for y, yp, k in reactions:
            mono = np.prod([u[i] ** c for i, c in enumerate(y)])
            out[tuple(y)] += k * mono
            out[tuple(yp)] -= k * mono
        return np.concatenate([list(out.values()), np.asarray(Q) @ u - np.asarray(M)])

    sol = least_squares(res, x0, bounds=(1e-12, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x


def heat_mode(x, t, offset, amp, d, length, mode=1):
    """Exact zero-flux heat solution for a single cosine mode."""
    k = mode * math.pi / length
    return offset + amp * np.cos(k * x) * np.exp(-d * k * k * t)


def psi_direct(x, y):
    """``x log(x/y) - x + y`` written literally in 50-digit arithmetic (``0 log 0 = 0``)."""
    with mpmath.workdps(50):
        x = mpmath.mpf(float(x))
        y = mpmath.mpf(float(y))
        return float((x * mpmath.log(x / y) if x > 0 else 0) - x + y)


def zeta_direct(s):
    """Cutoff profile written from its definition with plain math."""
    if s <= 0:
        return 1.0
    if s >= 1:
        return 0.0
    g = lambda t: math.exp(-1.0 / t)  # noqa: E731
    return g(1 - s) / (g(s) + g(1 - s))
