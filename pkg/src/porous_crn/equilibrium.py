"""Conservation laws and complex-balanced equilibria."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .network import ReactionNetwork, exact_wegscheider_matrix

__all__ = [
    "ConservationBasis",
    "Equilibrium",
    "BoundaryEquilibriumReport",
    "EquilibriumError",
    "conservation_basis",
    "check_complex_balance",
    "solve_equilibrium",
    "detect_boundary_equilibria",
    "face_meets_class",
]

MAX_BOUNDARY_SPECIES = 16


class EquilibriumError(RuntimeError):
    """Newton did not converge; carries the last iterate and residuals."""

    def __init__(self, message, u=None, cb_residual=None, class_residual=None):
        super().__init__(message)
        self.u = u
        self.cb_residual = cb_residual
        self.class_residual = class_residual


@dataclass(frozen=True)
class ConservationBasis:
    """Integer rows spanning the left kernel of the reaction vectors."""

    rows: tuple  # tuple of tuples of Fraction (integral values)
    n_species: int

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def Q(self) -> np.ndarray:
        return np.array([[float(c) for c in row] for row in self.rows]).reshape(self.m, self.n_species)

    def masses(self, u: np.ndarray, h: float = 1.0) -> np.ndarray:
        """``Q . (h * sum_j u_j)`` for a field (I, N), or ``Q . u`` for a state."""
        u = np.asarray(u, dtype=float)
        total = h * u.sum(axis=1) if u.ndim == 2 else u
        return self.Q @ total


def _rref(rows):
    """Reduced row echelon form over the rationals; returns (matrix, pivot columns)."""
    A = [list(r) for r in rows]
    n_rows = len(A)
    n_cols = len(A[0]) if A else 0
    pivots = []
    r = 0
    for c in range(n_cols):
        piv = next((i for i in range(r, n_rows) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        p = A[r][c]
        A[r] = [x / p for x in A[r]]
        for i in range(n_rows):
            if i != r and A[i][c] != 0:
                f = A[i][c]
                A[i] = [a - f * b for a, b in zip(A[i], A[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    return A[:r], pivots


def _integer_row(row):
    lcm = reduce(lambda a, b: a * b // math.gcd(a, b), (x.denominator for x in row), 1)
    ints = [int(x * lcm) for x in row]
    g = reduce(math.gcd, (abs(v) for v in ints), 0) or 1
    ints = [v // g for v in ints]
    lead = next((v for v in ints if v != 0), 1)
    if lead < 0:
        ints = [-v for v in ints]
    return tuple(Fraction(v) for v in ints)


def conservation_basis(net: ReactionNetwork) -> ConservationBasis:
    """Exact basis of ``{q : q . (y'_r - y_r) = 0 for all r}``.

    The kernel is computed by Gauss-Jordan elimination in rational
    arithmetic, brought to reduced echelon form and scaled to primitive
    integer rows with positive leading entry.
    """
    n = net.n_species
    W = exact_wegscheider_matrix(net)
    R, pivots = _rref(W)
    free = [c for c in range(n) if c not in pivots]
    kernel = []
    for f in free:
        v = [Fraction(0)] * n
        v[f] = Fraction(1)
        for row, p in zip(R, pivots):
            v[p] = -row[f]
        kernel.append(v)
    if not kernel:
        return ConservationBasis((), n)
    K, _ = _rref(kernel)
    return ConservationBasis(tuple(_integer_row(row) for row in K), n)


@dataclass
class Equilibrium:
    u_inf: np.ndarray
    mass: np.ndarray
    cb_residual: float
    class_residual: float
    iterations: int = 0

    def to_json(self) -> dict:
        return {
            "u_inf": [float(x) for x in self.u_inf],
            "mass": [float(x) for x in self.mass],
            "cb_residual": float(self.cb_residual),
            "class_residual": float(self.class_residual),
            "iterations": int(self.iterations),
        }


@dataclass
class BoundaryEquilibriumReport:
    support: tuple
    point: np.ndarray
    in_class_of: Optional[np.ndarray] = None
    cb_residual: float = 0.0

    def to_json(self) -> dict:
        return {
            "support": list(self.support),
            "point": [float(x) for x in self.point],
            "in_class_of": None if self.in_class_of is None else [float(x) for x in self.in_class_of],
            "cb_residual": float(self.cb_residual),
        }


# --------------------------------------------------------------------------
# complex balance

def _complex_incidence(net: ReactionNetwork, reactions=None):
    """(n_complexes x R) matrices marking the source and target complex of each reaction."""
    idx = {c: i for i, c in enumerate(net.complexes)}
    reactions = range(net.n_reactions) if reactions is None else reactions
    src = np.zeros((len(idx), net.n_reactions))
    tgt = np.zeros((len(idx), net.n_reactions))
    for r in reactions:
        rx = net.reactions[r]
        src[idx[tuple(rx.reactant)], r] = 1.0
        tgt[idx[tuple(rx.product)], r] = 1.0
    return src, tgt


def _fluxes(net: ReactionNetwork, v: np.ndarray) -> np.ndarray:
    v = np.maximum(np.asarray(v, dtype=float), 0.0)
    return net.rates * np.prod(v[None, :] ** net.reactant_matrix, axis=1)


def complex_balance_residuals(net: ReactionNetwork, v) -> np.ndarray:
    """Outflow minus inflow at every distinct complex."""
    src, tgt = _complex_incidence(net)
    flux = _fluxes(net, v)
    return (src - tgt) @ flux


def check_complex_balance(net: ReactionNetwork, v) -> float:
    """``max_y |sum_{r: y_r = y} k_r v^{y_r} - sum_{s: y'_s = y} k_s v^{y_s}|``."""
    return float(np.max(np.abs(complex_balance_residuals(net, v))))


def _relative_cb(net, v) -> float:
    scale = max(float(np.max(_fluxes(net, v))), 1e-300)
    return check_complex_balance(net, v) / scale


# --------------------------------------------------------------------------
# Newton in log variables

def _cb_system(net, incid, w):
    """Per-complex ``(out - in) / (out + in)`` and its Jacobian in ``w``.

    The normalisation keeps the residual away from zero where all fluxes
    vanish, so Newton is not drawn towards the boundary of the orthant.
    """
    src, tgt = incid
    u = np.exp(w)
    flux = net.rates * np.exp(net.reactant_matrix @ w)
    # d flux_r / d w_i = flux_r * y_{r,i}
    dflux = flux[:, None] * net.reactant_matrix
    diff = (src - tgt) @ flux
    tot = (src + tgt) @ flux + 1e-300
    J_diff = (src - tgt) @ dflux
    J_tot = (src + tgt) @ dflux
    g = diff / tot
    J = J_diff / tot[:, None] - (diff / tot**2)[:, None] * J_tot
    return g, J, u


def _armijo_newton(residual, w0, max_iter=100, tol=1e-14, select=None):
    """Damped Newton / Gauss-Newton on ``residual(w) -> (F, J)``.

    Armijo backtracking on ``0.5 |F|^2``: initial step 1, factor 1/2, at
    most 30 halvings.
    """
    w = np.array(w0, dtype=float)
    F, J = residual(w)
    phi = 0.5 * F @ F
    for it in range(1, max_iter + 1):
        if select is not None:
            Fs, Js = F[select], J[select]
        else:
            Fs, Js = F, J
        if Js.shape[0] == Js.shape[1]:
            try:
                step = -np.linalg.solve(Js, Fs)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(Js, Fs, rcond=None)[0]
        else:
            step = -np.linalg.lstsq(Js, Fs, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return w, F, it, False
        t = 1.0
        for _ in range(31):
            w_new = w + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                F_new, J_new = residual(w_new)
            phi_new = 0.5 * F_new @ F_new
            if np.isfinite(phi_new) and phi_new <= (1.0 - 2e-4 * t) * phi:
                break
            t *= 0.5
        else:
            return w, F, it, False
        w, F, J, phi = w_new, F_new, J_new, phi_new
        if np.max(np.abs(t * step)) < tol * (1.0 + np.max(np.abs(w))) or phi == 0.0:
            return w, F, it, True
    return w, F, max_iter, False


def _initial_guess(basis: ConservationBasis, M, volume):
    n = basis.n_species
    if basis.m == 0:
        return np.zeros(n)
    q1 = basis.Q @ np.ones(n) * volume
    denom = q1 @ q1
    if denom > 0:
        c = (q1 @ M) / denom
        if c > 0:
            return np.full(n, math.log(c))
    return np.zeros(n)


def _linkage_classes(incid):
    src, tgt = incid
    adj = (src @ tgt.T + tgt @ src.T) > 0
    n, labels = connected_components(adj, directed=False)
    return [np.flatnonzero(labels == c) for c in range(n)]


def _toric_base_point(net: ReactionNetwork, incid) -> np.ndarray:
    """``log`` of some strictly positive complex-balanced state, or raise.

    Complex balance says the vector ``c_y = u^y`` lies in the kernel of the
    Kirchhoff matrix of the complex graph. On a strongly connected linkage
    class that kernel is one positive ray ``rho``, so ``y . log u`` equals
    ``log rho_y`` up to one shift per linkage class: a linear system.
    """
    src, tgt = incid
    A = (tgt - src) @ (net.rates[:, None] * src.T)
    Y = np.array([[float(c) for c in y] for y in net.complexes])
    classes = _linkage_classes(incid)
    rows, rhs = [], []
    for ell, idx in enumerate(classes):
        sub = A[np.ix_(idx, idx)]
        if len(idx) == 1:
            rho = np.ones(1)
        else:
            _, sv, vt = np.linalg.svd(sub)
            rho = vt[-1]
            rho = rho * np.sign(rho[np.argmax(np.abs(rho))])
            if sv[-2] <= 1e-12 * sv[0] or np.any(rho <= 1e-14 * np.max(rho)):
                raise EquilibriumError("complex graph is not weakly reversible: "
                                       "no strictly positive complex-balanced equilibrium")
        for a, y in enumerate(idx):
            shift = np.zeros(len(classes))
            shift[ell] = -1.0
            rows.append(np.concatenate([Y[y], shift]))
            rhs.append(math.log(rho[a]))
    rows, rhs = np.array(rows), np.array(rhs)
    sol, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    if np.max(np.abs(rows @ sol - rhs)) > 1e-8 * (1.0 + np.max(np.abs(rhs))):
        raise EquilibriumError("rate constants admit no strictly positive complex-balanced equilibrium")
    return sol[: net.n_species]


def _class_newton(w_star, Q, M, volume, lam0, max_iter=500):
    """Minimise ``volume * sum_i exp(w_star + Q^T lam)_i - M . lam`` by damped Newton.

    The objective is strictly convex; its gradient ``Q u volume - M``
    vanishes exactly at the equilibrium of class ``M``.
    """
    def objective(lam):
        with np.errstate(over="ignore"):
            u = np.exp(w_star + Q.T @ lam)
        return volume * np.sum(u) - M @ lam, u

    lam = np.array(lam0, dtype=float)
    F, u = objective(lam)
    scale = max(1.0, float(np.max(np.abs(M))))
    for it in range(1, max_iter + 1):
        g = volume * (Q @ u) - M
        if np.max(np.abs(g)) <= 1e-14 * scale:
            return lam, it, True
        H = volume * (Q * u[None, :]) @ Q.T
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return lam, it, False
        dec = g @ step
        gnorm = np.linalg.norm(g)
        t = 1.0
        for _ in range(60):
            F_new, u_new = objective(lam + t * step)
            if np.isfinite(F_new):
                # near the optimum F stops resolving progress; the gradient still does
                g_new = volume * (Q @ u_new) - M
                if F_new <= F + 1e-4 * t * dec or np.linalg.norm(g_new) <= (1 - 1e-4 * t) * gnorm:
                    break
            t *= 0.5
        else:
            return lam, it, bool(np.max(np.abs(g)) <= 1e-11 * scale)
        lam, F, u = lam + t * step, F_new, u_new
        if not np.all(np.isfinite(u)) or np.any(u == 0):
            return lam, it, False
    return lam, max_iter, False


def solve_equilibrium(net: ReactionNetwork, basis: ConservationBasis, M, domain_volume: float = 1.0,
                      w0=None, max_iter: int = 100, tol: float = 1e-10) -> Equilibrium:
    """Strictly positive complex-balanced equilibrium with ``Q u |Omega| = M``.

    Works in ``w = log u``. Positive complex-balanced states form the
    family ``w_star + Q^T lam``; a base point ``w_star`` comes from the
    Kirchhoff kernel of the complex graph, and ``lam`` solves a strictly
    convex problem by damped Newton from the projection of the initial
    guess ``w0`` (default: the uniform state matching ``M``). The result is
    polished by damped Newton on the stacked residual (``I - m``
    complex-balance rows chosen by pivoted QR, plus the class equations).
    """
    n = net.n_species
    M = np.asarray(M, dtype=float).reshape(-1)
    if M.shape[0] != basis.m:
        raise ValueError(f"mass vector has length {M.shape[0]}, expected {basis.m}")
    if domain_volume <= 0:
        raise ValueError("domain volume must be positive")
    Q = basis.Q
    incid = _complex_incidence(net)
    n_cx = incid[0].shape[0]

    w_star = _toric_base_point(net, incid)
    w_guess = _initial_guess(basis, M, domain_volume) if w0 is None else np.asarray(w0, dtype=float)
    iters = 0
    if basis.m:
        lam0 = np.linalg.lstsq(Q.T, w_guess - w_star, rcond=None)[0]
        lam, iters, ok = _class_newton(w_star, Q, M, domain_volume, lam0, max_iter=5 * max_iter)
        w = w_star + Q.T @ lam
        if not ok:
            u = np.exp(w)
            cls = float(np.max(np.abs(Q @ u * domain_volume - M)))
            raise EquilibriumError(
                f"no equilibrium found in the class (class residual {cls:.3e}); "
                "the mass vector may lie outside the positive compatibility image",
                u=u, cb_residual=check_complex_balance(net, u), class_residual=cls)
    else:
        w = w_star

    def residual(w):
        g, Jg, u = _cb_system(net, incid, w)
        c = Q @ u * domain_volume - M
        Jc = Q * (u * domain_volume)[None, :]
        return np.concatenate([g, c]), np.vstack([Jg, Jc])

    _, Jg0, _ = _cb_system(net, incid, w)
    _, _, perm = scipy.linalg.qr(Jg0.T, pivoting=True)
    select = np.concatenate([np.sort(perm[: n - basis.m]), n_cx + np.arange(basis.m)])
    w_pol, _, more, _ = _armijo_newton(residual, w, max_iter=10, select=select)
    if np.all(np.isfinite(w_pol)):
        r_old, r_new = residual(w)[0], residual(w_pol)[0]
        if np.max(np.abs(r_new)) <= np.max(np.abs(r_old)):
            w = w_pol
            iters += more

    u = np.exp(w)
    mass = Q @ u * domain_volume
    cb = check_complex_balance(net, u)
    cls = float(np.max(np.abs(mass - M))) if basis.m else 0.0
    cls_rel = cls / max(1.0, float(np.max(np.abs(M)))) if basis.m else 0.0
    if not (np.all(np.isfinite(u)) and _relative_cb(net, u) <= tol and cls_rel <= tol):
        raise EquilibriumError(
            f"equilibrium solve failed (cb residual {cb:.3e}, class residual {cls:.3e})",
            u=u, cb_residual=cb, class_residual=cls)
    return Equilibrium(u_inf=u, mass=mass, cb_residual=cb, class_residual=cls, iterations=iters)


# --------------------------------------------------------------------------
# boundary equilibria

def _support(y):
    return {i for i, c in enumerate(y) if c != 0}


def detect_boundary_equilibria(net: ReactionNetwork, basis: Optional[ConservationBasis] = None,
                               tol: float = 1e-10, n_starts: int = 8, seed: int = 0) -> list:
    """Complex-balanced equilibria on the boundary of the orthant, by support enumeration.

    For every proper non-empty support ``S`` the reactions whose reactant
    complex lives in ``S`` are active. If an active reaction feeds a complex
    that leaves ``S``, that inflow can never be balanced and ``S`` carries no
    equilibrium. Otherwise a positive complex-balanced point of the active
    subnetwork is sought on ``S``; a face with no active reactions is an
    equilibrium face outright. The origin is reported iff it is balanced.
    """
    n = net.n_species
    if n > MAX_BOUNDARY_SPECIES:
        raise ValueError(f"boundary enumeration limited to {MAX_BOUNDARY_SPECIES} species")
    Q = basis.Q if basis is not None else None
    rng = np.random.default_rng(seed)
    reports = []

    origin = np.zeros(n)
    cb0 = check_complex_balance(net, origin)
    if cb0 <= tol:
        reports.append(BoundaryEquilibriumReport((), origin, None if Q is None else Q @ origin, cb0))

    for size in range(1, n):
        for S in itertools.combinations(range(n), size):
            Sset = set(S)
            active = [r for r, rx in enumerate(net.reactions) if _support(rx.reactant) <= Sset]
            if any(not _support(net.reactions[r].product) <= Sset for r in active):
                continue
            point = _solve_on_face(net, S, active, rng, tol, n_starts)
            if point is None:
                continue
            reports.append(BoundaryEquilibriumReport(
                S, point, None if Q is None else Q @ point, check_complex_balance(net, point)))
    return reports


def _solve_on_face(net, S, active, rng, tol, n_starts):
    n = net.n_species
    S = list(S)
    point = np.zeros(n)
    if not active:
        point[S] = 1.0
        return point
    incid = _complex_incidence(net, active)
    src, tgt = incid
    mask = np.zeros(net.n_reactions)
    mask[active] = 1.0
    Y = net.reactant_matrix[:, S]

    def residual(wS):
        flux = mask * net.rates * np.exp(Y @ wS)
        g = (src - tgt) @ flux
        J = (src - tgt) @ (flux[:, None] * Y)
        return g, J

    starts = [np.zeros(len(S))] + [rng.uniform(-2, 2, len(S)) for _ in range(n_starts - 1)]
    for w0 in starts:
        wS, F, _, _ = _armijo_newton(residual, w0, max_iter=200)
        if not np.all(np.isfinite(wS)):
            continue
        point = np.zeros(n)
        point[S] = np.exp(wS)
        scale = max(float(np.max(_fluxes(net, point))), 1e-300)
        if check_complex_balance(net, point) <= tol * scale:
            return point
    return None


def face_meets_class(report: BoundaryEquilibriumReport, basis: ConservationBasis, M,
                     domain_volume: float = 1.0) -> bool:
    """Whether the face ``{v >= 0 : supp v = support}`` meets the class ``Q v |Omega| = M``.

    A ``False`` answer rules the reported face out of the class; ``True``
    is only a necessary condition for a boundary equilibrium in the class.
    """
    M = np.asarray(M, dtype=float)
    S = list(report.support)
    if not S:
        return bool(np.allclose(M, 0.0))
    if basis.m == 0:
        return True
    A = basis.Q[:, S] * domain_volume
    # maximise a common lower bound s on v_S subject to A v_S = M
    k = len(S)
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=M,
                  bounds=[(0, None)] * k + [(0, 1.0)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-12)
