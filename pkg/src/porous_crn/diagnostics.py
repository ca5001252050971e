"""Entropy functionals, functional-inequality scans and decay-rate fits.

All spatial integrals use the finite-volume midpoint rule ``h * sum_j``
on fields of shape ``(I, N)``; gradients are face differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import ReactionNetwork, mass_action_rates, monomials, psi, regularised_rates

__all__ = [
    "EntropyTrace",
    "DecayReport",
    "ClassMismatchError",
    "InsufficientDataError",
    "relative_entropy",
    "entropy_dissipation",
    "diffusion_dissipation",
    "reaction_dissipation",
    "check_pointwise_psi",
    "check_ckp",
    "check_lsi",
    "check_eed",
    "l1_bound",
    "l1_distance",
    "fit_decay",
    "sample_class_fields",
    "sample_positive_fields",
    "check_renormalised_identity",
]


class ClassMismatchError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


def _u_inf(u_inf) -> np.ndarray:
    return np.asarray(getattr(u_inf, "u_inf", u_inf), dtype=float)


@dataclass
class EntropyTrace:
    """Time series of entropy, dissipation and conserved masses along a run.

    ``averages`` holds the per-species spatial means and ``fields`` the
    stored states; both are kept in memory only.
    """

    t: list = field(default_factory=list)
    E: list = field(default_factory=list)
    D: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    averages: list = field(default_factory=list)
    fields: list = field(default_factory=list)

    def append(self, t, E, D, masses, averages=None, u=None):
        if self.t and not t > self.t[-1]:
            raise ValueError("trace times must be strictly increasing")
        self.t.append(float(t))
        self.E.append(float(E))
        self.D.append(float(D))
        self.masses.append(np.asarray(masses, dtype=float))
        if averages is not None:
            self.averages.append(np.asarray(averages, dtype=float))
        if u is not None:
            self.fields.append(np.array(u, copy=True))

    def __len__(self):
        return len(self.t)

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.E), np.asarray(self.D), np.asarray(self.masses)

    def mass_drift(self) -> float:
        M = np.asarray(self.masses)
        if M.size == 0:
            return 0.0
        return float(np.max(np.abs(M - M[0])))

    def entropy_increase(self) -> float:
        """Largest step-to-step increase of ``E`` (negative if strictly decreasing)."""
        E = np.asarray(self.E)
        if len(E) < 2:
            return -math.inf
        return float(np.max(np.diff(E)))

    def to_csv(self, path):
        n_mass = len(self.masses[0]) if self.masses else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "E", "D"] + [f"mass_{k + 1}" for k in range(n_mass)])
            for t, E, D, M in zip(self.t, self.E, self.D, self.masses):
                w.writerow([repr(t), repr(E), repr(D)] + [repr(float(x)) for x in M])


@dataclass
class DecayReport:
    """Least-squares fit ``E(t) ~ C exp(-lambda t)`` on ``[T0, t_end]``.

    ``C_envelope`` is the smallest prefactor for which
    ``E(t) <= C_envelope exp(-lambda t)`` holds on the fit window.
    """

    lam: float
    C: float
    T0: float
    fit_r2: float
    alpha_used: float = 1.0
    C_envelope: float = math.nan
    n_points: int = 0
    flagged: bool = False

    def to_json(self) -> dict:
        return {"lambda": self.lam, "C": self.C, "T0": self.T0, "fit_r2": self.fit_r2,
                "alpha_used": self.alpha_used, "C_envelope": self.C_envelope,
                "n_points": self.n_points, "flagged": self.flagged}


# --------------------------------------------------------------------------
# functionals

def relative_entropy(u, u_inf, h: float) -> float:
    """``sum_i h sum_j (u log(u/u_inf) - u + u_inf)`` with ``0 log 0 = 0``."""
    u = np.asarray(u, dtype=float)
    ui = _u_inf(u_inf)[:, None]
    return float(h * np.sum(psi(u, ui)))


def diffusion_dissipation(u, d, m, h: float) -> float:
    """``sum_i d_i m_i int u_i^{m_i-2} |grad u_i|^2`` as ``(4 d_i / m_i) int |grad u_i^{m_i/2}|^2``."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    d = np.asarray(d, dtype=float)
    m = np.asarray(m, dtype=float)
    p = u ** (m[:, None] / 2.0)
    grad2 = np.sum(np.diff(p, axis=1) ** 2, axis=1) / h
    return float(np.sum(4.0 * d / m * grad2))


def reaction_dissipation(u, u_inf, net: ReactionNetwork, h: float, eps: float = 0.0) -> float:
    """``sum_r k_r u_inf^{y_r} int w psi(u^{y_r}/u_inf^{y_r}; u^{y'_r}/u_inf^{y'_r})``

    with pointwise weight ``w = 1 / (1 + eps |f(u)|)``.
    """
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    ui = _u_inf(u_inf)
    mono_r = monomials(net, u, "reactant")
    mono_p = monomials(net, u, "product")
    eq_r = monomials(net, ui, "reactant")[:, None]
    eq_p = monomials(net, ui, "product")[:, None]
    terms = (net.rates[:, None] * eq_r) * psi(mono_r / eq_r, mono_p / eq_p)
    if eps > 0:
        w = 1.0 / (1.0 + eps * np.abs(mass_action_rates(net, u)).sum(axis=0))
        terms = terms * w[None, :]
    return float(h * np.sum(terms))


def entropy_dissipation(u, u_inf, net: Optional[ReactionNetwork], diff, h: float, eps: float = 0.0) -> float:
    """Diffusive plus reactive entropy dissipation ``D[u]``."""
    D = diffusion_dissipation(u, diff.d, diff.m, h)
    if net is not None:
        D += reaction_dissipation(u, u_inf, net, h, eps)
    return D


def l1_distance(u, u_inf, h: float) -> np.ndarray:
    """Per-species ``||u_i - u_inf_i||_{L^1}``."""
    u = np.asarray(u, dtype=float)
    return h * np.abs(u - _u_inf(u_inf)[:, None]).sum(axis=1)


def l1_bound(E: float, u_inf) -> float:
    """``2 (E + sum_i u_inf_i)``: bounds every ``||u_i||_{L^1}`` on a unit domain."""
    return 2.0 * (E + float(np.sum(_u_inf(u_inf))))


# --------------------------------------------------------------------------
# inequality checks

def check_pointwise_psi(x, y):
    """Worst margins of ``psi(x;y) >= (sqrt x - sqrt y)^2 >= x/2 - y``.

    Returns ``(min psi - sq, min sq - (x/2 - y))``; both should be >= 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sq = (np.sqrt(x) - np.sqrt(y)) ** 2
    first = psi(x, y) - sq
    second = sq - (0.5 * x - y)
    return float(np.min(first)), float(np.min(second))


def check_ckp(u, u_inf, basis, h: float, tol: float = 1e-8) -> float:
    """``E[u|u_inf] / (sum_i ||u_i - u_inf_i||_{L^1})^2``; ``inf`` when ``u == u_inf``."""
    u = np.asarray(u, dtype=float)
    ui = _u_inf(u_inf)
    length = h * u.shape[1]
    if basis is not None and basis.m:
        lhs = basis.masses(u, h)
        rhs = basis.Q @ ui * length
        if np.max(np.abs(lhs - rhs)) > tol * max(1.0, float(np.max(np.abs(rhs)))):
            raise ClassMismatchError("field is not in the compatibility class of the equilibrium")
    dist = float(np.sum(l1_distance(u, ui, h)))
    E = relative_entropy(u, ui, h)
    if dist == 0.0:
        return math.inf
    return E / dist**2


def check_lsi(u_row, m: float, h: float):
    """Ratios for the two logarithmic Sobolev inequalities on one species.

    Returns ``(r1, r2)`` with
    ``r1 = int |grad u^{m/2}|^2 / (int u log(u/ubar))^m`` (``None`` for ``m < 1``)
    and
    ``r2 = int u^{m-2} |grad u|^2 / (ubar^{m-1} int u log(u/ubar))``,
    the left side of ``r2`` computed as ``(4/m^2) int |grad u^{m/2}|^2``.
    A constant row returns ``None`` (both sides vanish).
    """
    u = np.asarray(u_row, dtype=float)
    if np.any(u <= 0):
        raise ValueError("logarithmic Sobolev checks need a positive profile")
    ubar = float(np.mean(u))
    ent = float(h * np.sum(psi(u, ubar)))  # equals int u log(u/ubar) since int u = |Omega| ubar
    fisher = float(np.sum(np.diff(u ** (m / 2.0)) ** 2) / h)
    if ent <= 0.0 or fisher == 0.0:
        return None
    r1 = fisher / ent**m if m >= 1 else None
    r2 = (4.0 / m**2) * fisher / (ubar ** (m - 1.0) * ent)
    return r1, r2


def check_eed(net, u_inf, diff, samples, h: float, K: float = 10.0, eps: float = 0.0):
    """``(alpha, min D / E^alpha)`` over ``samples`` with ``alpha = max_i max(1, m_i)``.

    Samples with ``E == 0`` are skipped; samples with ``E > K`` are rejected.
    """
    alpha = float(max(1.0, max(diff.m)))
    best = math.inf
    seen = 0
    for u in samples:
        E = relative_entropy(u, u_inf, h)
        if E > K:
            raise ValueError(f"sample entropy {E:.3g} exceeds the bound K={K}")
        if E <= 0.0:
            continue
        seen += 1
        D = entropy_dissipation(u, u_inf, net, diff, h, eps)
        best = min(best, D / E**alpha)
    if seen == 0:
        raise ValueError("no usable samples")
    return alpha, best


# --------------------------------------------------------------------------
# sampling

def _random_profile(rng, N, x, amplitude):
    """Positive profile with unit mean built from a few random cosine modes."""
    k = np.arange(1, 6)
    coef = rng.normal(size=5) / k
    g = amplitude * (np.cos(np.pi * np.outer(x, k)) @ coef)
    p = np.exp(g - g.max())
    return p / p.mean()


def sample_positive_fields(n: int, N: int, rng, length: float = 1.0, levels=(1e-2, 1e2)):
    """Random strictly positive single-species profiles of varying roughness and level."""
    x = (np.arange(N) + 0.5) / N
    out = []
    for _ in range(n):
        level = math.exp(rng.uniform(math.log(levels[0]), math.log(levels[1])))
        amp = math.exp(rng.uniform(math.log(0.05), math.log(4.0)))
        out.append(level * _random_profile(rng, N, x, amp))
    return out


def sample_class_fields(u_inf, basis, n: int, N: int, rng, length: float = 1.0,
                        max_entropy: Optional[float] = None):
    """Random non-negative fields with the same conserved masses as ``u_inf``.

    The spatial means are ``u_inf + t * delta`` with ``delta`` a random
    direction in the kernel of ``Q`` and ``t`` below the distance to the
    orthant boundary; each species is then given a random positive profile
    with that mean. Rejection-samples to ``E <= max_entropy`` if given.
    """
    ui = _u_inf(u_inf)
    I = len(ui)
    h = length / N
    x = (np.arange(N) + 0.5) / N
    if basis is not None and basis.m:
        _, s, vt = np.linalg.svd(basis.Q)
        rank = int(np.sum(s > 1e-12))
        directions = vt[rank:]
    else:
        directions = np.eye(I)
    out = []
    while len(out) < n:
        if len(directions):
            delta = rng.normal(size=len(directions)) @ directions
            neg = delta < 0
            tmax = np.min(-ui[neg] / delta[neg]) if np.any(neg) else 10.0
            t = tmax * rng.uniform(0.0, 1.0) ** 0.5 * 0.999
            mean = ui + t * delta
        else:
            mean = ui.copy()
        amp = math.exp(rng.uniform(math.log(0.01), math.log(3.0)))
        u = np.stack([mean[i] * _random_profile(rng, N, x, amp) for i in range(I)])
        if max_entropy is not None and relative_entropy(u, ui, h) > max_entropy:
            continue
        out.append(u)
    return out


# --------------------------------------------------------------------------
# decay fitting

def fit_decay(trace: EntropyTrace, u_inf=None, t_min: Optional[float] = None,
              r2_threshold: float = 0.999, floor: float = 1e-14, alpha: float = 1.0) -> DecayReport:
    """Fit ``log E`` linearly in ``t`` on ``[T0, t_end]``.

    ``T0`` is the first record where every species mean has reached half
    its equilibrium value (zero if ``u_inf`` or the means are unavailable);
    ``t_min`` overrides it. Records with ``E <= floor`` are excluded.
    The report is flagged when ``r^2 < r2_threshold`` or the rate is not
    positive.
    """
    t = np.asarray(trace.t, dtype=float)
    E = np.asarray(trace.E, dtype=float)
    T0 = 0.0
    if t_min is not None:
        T0 = float(t_min)
    elif u_inf is not None and trace.averages:
        ui = _u_inf(u_inf)
        ok = np.all(np.asarray(trace.averages) >= 0.5 * ui[None, :], axis=1)
        if not np.any(ok):
            raise InsufficientDataError("species means never reach half their equilibrium values")
        T0 = float(t[np.argmax(ok)])
    sel = (t >= T0) & (E > floor)
    if np.count_nonzero(sel) < 10:
        raise InsufficientDataError(f"need >= 10 records with E > {floor} after T0={T0}")
    ts, logE = t[sel], np.log(E[sel])
    slope, intercept = np.polyfit(ts, logE, 1)
    pred = intercept + slope * ts
    ss_res = float(np.sum((logE - pred) ** 2))
    ss_tot = float(np.sum((logE - logE.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    lam = -float(slope)
    C_env = float(np.exp(intercept + np.max(logE - pred)))
    return DecayReport(lam=lam, C=float(np.exp(intercept)), T0=T0, fit_r2=r2, alpha_used=alpha,
                       C_envelope=C_env, n_points=int(np.count_nonzero(sel)),
                       flagged=bool(r2 < r2_threshold or lam <= 0))


# --------------------------------------------------------------------------
# renormalised formulation

def _face_avg(a):
    return 0.5 * (a[..., 1:] + a[..., :-1])


def check_renormalised_identity(trace: EntropyTrace, net: Optional[ReactionNetwork], diff, h: float,
                                xi, psi_fn, eps: float = 0.0) -> float:
    """Residual ``|LHS - RHS|`` of the renormalised weak formulation on a stored trajectory.

    ``xi`` supplies ``value``, ``grad`` and ``hess`` on fields; ``psi_fn(x, t)``
    is a smooth space-time test function. Time integrals follow the
    time stepping: diffusion terms at the new time level, reaction terms at
    the old one; ``int xi d_t psi`` uses exact increments of ``psi``.
    """
    if len(trace.fields) != len(trace.t) or len(trace.fields) < 2:
        raise ValueError("renormalised check needs the stored field history")
    t = np.asarray(trace.t)
    U = trace.fields
    N = U[0].shape[1]
    x = (np.arange(N) + 0.5) * h
    d = np.asarray(diff.d)[:, None]
    m = np.asarray(diff.m)[:, None]
    psis = [psi_fn(x, tk) for tk in t]

    lhs = h * np.sum(xi.value(U[-1]) * psis[-1]) - h * np.sum(xi.value(U[0]) * psis[0])
    rhs = 0.0
    for n in range(len(t) - 1):
        dt = t[n + 1] - t[n]
        u1 = U[n + 1]
        lhs -= h * np.sum(xi.value(u1) * (psis[n + 1] - psis[n]))
        # d_i m_i u_i^{m_i-1} grad u_i = d_i grad(u_i^{m_i}) at faces
        flux = d * np.diff(np.maximum(u1, 0.0) ** m, axis=1) / h
        grad_u = np.diff(u1, axis=1) / h
        grad_psi = np.diff(psis[n + 1]) / h
        H = _face_avg(xi.hess(u1))
        G = _face_avg(xi.grad(u1))
        psi_f = _face_avg(psis[n + 1])
        second = np.einsum("ijf,if,jf->f", H, flux, grad_u) * psi_f
        first = np.einsum("if,if->f", G, flux) * grad_psi
        diffusion = -h * np.sum(second) - h * np.sum(first)
        reaction = 0.0
        if net is not None:
            u0 = U[n]
            f = regularised_rates(net, u0, eps)
            reaction = h * np.sum(np.sum(xi.grad(u0) * f, axis=0) * psis[n])
        rhs += dt * (diffusion + reaction)
    return float(abs(lhs - rhs))
