"""Weighted truncations ``omega_i^E`` and numerical checks of their properties.

``omega_i^E(v) = (v_i - 3E) zeta(sum_j v_j E^{-alpha_j} - 1) + 3E`` leaves
``v -> v_i`` untouched while the weighted sum stays below one and freezes it
at ``3E`` once the sum exceeds two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "zeta",
    "zeta_derivatives",
    "truncation_exponents",
    "TruncationSpec",
    "omega",
    "omega_grad",
    "omega_hess",
    "weighted_hessian",
    "band_samples",
    "verify_key_estimate",
    "verify_vanishing_on_compacts",
    "gradient_sup",
    "ScalarTruncation",
]


def _g(t):
    """``exp(-1/t)`` for ``t > 0`` and its first two derivatives; zero elsewhere."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    logt = np.log(ts)
    g0 = np.where(pos, np.exp(-1.0 / ts), 0.0)
    g1 = np.where(pos, np.exp(-1.0 / ts - 2.0 * logt), 0.0)
    # g'' = g (1/t^4 - 2/t^3)
    g2 = np.where(pos, np.exp(-1.0 / ts - 4.0 * logt) - 2.0 * np.exp(-1.0 / ts - 3.0 * logt), 0.0)
    return g0, g1, g2


def zeta_derivatives(s):
    """``(zeta, zeta', zeta'')`` for ``zeta(s) = g(1-s) / (g(s) + g(1-s))``.

    ``zeta == 1`` on ``s <= 0`` and ``zeta == 0`` on ``s >= 1``; C-infinity.
    """
    s = np.asarray(s, dtype=float)
    a, a1, a2 = _g(s)
    b, b1, b2 = _g(1.0 - s)
    b1, b2 = -b1, b2  # chain rule for the argument 1 - s
    den = a + b  # > 0 everywhere
    num1 = b1 * a - b * a1
    z = b / den
    z1 = num1 / den**2
    z2 = (b2 * a - b * a2) / den**2 - 2.0 * num1 * (a1 + b1) / den**3
    return z, z1, z2


def zeta(s):
    return zeta_derivatives(s)[0]


def truncation_exponents(m, i: int) -> np.ndarray:
    """``alpha_i = 1`` and ``alpha_j = 2 / min(m_j, 2 - m_j)`` for ``j != i``."""
    m = np.asarray(m, dtype=float)
    if np.any((m <= 0) | (m >= 2)):
        raise ValueError("truncation exponents need 0 < m_j < 2")
    alpha = 2.0 / np.minimum(m, 2.0 - m)
    alpha[i] = 1.0
    return alpha


@dataclass(frozen=True)
class TruncationSpec:
    m: tuple
    i: int
    E: float

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(float(x) for x in self.m))
        if not 0 <= self.i < len(self.m):
            raise ValueError("distinguished index out of range")
        if self.E < 1:
            raise ValueError("truncation level E must be >= 1")

    @property
    def alpha(self) -> np.ndarray:
        return truncation_exponents(self.m, self.i)

    @property
    def weights(self) -> np.ndarray:
        """``E^{-alpha_j}``."""
        return float(self.E) ** (-self.alpha)


def _argument(spec, v):
    v = np.asarray(v, dtype=float)
    w = spec.weights.reshape((-1,) + (1,) * (v.ndim - 1))
    return np.sum(v * w, axis=0) - 1.0


def omega(spec: TruncationSpec, v) -> np.ndarray:
    """``omega_i^E(v)`` for ``v`` of shape (I,) or (I, ...).

    Returns ``v_i`` bit-for-bit where ``zeta == 1`` and ``3E`` where ``zeta == 0``.
    """
    v = np.asarray(v, dtype=float)
    s = _argument(spec, v)
    vi = v[spec.i]
    E3 = 3.0 * spec.E
    band = (vi - E3) * zeta(s) + E3
    return np.where(s <= 0, vi, np.where(s >= 1, E3, band))


def omega_grad(spec: TruncationSpec, v) -> np.ndarray:
    """Gradient of ``omega_i^E``, shape (I,) + v.shape[1:]."""
    v = np.asarray(v, dtype=float)
    s = _argument(spec, v)
    z, z1, _ = zeta_derivatives(s)
    w = spec.weights.reshape((-1,) + (1,) * (v.ndim - 1))
    grad = (v[spec.i] - 3.0 * spec.E) * z1 * w
    grad[spec.i] = grad[spec.i] + z
    return grad


def omega_hess(spec: TruncationSpec, v) -> np.ndarray:
    """Hessian of ``omega_i^E``, shape (I, I) + v.shape[1:].

    ``d_j d_k omega = (v_i - 3E) zeta'' w_j w_k + zeta' (delta_ij w_k + delta_ik w_j)``
    with ``w = E^{-alpha}``.
    """
    v = np.asarray(v, dtype=float)
    s = _argument(spec, v)
    _, z1, z2 = zeta_derivatives(s)
    w = spec.weights.reshape((-1,) + (1,) * (v.ndim - 1))
    H = (v[spec.i] - 3.0 * spec.E) * z2 * w[:, None] * w[None, :]
    H[spec.i, :] = H[spec.i, :] + z1 * w
    H[:, spec.i] = H[:, spec.i] + z1 * w
    return H


def weighted_hessian(spec: TruncationSpec, v) -> np.ndarray:
    """``v_j^{m_j/2} v_k^{1 - m_k/2} |d_j d_k omega(v)|`` for all pairs (j, k)."""
    v = np.asarray(v, dtype=float)
    m = np.asarray(spec.m).reshape((-1,) + (1,) * (v.ndim - 1))
    left = v ** (m / 2.0)
    right = v ** (1.0 - m / 2.0)
    return left[:, None] * right[None, :] * np.abs(omega_hess(spec, v))


def band_samples(m, i: int, E: float, n_simplex: int = 24, n_band: int = 64,
                 rng=None, n_random: int = 2000) -> np.ndarray:
    """States whose weighted sum ``sum_j v_j E^{-alpha_j}`` lies in ``[1, 2]``.

    ``v_j = E^{alpha_j} theta_j (1 + s)`` with ``theta`` on the simplex and
    ``s`` in ``[0, 1]``; the same ``(theta, s)`` set is reused for every
    ``E`` so that scans over ``E`` compare like with like. Only on this band
    can the second derivatives be non-zero.
    """
    I = len(m)
    alpha = truncation_exponents(m, i)
    thetas = _simplex_grid(I, n_simplex)
    rng = np.random.default_rng(12345) if rng is None else rng
    extra = rng.dirichlet(np.full(I, 0.5), size=n_random)
    # near-axis points: one coordinate tiny
    axis = rng.dirichlet(np.ones(I), size=n_random // 4)
    axis[np.arange(len(axis)), rng.integers(0, I, len(axis))] *= 10.0 ** rng.uniform(-6, -1, len(axis))
    axis /= axis.sum(axis=1, keepdims=True)
    thetas = np.vstack([thetas, extra, axis])
    s = np.linspace(0.0, 1.0, n_band + 2)[1:-1]
    T = np.repeat(thetas, len(s), axis=0)
    S = np.tile(s, len(thetas))
    scale = float(E) ** alpha
    return (T * (1.0 + S)[:, None] * scale[None, :]).T


def _simplex_grid(I, n):
    pts = []

    def rec(prefix, left, k):
        if k == 1:
            pts.append(prefix + [left])
            return
        for a in range(left + 1):
            rec(prefix + [a], left - a, k - 1)

    rec([], n, I)
    return np.array(pts, dtype=float) / n


def log_grid_samples(I: int, lo: float = 1e-6, hi: float = 1e7, n: int = 12) -> np.ndarray:
    axes = np.geomspace(lo, hi, n)
    mesh = np.meshgrid(*([axes] * I), indexing="ij")
    return np.stack([g.ravel() for g in mesh])


def verify_key_estimate(m, i: int, E_list=None, samples=None) -> dict:
    """Scan the weighted Hessian over ``E_list`` and report per-pair maxima.

    Returns a dict with ``table`` (list of ``{pair, E, weighted_sup}``),
    ``K`` (the overall max, an empirical ``K_i``) and ``no_growth``: for
    each pair, the max over the upper half of ``E_list`` is at most 1.05
    times the max over the lower half.
    """
    E_list = [2.0**k for k in range(11)] if E_list is None else list(E_list)
    I = len(m)
    sups = np.zeros((len(E_list), I, I))
    for a, E in enumerate(E_list):
        spec = TruncationSpec(m, i, E)
        v = band_samples(m, i, E) if samples is None else samples(E)
        v = np.hstack([v, log_grid_samples(I)])
        wh = weighted_hessian(spec, v)
        sups[a] = wh.reshape(I, I, -1).max(axis=2)
    half = len(E_list) // 2
    low = sups[:half].max(axis=0) if half else sups.max(axis=0)
    high = sups[half:].max(axis=0)
    no_growth = bool(np.all(high <= 1.05 * low + 1e-300))
    table = [
        {"pair": [j, k], "E": float(E), "weighted_sup": float(sups[a, j, k])}
        for a, E in enumerate(E_list) for j in range(I) for k in range(I)
    ]
    return {"i": i, "m": list(map(float, m)), "table": table, "K": float(sups.max()),
            "no_growth": no_growth, "sups": sups}


def _ball_samples(I, K, rng, n=20000):
    """Points of the non-negative orthant with Euclidean norm <= K, incl. the sphere."""
    d = np.abs(rng.normal(size=(n, I)))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = K * rng.uniform(0, 1, n) ** (1.0 / I)
    r[: n // 4] = K
    return (d * r[:, None]).T


def verify_vanishing_on_compacts(m, i: int, K_bound: float, E_list=None, seed: int = 0) -> dict:
    """``sup_{|v| <= K} |d_j d_k omega_i^E(v)|`` along doubling ``E``.

    The sup is exactly zero once ``K |E^{-alpha}|_2 <= 1``: the whole ball
    then sits in the region where ``zeta == 1``.
    """
    E_list = [2.0**k for k in range(16)] if E_list is None else list(E_list)
    I = len(m)
    rng = np.random.default_rng(seed)
    v = _ball_samples(I, K_bound, rng)
    rows = []
    for E in E_list:
        spec = TruncationSpec(m, i, E)
        hess_sup = float(np.abs(omega_hess(spec, v)).max())
        grad_sup = float(np.abs(omega_grad(spec, v)).max())
        inside = bool(K_bound * np.linalg.norm(spec.weights) <= 1.0)
        rows.append({"E": float(E), "hess_sup": hess_sup, "grad_sup": grad_sup,
                     "ball_in_identity_region": inside})
    first = rows[0]["hess_sup"]
    final = rows[-1]["hess_sup"]
    return {"i": i, "K": float(K_bound), "rows": rows,
            "to_zero": bool(final <= 1e-6 * first) if first > 0 else final == 0.0}


def gradient_sup(m, i: int, E_list=None) -> float:
    """``max_j sup_E sup_v |d_j omega_i^E(v)|`` over band samples."""
    E_list = [2.0**k for k in range(11)] if E_list is None else E_list
    best = 0.0
    for E in E_list:
        spec = TruncationSpec(m, i, E)
        best = max(best, float(np.abs(omega_grad(spec, band_samples(m, i, E))).max()))
    return best


class ScalarTruncation:
    """``xi(u) = (u_k - 3K) zeta(sum_i u_i / K - 1) + 3K``.

    A smooth renormalising function whose derivative vanishes once
    ``sum_i u_i >= 2K``. Operates on fields of shape (I, N).
    """

    def __init__(self, k: int, K: float):
        self.k = k
        self.K = float(K)

    def _parts(self, u):
        s = u.sum(axis=0) / self.K - 1.0
        return zeta_derivatives(s)

    def value(self, u):
        z, _, _ = self._parts(u)
        return (u[self.k] - 3.0 * self.K) * z + 3.0 * self.K

    def grad(self, u):
        z, z1, _ = self._parts(u)
        g = np.broadcast_to((u[self.k] - 3.0 * self.K) * z1 / self.K, u.shape).copy()
        g[self.k] += z
        return g

    def hess(self, u):
        _, z1, z2 = self._parts(u)
        n = u.shape[0]
        H = np.broadcast_to((u[self.k] - 3.0 * self.K) * z2 / self.K**2,
                            (n, n) + u.shape[1:]).copy()
        H[self.k, :] += z1 / self.K
        H[:, self.k] += z1 / self.K
        return H


class LinearFunctional:
    """``xi(u) = u_k``."""

    def __init__(self, k: int):
        self.k = k

    def value(self, u):
        return u[self.k].copy()

    def grad(self, u):
        g = np.zeros_like(u)
        g[self.k] = 1.0
        return g

    def hess(self, u):
        return np.zeros((u.shape[0],) + u.shape)


class ConstantFunctional:
    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def value(self, u):
        return np.full(u.shape[1:], self.c)

    def grad(self, u):
        return np.zeros_like(u)

    def hess(self, u):
        return np.zeros((u.shape[0],) + u.shape)
