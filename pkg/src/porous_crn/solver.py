"""Finite-volume solver for mass-action reaction-diffusion with porous-medium diffusion.

Cells of width ``h`` on ``[0, L]`` carry the species concentrations; the
flux of ``u_i^{m_i}`` through interior faces is a centred difference and
both boundary faces carry zero flux. The ``imex-newton`` scheme treats
diffusion implicitly (one tridiagonal Newton solve per species) and the
reaction explicitly; ``explicit`` is forward Euler on both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .diagnostics import EntropyTrace, entropy_dissipation, relative_entropy
from .network import DiffusionSpec, ReactionNetwork, regularised_rates

__all__ = [
    "Grid",
    "SimConfig",
    "SolverError",
    "StabilityError",
    "diffusion_flux",
    "stability_bound",
    "step",
    "run",
    "initial_profile",
    "DELTA_M",
]

DELTA_M = 1e-12


class SolverError(RuntimeError):
    pass


class StabilityError(ValueError):
    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"explicit time step {dt:g} exceeds the stability bound; use dt <= {dt_max:.6g}")


@dataclass(frozen=True)
class Grid:
    N: int
    length: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("grid needs at least two cells")
        if not self.length > 0:
            raise ValueError("domain length must be positive")

    @property
    def h(self) -> float:
        return self.length / self.N

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    diffusion: DiffusionSpec
    dt: float
    t_end: float
    eps: float = 0.0
    scheme: str = "imex-newton"
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    trace_every: int = 1
    keep_fields: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.scheme not in ("imex-newton", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


def diffusion_flux(u_i, d_i: float, m_i: float, h: float) -> np.ndarray:
    """Face fluxes ``-d (u_{j+1}^m - u_j^m) / h``; the two boundary faces carry zero."""
    p = np.maximum(np.asarray(u_i, dtype=float), 0.0) ** m_i
    F = np.zeros(p.shape[-1] + 1)
    F[1:-1] = -d_i * np.diff(p) / h
    return F


def _neumann_laplacian(p):
    """Undivided second difference with zero-flux ends."""
    out = np.empty_like(p)
    dp = np.diff(p, axis=-1)
    out[..., 0] = dp[..., 0]
    out[..., -1] = -dp[..., -1]
    out[..., 1:-1] = dp[..., 1:] - dp[..., :-1]
    return out


def stability_bound(state, cfg: SimConfig) -> float:
    """Largest stable forward-Euler step ``0.5 h^2 / max_i (d_i m_i max_j max(u, delta)^{m_i-1} + delta)``."""
    u = np.asarray(state, dtype=float)
    h = cfg.grid.h
    worst = 0.0
    for i, (d, m) in enumerate(zip(cfg.diffusion.d, cfg.diffusion.m)):
        slope = d * m * np.max(np.maximum(u[i], DELTA_M) ** (m - 1.0))
        worst = max(worst, slope)
    return 0.5 * h * h / (worst + DELTA_M)


def _implicit_species(b, v0, c, m, tol, max_iter):
    """Solve ``v - c * lap(v^m) = b`` by Newton with a tridiagonal Jacobian."""
    N = b.shape[0]
    v = np.maximum(v0, 0.0).copy()
    deg = np.full(N, 2.0)
    deg[0] = deg[-1] = 1.0
    ab = np.empty((3, N))
    for it in range(1, max_iter + 1):
        G = v - c * _neumann_laplacian(v**m) - b
        slope = m * np.maximum(v, DELTA_M) ** (m - 1.0)
        ab[0, 0] = 0.0
        ab[0, 1:] = -c * slope[1:]
        ab[1] = 1.0 + c * deg * slope
        ab[2, :-1] = -c * slope[:-1]
        ab[2, -1] = 0.0
        delta = solve_banded((1, 1), ab, -G)
        if not np.all(np.isfinite(delta)):
            return v, False
        v = np.maximum(v + delta, 0.0)
        if np.max(np.abs(delta)) <= tol * (1.0 + np.max(v)):
            return v, True
    return v, False


def _single_step(u, dt, cfg, net):
    h = cfg.grid.h
    f = regularised_rates(net, u, cfg.eps) if net is not None else 0.0
    d = np.asarray(cfg.diffusion.d)
    m = np.asarray(cfg.diffusion.m)
    if cfg.scheme == "explicit":
        lap = _neumann_laplacian(np.maximum(u, 0.0) ** m[:, None])
        new = u + dt * (d[:, None] / h**2 * lap + f)
        return np.maximum(new, 0.0), True
    rhs = u + dt * f
    new = np.empty_like(u)
    for i in range(u.shape[0]):
        new[i], ok = _implicit_species(rhs[i], u[i], dt * d[i] / h**2, m[i],
                                       cfg.newton_tol, cfg.newton_max_iter)
        if not ok:
            return u, False
    return new, True


def step(state, cfg: SimConfig, net: Optional[ReactionNetwork], dt: Optional[float] = None,
         _depth: int = 0) -> np.ndarray:
    """Advance the field by one time step (``cfg.dt`` unless ``dt`` is given).

    A failed Newton solve is retried as two half steps, at most ten
    halvings deep.
    """
    dt = cfg.dt if dt is None else dt
    u = np.asarray(state, dtype=float)
    new, ok = _single_step(u, dt, cfg, net)
    if ok and not np.all(np.isfinite(new)):
        raise SolverError("non-finite values in the solution")
    if ok:
        return new
    if _depth >= 10:
        raise SolverError("Newton iteration failed after 10 time-step halvings")
    half = step(u, cfg, net, dt / 2, _depth + 1)
    return step(half, cfg, net, dt / 2, _depth + 1)


def _equilibrium_vector(u0, equil, h, length):
    if equil is None:
        return u0.mean(axis=1)
    return np.asarray(getattr(equil, "u_inf", equil), dtype=float)


def run(initial, cfg: SimConfig, net: Optional[ReactionNetwork] = None, equil=None, basis=None):
    """Integrate to ``cfg.t_end`` and record ``(t, E, D, masses)`` every ``trace_every`` steps.

    ``equil`` is the equilibrium that ``E`` is measured against; without a
    network it defaults to the per-species spatial means (pure diffusion
    conserves each species). ``basis`` defaults to the identity when no
    network is given. Returns ``(trace, final_field)``.
    """
    u = np.array(initial, dtype=float)
    if u.ndim != 2 or u.shape[1] != cfg.grid.N:
        raise ValueError("initial field must have shape (I, N)")
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise ValueError("initial field must be finite and non-negative")
    if len(cfg.diffusion.d) != u.shape[0]:
        raise ValueError("DiffusionSpec does not match the number of species")
    h = cfg.grid.h
    if basis is None and net is not None:
        from .equilibrium import conservation_basis
        basis = conservation_basis(net)
    Q = basis.Q if basis is not None else np.eye(u.shape[0])
    u_inf = _equilibrium_vector(u, equil, h, cfg.grid.length)

    if cfg.scheme == "explicit":
        dt_max = stability_bound(u, cfg)
        if cfg.dt > dt_max:
            raise StabilityError(cfg.dt, dt_max)

    trace = EntropyTrace()

    def record(t, u):
        E = relative_entropy(u, u_inf, h)
        D = entropy_dissipation(u, u_inf, net, cfg.diffusion, h, cfg.eps)
        trace.append(t, E, D, Q @ (h * u.sum(axis=1)), u.mean(axis=1),
                     u if cfg.keep_fields else None)

    record(0.0, u)
    n_full = int(math.floor(cfg.t_end / cfg.dt + 1e-9))
    remainder = cfg.t_end - n_full * cfg.dt
    steps = [cfg.dt] * n_full
    if remainder > 1e-12 * max(cfg.dt, 1.0):
        steps.append(remainder)
    t = 0.0
    for k, dt in enumerate(steps, start=1):
        u = step(u, cfg, net, dt)
        t = cfg.t_end if k == len(steps) else k * cfg.dt
        if k % cfg.trace_every == 0 or k == len(steps):
            if cfg.scheme == "explicit" and cfg.dt > stability_bound(u, cfg):
                raise StabilityError(cfg.dt, stability_bound(u, cfg))
            record(t, u)
    return trace, u


def initial_profile(spec, grid: Grid, rng=None) -> np.ndarray:
    """One species' initial profile from a config entry.

    ``{"type": "constant", "value": a}``;
    ``{"type": "step", "left": a, "right": b, "at": x0}``;
    ``{"type": "sinusoid", "offset": a, "amplitude": b, "mode": k}`` giving
    ``a + b cos(k pi x / L)``;
    ``{"type": "random", "low": a, "high": b}`` (needs ``rng``).
    A bare number is a constant.
    """
    x = grid.x
    if isinstance(spec, (int, float)):
        return np.full(grid.N, float(spec))
    kind = spec.get("type", "constant")
    if kind == "constant":
        u = np.full(grid.N, float(spec["value"]))
    elif kind == "step":
        at = float(spec.get("at", 0.5 * grid.length))
        u = np.where(x < at, float(spec["left"]), float(spec["right"]))
    elif kind == "sinusoid":
        k = float(spec.get("mode", 1))
        u = float(spec["offset"]) + float(spec["amplitude"]) * np.cos(k * np.pi * x / grid.length)
    elif kind == "random":
        if rng is None:
            raise ValueError("random initial data needs a seeded generator")
        u = rng.uniform(float(spec.get("low", 0.5)), float(spec.get("high", 1.5)), grid.N)
    else:
        raise ValueError(f"unknown initial profile type {kind!r}")
    if np.any(u < 0):
        raise ValueError("initial profile must be non-negative")
    return u
