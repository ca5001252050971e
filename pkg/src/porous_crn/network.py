"""Reaction networks: parsing, stoichiometry and mass-action kinetics.

A network is written one reaction per line::

    # reversible isomerisation
    A <-> B, kf=1, kb=2
    2A + B -> C, k=0.5
    0 -> A, k=1

Stoichiometric coefficients are kept as exact :class:`fractions.Fraction`
values so that kernel computations downstream are exact; rate constants are
floats.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from functools import cached_property

import numpy as np

__all__ = [
    "ParseError",
    "Reaction",
    "ReactionNetwork",
    "DiffusionSpec",
    "EntropySpec",
    "parse_network",
    "load_network",
    "network_from_json",
    "network_to_json",
    "wegscheider_matrix",
    "mass_action_rates",
    "regularised_rates",
    "entropy_inequality_residual",
    "entropy_inequality_constant",
    "growth_degree",
    "growth_constant",
    "psi",
]


class ParseError(ValueError):
    """Syntax or semantic error in a network description."""

    def __init__(self, message, line=None, column=None, token=None):
        self.line = line
        self.column = column
        self.token = token
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message + (f" (near {token!r})" if token else ""))


Complex = tuple  # tuple of Fraction, length I


def _check_coefficient(c: Fraction) -> None:
    if c != 0 and c < 1:
        raise ValueError(f"coefficient {c} outside {{0}} U [1, inf)")


@dataclass(frozen=True)
class Reaction:
    reactant: Complex
    product: Complex
    rate: float

    def __post_init__(self):
        if len(self.reactant) != len(self.product):
            raise ValueError("reactant and product complexes differ in length")
        for c in (*self.reactant, *self.product):
            _check_coefficient(Fraction(c))
        if not self.rate > 0:
            raise ValueError(f"rate constant must be positive, got {self.rate}")
        if tuple(self.reactant) == tuple(self.product):
            raise ValueError("reactant and product complexes coincide")


@dataclass(frozen=True)
class ReactionNetwork:
    """Species names plus mass-action reactions ``y_r -> y'_r`` with rates ``k_r``."""

    species: tuple
    reactions: tuple

    def __post_init__(self):
        if len(set(self.species)) != len(self.species):
            raise ValueError("species names must be unique")
        if len(self.reactions) < 1:
            raise ValueError("a network needs at least one reaction")
        n = len(self.species)
        for r in self.reactions:
            if len(r.reactant) != n:
                raise ValueError("complex length does not match number of species")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @cached_property
    def reactant_matrix(self) -> np.ndarray:
        """R x I array of reactant coefficients ``y_r``."""
        return np.array([[float(c) for c in r.reactant] for r in self.reactions])

    @cached_property
    def product_matrix(self) -> np.ndarray:
        return np.array([[float(c) for c in r.product] for r in self.reactions])

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.reactions], dtype=float)

    @cached_property
    def complexes(self) -> list:
        """Distinct complexes in order of first appearance."""
        seen = {}
        for r in self.reactions:
            for y in (r.reactant, r.product):
                seen.setdefault(tuple(y), None)
        return list(seen)

    def index(self, name: str) -> int:
        return self.species.index(name)

    def __str__(self):
        lines = []
        for r in self.reactions:
            lines.append(f"{_format_complex(r.reactant, self.species)} -> "
                         f"{_format_complex(r.product, self.species)}, k={r.rate!r}")
        return "\n".join(lines)


def _format_complex(y, species) -> str:
    terms = []
    for c, s in zip(y, species):
        if c == 0:
            continue
        terms.append(s if c == 1 else f"{_format_coefficient(Fraction(c))}{s}")
    return " + ".join(terms) if terms else "0"


def _format_coefficient(c: Fraction) -> str:
    """Exact decimal when the fraction terminates, else the nearest float."""
    if c.denominator == 1:
        return str(c.numerator)
    q = c.denominator
    for p in (2, 5):
        while q % p == 0:
            q //= p
    if q == 1:
        return str(Decimal(c.numerator) / Decimal(c.denominator))
    return repr(float(c))


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusivities ``d``, exponents ``m`` and the solution regime they target.

    The regimes follow the existence theory: ``renormalised`` needs every
    ``m_i < 2``; ``weak`` needs ``m_i >= max(mu - 1, 1)``; ``bounded`` needs
    ``min m_i > max(mu - 1, 1)`` (one space dimension), where ``mu`` is the
    maximal complex order of the network.
    """

    d: tuple
    m: tuple
    regime: str = "renormalised"

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "m", tuple(float(x) for x in self.m))
        if len(self.d) != len(self.m):
            raise ValueError("d and m must have equal length")
        if any(not x > 0 for x in self.d):
            raise ValueError("diffusivities must be positive")
        if any(not x > 0 for x in self.m):
            raise ValueError("diffusion exponents must be positive")
        if self.regime not in ("renormalised", "weak", "bounded"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "renormalised" and any(x >= 2 for x in self.m):
            raise ValueError("renormalised regime requires all m_i < 2")

    def check_regime(self, net: ReactionNetwork) -> None:
        """Raise ``ValueError`` if ``m`` is incompatible with the regime for ``net``."""
        if len(self.m) != net.n_species:
            raise ValueError("DiffusionSpec does not match the number of species")
        mu = growth_degree(net)
        floor = max(mu - 1.0, 1.0)
        if self.regime == "weak" and min(self.m) < floor:
            raise ValueError(f"weak regime requires m_i >= {floor}")
        if self.regime == "bounded" and not min(self.m) > floor:
            raise ValueError(f"bounded regime requires min m_i > {floor}")


@dataclass(frozen=True)
class EntropySpec:
    mu: tuple
    source: str = "user-supplied"

    @classmethod
    def from_equilibrium(cls, u_inf) -> "EntropySpec":
        u_inf = np.asarray(getattr(u_inf, "u_inf", u_inf), dtype=float)
        if np.any(u_inf <= 0):
            raise ValueError("equilibrium must be strictly positive")
        return cls(mu=tuple(-np.log(u_inf)), source="from-equilibrium")


# --------------------------------------------------------------------------
# DSL

_TOKEN = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<rev><->)
  | (?P<fwd>->)
  | (?P<plus>\+)
  | (?P<comma>,)
  | (?P<eq>=)
  | (?P<colon>:)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)


def _tokenize(line: str, lineno: int):
    pos = 0
    out = []
    while pos < len(line):
        mt = _TOKEN.match(line, pos)
        if mt is None:
            raise ParseError("unexpected character", lineno, pos + 1, line[pos])
        kind = mt.lastgroup
        if kind != "ws":
            out.append((kind, mt.group(), pos + 1))
        pos = mt.end()
    out.append(("end", "", len(line) + 1))
    return out


class _LineParser:
    def __init__(self, tokens, lineno):
        self.tokens = tokens
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None):
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            self.error(f"expected {kind}", tok)
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, self.lineno, tok[2], tok[1] or "end of line")

    def sum(self):
        kind, text, _ = self.peek()
        if kind == "num" and Fraction(text) == 0 and self.tokens[self.i + 1][0] != "ident":
            self.take()
            return {}
        terms = {}
        while True:
            coeff, name = self.term()
            terms[name] = terms.get(name, Fraction(0)) + coeff
            if self.peek()[0] != "plus":
                return terms
            self.take()

    def term(self):
        tok = self.peek()
        coeff = Fraction(1)
        if tok[0] == "num":
            self.take()
            coeff = Fraction(tok[1])
            if coeff != 0 and coeff < 1:
                self.error(f"coefficient {tok[1]} outside {{0}} U [1, inf)", tok)
        name = self.take("ident")[1]
        return coeff, name

    def rate(self, key):
        tok = self.take("ident")
        if tok[1] != key:
            self.error(f"expected '{key}='", tok)
        self.take("eq")
        tok = self.take("num")
        value = float(tok[1])
        if not value > 0:
            self.error("rate constant must be positive", tok)
        return value


def parse_network(text: str) -> ReactionNetwork:
    """Parse the reaction DSL into a :class:`ReactionNetwork`.

    Species are indexed in order of first appearance unless a
    ``species: A, B, ...`` line fixes the order first. A reversible arrow
    ``<->`` produces a forward and a backward reaction.
    """
    species: list = []
    declared = False
    raw = []  # (reactant dict, product dict, rate)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = _tokenize(line, lineno)
        p = _LineParser(tokens, lineno)
        if tokens[0][:2] == ("ident", "species") and tokens[1][0] == "colon":
            if declared or raw:
                p.error("species declaration must come first and only once", tokens[0])
            declared = True
            p.take()
            p.take()
            while True:
                tok = p.take("ident")
                if tok[1] in species:
                    raise ParseError("duplicate species declaration", lineno, tok[2], tok[1])
                species.append(tok[1])
                if p.peek()[0] == "end":
                    break
                p.take("comma")
            continue
        lhs = p.sum()
        arrow = p.peek()
        if arrow[0] not in ("fwd", "rev"):
            p.error("expected '->' or '<->'")
        p.take()
        rhs = p.sum()
        p.take("comma")
        if arrow[0] == "fwd":
            k = p.rate("k")
            rates = [(lhs, rhs, k)]
        else:
            kf = p.rate("kf")
            p.take("comma")
            kb = p.rate("kb")
            rates = [(lhs, rhs, kf), (rhs, lhs, kb)]
        if p.peek()[0] != "end":
            p.error("trailing input")
        for side in (lhs, rhs):
            for name in side:
                if name not in species:
                    if declared:
                        p.error(f"undeclared species {name!r}", arrow)
                    species.append(name)
        if lhs == rhs:
            p.error("reactant and product complexes coincide", arrow)
        raw.extend(rates)
    if not raw:
        raise ParseError("no reactions")

    def vec(side):
        return tuple(side.get(s, Fraction(0)) for s in species)

    reactions = tuple(Reaction(vec(a), vec(b), k) for a, b, k in raw)
    return ReactionNetwork(tuple(species), reactions)


def _coeff_to_json(c: Fraction):
    return int(c) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def network_to_json(net: ReactionNetwork) -> dict:
    return {
        "species": list(net.species),
        "reactions": [
            {"y": [_coeff_to_json(c) for c in r.reactant],
             "yp": [_coeff_to_json(c) for c in r.product],
             "k": r.rate}
            for r in net.reactions
        ],
    }


def network_from_json(obj) -> ReactionNetwork:
    if isinstance(obj, str):
        obj = json.loads(obj)

    def frac(x):
        return Fraction(x) if not isinstance(x, float) else Fraction(str(x))

    reactions = tuple(
        Reaction(tuple(frac(c) for c in r["y"]), tuple(frac(c) for c in r["yp"]), float(r["k"]))
        for r in obj["reactions"]
    )
    return ReactionNetwork(tuple(obj["species"]), reactions)


def load_network(path) -> ReactionNetwork:
    """Read a network file; JSON if it looks like JSON, the DSL otherwise."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json") or text.lstrip().startswith("{"):
        return network_from_json(text)
    return parse_network(text)


# --------------------------------------------------------------------------
# stoichiometry and kinetics

def wegscheider_matrix(net: ReactionNetwork) -> np.ndarray:
    """R x I matrix whose row ``r`` is ``y'_r - y_r``."""
    return net.product_matrix - net.reactant_matrix


def exact_wegscheider_matrix(net: ReactionNetwork) -> list:
    return [[b - a for a, b in zip(r.reactant, r.product)] for r in net.reactions]


def monomials(net: ReactionNetwork, u: np.ndarray, which: str = "reactant") -> np.ndarray:
    """``u^{y_r}`` for every reaction; ``u`` is (I,) or (I, N). ``0**0 == 1``."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    Y = net.reactant_matrix if which == "reactant" else net.product_matrix
    Y = Y.reshape(Y.shape + (1,) * (u.ndim - 1))
    return np.prod(u[None] ** Y, axis=1)


def mass_action_rates(net: ReactionNetwork, u) -> np.ndarray:
    """``f_i(u) = sum_r k_r u^{y_r} (y'_{r,i} - y_{r,i})``.

    Negative entries of ``u`` are clamped to zero before evaluation.
    Works on a single state of shape (I,) or a field of shape (I, N).
    """
    u = np.asarray(u, dtype=float)
    flux = net.rates.reshape((-1,) + (1,) * (u.ndim - 1)) * monomials(net, u)
    return np.tensordot(wegscheider_matrix(net).T, flux, axes=1)


def regularised_rates(net: ReactionNetwork, u, eps: float) -> np.ndarray:
    """``f(u) / (1 + eps * |f(u)|_1)``, evaluated pointwise for fields."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    f = mass_action_rates(net, u)
    if eps == 0:
        return f
    return f / (1.0 + eps * np.abs(f).sum(axis=0))


def psi(x, y):
    """Bregman divergence ``x log(x/y) - x + y`` with ``psi(0, y) = y``.

    ``y`` is floored at 1e-300. Evaluated as ``y * phi(x / y)`` with a
    ``log1p`` form of ``phi(z) = z log z - z + 1`` near ``z = 1`` so that values near
    ``x == y`` keep full relative precision.
    """
    x = np.asarray(x, dtype=float)
    y = np.maximum(np.asarray(y, dtype=float), 1e-300)
    z = x / y
    delta = z - 1.0
    near = np.abs(delta) < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        log_z = np.where(near, np.log1p(np.where(near, delta, 0.0)), np.log(np.where(z > 0, z, 1.0)))
        phi = np.where(z > 0, z * log_z - delta, 1.0)
    return y * phi


def entropy_inequality_residual(net: ReactionNetwork, spec: EntropySpec, u) -> float:
    """``sum_i f_i(u) (log u_i + mu_i)`` for a strictly positive state."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("entropy inequality needs a strictly positive state")
    return float(np.dot(mass_action_rates(net, u), np.log(u) + np.asarray(spec.mu)))


def entropy_inequality_constant(net: ReactionNetwork, spec: EntropySpec, samples) -> float:
    """Smallest ``C >= 0`` with ``sum f_i (log u_i + mu_i) <= C sum (1 + u_i log u_i)`` on ``samples``."""
    best = 0.0
    for u in samples:
        u = np.asarray(u, dtype=float)
        lhs = entropy_inequality_residual(net, spec, u)
        rhs = np.sum(1.0 + u * np.log(u))
        best = max(best, lhs / rhs)
    return best


def growth_degree(net: ReactionNetwork) -> float:
    """Maximal complex order ``max_r max(|y_r|, |y'_r|)``."""
    return float(max(max(sum(r.reactant), sum(r.product)) for r in net.reactions))


def growth_constant(net: ReactionNetwork) -> float:
    """A constant ``C`` with ``|f_i(u)| <= C (1 + |u|_inf^mu)`` on the whole orthant.

    Uses ``u^{y_r} <= |u|_inf^{|y_r|} <= 1 + |u|_inf^mu``.
    """
    W = np.abs(wegscheider_matrix(net))
    return float(np.max(net.rates @ W))
