from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porous_crn.equilibrium import (
    ConservationBasis,
    EquilibriumError,
    check_complex_balance,
    complex_balance_residuals,
    conservation_basis,
    detect_boundary_equilibria,
    face_meets_class,
    solve_equilibrium,
)
from porous_crn.network import (
    Reaction,
    ReactionNetwork,
    exact_wegscheider_matrix,
    mass_action_rates,
    parse_network,
)

from oracles import complex_balance_loop, equilibrium_bounded_ls, kernel_rank

AB = "A <-> B, kf=1, kb=1"
ABC = "A + B <-> C, kf=1, kb=1"
CYCLE = "A -> B, k=1\nB -> C, k=1\nC -> A, k=1"
CORPUS = {
    "ab": AB,
    "ab21": "A <-> B, kf=2, kb=1",
    "abc": ABC,
    "cycle": CYCLE,
    "cycle123": "A -> B, k=1\nB -> C, k=2\nC -> A, k=3",
    "dimer": "2A <-> B, kf=3, kb=0.5",
    "triangle": "A + B -> C, k=1\nC -> 2A, k=2\n2A -> A + B, k=0.5",
    "open": "0 <-> A, kf=1, kb=2\nA <-> B, kf=1, kb=1",
}


def _triples(net):
    return [(net.reactant_matrix[r], net.product_matrix[r], net.rates[r]) for r in range(net.n_reactions)]


# --------------------------------------------------------------------------
# conservation laws

def test_basis_ab():
    b = conservation_basis(parse_network(AB))
    assert b.m == 1
    assert b.rows == ((Fraction(1), Fraction(1)),)


def test_basis_abc():
    b = conservation_basis(parse_network(ABC))
    assert b.m == 2
    np.testing.assert_array_equal(b.Q, [[1, 0, 1], [0, 1, 1]])


def test_basis_cycle():
    b = conservation_basis(parse_network(CYCLE))
    np.testing.assert_array_equal(b.Q, [[1, 1, 1]])


def test_basis_dimer_and_open():
    np.testing.assert_array_equal(conservation_basis(parse_network("2A <-> B, kf=1, kb=1")).Q, [[1, 2]])
    b = conservation_basis(parse_network(CORPUS["open"]))
    assert b.m == 0
    assert b.Q.shape == (0, 2)


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_basis_exact_annihilation(name):
    net = parse_network(CORPUS[name])
    b = conservation_basis(net)
    for q in b.rows:
        for w in exact_wegscheider_matrix(net):
            assert sum(a * c for a, c in zip(q, w)) == 0
        assert all(c.denominator == 1 for c in q)
        lead = next(c for c in q if c != 0)
        assert lead > 0
    assert b.m == kernel_rank(exact_wegscheider_matrix(net))
    if b.m:
        assert np.linalg.matrix_rank(b.Q) == b.m


@st.composite
def random_networks(draw):
    I = draw(st.integers(1, 5))
    R = draw(st.integers(1, 5))
    coeff = st.sampled_from([0, 0, 1, 1, 2, 3, Fraction(3, 2)])
    reactions = []
    for _ in range(R):
        y = tuple(Fraction(draw(coeff)) for _ in range(I))
        yp = tuple(Fraction(draw(coeff)) for _ in range(I))
        if y == yp:
            yp = yp[:-1] + (yp[-1] + 1,)
        reactions.append(Reaction(y, yp, 1.0))
    return ReactionNetwork(tuple(f"S{i}" for i in range(I)), tuple(reactions))


@given(random_networks())
@settings(max_examples=100, deadline=None)
def test_basis_property(net):
    b = conservation_basis(net)
    W = exact_wegscheider_matrix(net)
    for q in b.rows:
        for w in W:
            assert sum(a * c for a, c in zip(q, w)) == 0
    assert b.m == kernel_rank(W)


def test_masses():
    b = ConservationBasis(((Fraction(1), Fraction(1)),), 2)
    u = np.array([[1.0, 3.0], [2.0, 2.0]])
    np.testing.assert_allclose(b.masses(u, 0.5), [4.0])
    np.testing.assert_allclose(b.masses(np.array([1.0, 2.0])), [3.0])


# --------------------------------------------------------------------------
# complex balance

def test_complex_balance_examples():
    assert check_complex_balance(parse_network(AB), [1.0, 1.0]) == 0.0
    for c in (0.3, 1.0, 7.0):
        assert check_complex_balance(parse_network(CYCLE), [c, c, c]) == pytest.approx(0.0, abs=1e-15)
    assert check_complex_balance(parse_network("A <-> B, kf=1, kb=2"), [1.0, 1.0]) == 1.0


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_complex_balance_matches_loop(name):
    net = parse_network(CORPUS[name])
    rng = np.random.default_rng(0)
    for _ in range(30):
        v = rng.uniform(0.1, 3, net.n_species)
        assert check_complex_balance(net, v) == pytest.approx(complex_balance_loop(_triples(net), v), rel=1e-12)
    assert complex_balance_residuals(net, v).shape == (len(net.complexes),)


# --------------------------------------------------------------------------
# positive equilibrium

@pytest.mark.parametrize(
    "text, M, expected",
    [
        (AB, [2.0], [1.0, 1.0]),
        (CYCLE, [3.0], [1.0, 1.0, 1.0]),
        ("A <-> B, kf=2, kb=1", [3.0], [1.0, 2.0]),
        # 2A <-> B: 3 a^2 = 0.5 b, a + 2b = 2  =>  12 a^2 + a - 2 = 0
        ("2A <-> B, kf=3, kb=0.5", [2.0], [(-1 + 97**0.5) / 24, (2 - (-1 + 97**0.5) / 24) / 2]),
        # cycle k=(1,2,3): a = 2b = 3c, a + b + c = 3
        ("A -> B, k=1\nB -> C, k=2\nC -> A, k=3", [3.0], [18 / 11, 9 / 11, 6 / 11]),
    ],
)
def test_equilibrium_closed_forms(text, M, expected):
    net = parse_network(text)
    eq = solve_equilibrium(net, conservation_basis(net), M)
    np.testing.assert_allclose(eq.u_inf, expected, rtol=1e-10)
    assert eq.cb_residual <= 1e-10
    assert eq.class_residual <= 1e-10


def test_equilibrium_abc_closed_form():
    # a b = c, a + c = 2, b + c = 3  =>  c^2 - 6c + 6 = 0, smaller root
    net = parse_network(ABC)
    eq = solve_equilibrium(net, conservation_basis(net), [2.0, 3.0])
    c = 3 - 3**0.5
    np.testing.assert_allclose(eq.u_inf, [2 - c, 3 - c, c], rtol=1e-10)


def test_domain_volume_scales_masses():
    net = parse_network(AB)
    eq = solve_equilibrium(net, conservation_basis(net), [4.0], domain_volume=2.0)
    np.testing.assert_allclose(eq.u_inf, [1.0, 1.0], rtol=1e-12)
    np.testing.assert_allclose(eq.mass, [4.0])


def test_open_network_without_conservation():
    net = parse_network(CORPUS["open"])
    eq = solve_equilibrium(net, conservation_basis(net), [])
    np.testing.assert_allclose(eq.u_inf, [0.5, 0.5], rtol=1e-10)


@pytest.mark.parametrize("name", ["ab", "ab21", "abc", "cycle", "cycle123", "dimer", "triangle"])
def test_equilibrium_against_bounded_least_squares(name):
    net = parse_network(CORPUS[name])
    b = conservation_basis(net)
    M = np.arange(1, b.m + 1) * 1.7
    eq = solve_equilibrium(net, b, M)
    ref = equilibrium_bounded_ls(_triples(net), b.Q, M, np.ones(net.n_species))
    np.testing.assert_allclose(eq.u_inf, ref, rtol=1e-7)


@pytest.mark.parametrize("name", ["ab", "ab21", "abc", "cycle", "cycle123", "dimer", "triangle"])
def test_equilibrium_properties(name):
    net = parse_network(CORPUS[name])
    b = conservation_basis(net)
    M = np.full(b.m, 2.5)
    eq = solve_equilibrium(net, b, M)
    assert np.all(eq.u_inf > 0)
    assert check_complex_balance(net, eq.u_inf) <= 1e-10
    assert np.max(np.abs(mass_action_rates(net, eq.u_inf))) <= 1e-10
    assert np.max(np.abs(b.Q @ eq.u_inf - M)) <= 1e-10


@pytest.mark.parametrize("name", ["ab21", "abc", "cycle123", "dimer", "triangle"])
def test_uniqueness_probe(name):
    net = parse_network(CORPUS[name])
    b = conservation_basis(net)
    M = np.full(b.m, 1.3)
    ref = solve_equilibrium(net, b, M).u_inf
    rng = np.random.default_rng(11)
    for _ in range(32):
        eq = solve_equilibrium(net, b, M, w0=rng.uniform(-4, 4, net.n_species))
        np.testing.assert_allclose(eq.u_inf, ref, rtol=1e-8)


@given(st.floats(0.05, 50.0), st.floats(0.05, 50.0), st.floats(0.1, 20.0))
@settings(max_examples=60, deadline=None)
def test_two_species_detailed_balance(kf, kb, M):
    net = parse_network(f"A <-> B, kf={kf!r}, kb={kb!r}")
    eq = solve_equilibrium(net, conservation_basis(net), [M])
    np.testing.assert_allclose(eq.u_inf, [M * kb / (kf + kb), M * kf / (kf + kb)], rtol=1e-9)


def test_infeasible_mass():
    net = parse_network(AB)
    b = conservation_basis(net)
    with pytest.raises(EquilibriumError) as info:
        solve_equilibrium(net, b, [-1.0])
    assert info.value.u is not None
    with pytest.raises(ValueError):
        solve_equilibrium(net, b, [1.0, 2.0])


def test_not_complex_balanced_network_fails():
    net = parse_network("A + B -> 2B, k=1\nB -> A, k=1")
    with pytest.raises(EquilibriumError):
        solve_equilibrium(net, conservation_basis(net), [3.0])


def test_equilibrium_json():
    net = parse_network(AB)
    data = solve_equilibrium(net, conservation_basis(net), [2.0]).to_json()
    assert set(data) == {"u_inf", "mass", "cb_residual", "class_residual", "iterations"}


# --------------------------------------------------------------------------
# boundary equilibria

def _supports(reports):
    return sorted(tuple(r.support) for r in reports)


def test_boundary_ab_only_origin():
    reports = detect_boundary_equilibria(parse_network(AB))
    assert _supports(reports) == [()]
    np.testing.assert_array_equal(reports[0].point, [0.0, 0.0])


def test_boundary_cycle_only_origin():
    assert _supports(detect_boundary_equilibria(parse_network(CYCLE))) == [()]


def test_boundary_abc():
    net = parse_network(ABC)
    b = conservation_basis(net)
    reports = detect_boundary_equilibria(net, b)
    assert _supports(reports) == [(), (0,), (1,)]
    for r in reports:
        assert check_complex_balance(net, r.point) <= 1e-10
        assert np.any(r.point == 0)
        assert not face_meets_class(r, b, [1.0, 1.0])


def test_boundary_autocatalytic():
    # with only A present no reaction fires, so every (a, 0) is balanced;
    # the face {B} is excluded because B -> A leaves it
    net = parse_network("A + B -> 2B, k=1\nB -> A, k=1")
    reports = detect_boundary_equilibria(net)
    assert _supports(reports) == [(), (0,)]


def test_boundary_open_network():
    net = parse_network(CORPUS["open"])
    reports = detect_boundary_equilibria(net, conservation_basis(net))
    assert reports == []


def test_face_meets_class_positive_case():
    net = parse_network("A + B -> 2B, k=1\nB -> A, k=1")
    b = conservation_basis(net)
    rep = [r for r in detect_boundary_equilibria(net, b) if r.support == (0,)][0]
    assert face_meets_class(rep, b, [3.0])
    assert not face_meets_class(rep, b, [-1.0])


def test_boundary_dimension_guard():
    species = tuple(f"S{i}" for i in range(17))
    y = tuple(Fraction(1 if i == 0 else 0) for i in range(17))
    yp = tuple(Fraction(1 if i == 1 else 0) for i in range(17))
    with pytest.raises(ValueError):
        detect_boundary_equilibria(ReactionNetwork(species, (Reaction(y, yp, 1.0),)))


def test_boundary_report_json():
    rep = detect_boundary_equilibria(parse_network(ABC), conservation_basis(parse_network(ABC)))[1]
    data = rep.to_json()
    assert data["support"] == [0]
    assert data["in_class_of"] is not None
