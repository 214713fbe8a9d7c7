import numpy as np
import pytest

from utils.dist_algebra import (
    DeltaPart, DistA, add, antiderivative, canonicalize, derivative, dirac, dist_order, dual_smooth_delta,
    equals, from_json, heaviside, lateral_piece, linear_combination, make_dist, pair_with_test, refine, restrict,
    scale, sing_supp, smooth, star, sub, to_json, zero,
)
from utils.smooth_fn import evaluate, parse_expr

H = heaviside(0.0)
H_MINUS = heaviside(0.0, "left")
DELTA = dirac(0.0)
DELTA1 = dirac(0.0, 1)


def deltas(F):
    return F.deltas.as_dict()


@pytest.mark.parametrize('F, G, expected', [
    (H, DELTA, {}),
    (H_MINUS, DELTA, {(0.0, 0): 1.0}),
    (DELTA, H, {(0.0, 0): 1.0}),
    (DELTA, H_MINUS, {}),
    (DELTA, DELTA, {}),
    (H, DELTA1, {}),
    (DELTA1, H, {(0.0, 1): 1.0}),
    (smooth("x"), DELTA1, {(0.0, 0): -1.0}),
    (smooth("x"), DELTA, {}),
    (smooth("exp(x)"), DELTA, {(0.0, 0): 1.0}),
])
def test_product_identities(F, G, expected):
    P = star(F, G)
    assert deltas(P) == expected
    for piece in P.pieces:
        np.testing.assert_allclose(evaluate(piece, np.linspace(-1, 1, 5)), 0.0)


def test_product_of_regular_parts():
    P = star(H, make_dist([], ["x"]))
    assert evaluate(lateral_piece(P, 0.5, "right"), 0.5) == 0.5
    assert evaluate(lateral_piece(P, -0.5, "left"), -0.5) == 0.0
    assert equals(star(H, H), H)
    assert equals(star(H, H_MINUS), zero())


def test_product_is_not_commutative():
    assert not equals(star(H, DELTA), star(DELTA, H))


def test_dual_smooth_delta_sign_convention():
    part = dual_smooth_delta(parse_expr("x^2 + 3*x + 2"), 0.0, 2)
    # g delta'' = g(0) delta'' - 2 g'(0) delta' + g''(0) delta
    assert part.as_dict() == pytest.approx({(0.0, 2): 2.0, (0.0, 1): -6.0, (0.0, 0): 2.0})


def test_derivative_of_heaviside_and_delta():
    assert deltas(derivative(H)) == {(0.0, 0): 1.0}
    assert deltas(derivative(H_MINUS)) == {(0.0, 0): -1.0}
    assert deltas(derivative(DELTA, 2)) == {(0.0, 2): 1.0}
    F = make_dist([1.0], ["x^2", "3*x"])
    dF = derivative(F)
    assert deltas(dF) == pytest.approx({(1.0, 0): 2.0})
    assert evaluate(lateral_piece(dF, 0.0, "right"), 0.0) == 0.0
    assert evaluate(lateral_piece(dF, 2.0, "right"), 2.0) == 3.0


def test_derivative_negative_order():
    with pytest.raises(ValueError):
        derivative(H, -1)


def test_antiderivative_inverts_derivative():
    F = add(make_dist([0.0], ["cos(x)", "2"]), dirac(0.0, 1, 3.0))
    G = antiderivative(F)
    assert equals(derivative(G), F, tol=1e-8, domain=(-2.0, 2.0))


def test_linear_structure():
    F = linear_combination([(2.0, H), (-1.0, DELTA), (0.5, smooth("x"))])
    assert deltas(F) == {(0.0, 0): -1.0}
    assert equals(sub(F, F), zero())
    assert equals(add(scale(2.0, H), scale(-2.0, H)), zero())
    assert equals(-H + H, zero())
    assert deltas(2.0 * DELTA) == {(0.0, 0): 2.0}


@pytest.mark.parametrize('F, order', [
    (zero(), 0),
    (H, 0),
    (smooth("sin(x)"), 0),
    (DELTA, 1),
    (dirac(0.0, 3, 0.5), 4),
    (add(H, dirac(1.0, 1)), 2),
])
def test_dist_order(F, order):
    assert dist_order(F) == order


def test_sing_supp():
    F = add(make_dist([-1.0, 0.0, 1.0], ["x", "x", "x^2", "x^2"]), dirac(2.0))
    assert sing_supp(F) == [0.0, 2.0]
    smooth_join = make_dist([0.0], ["exp(x)", "exp(x)"])
    assert sing_supp(smooth_join) == []


def test_restrict_drops_outside_deltas():
    F = add(dirac(-2.0), add(dirac(0.5, 1), make_dist([1.0], ["0", "1"])))
    R = restrict(F, (-1.0, 2.0))
    assert R.deltas.as_dict() == {(0.5, 1): 1.0}
    assert 1.0 in R.breakpoints


def test_pair_with_test():
    t = parse_expr("exp(-x^2)")
    support = (-6.0, 6.0)
    np.testing.assert_almost_equal(pair_with_test(DELTA, t, support), 1.0, 12)
    np.testing.assert_almost_equal(pair_with_test(DELTA1, parse_expr("x*exp(-x^2)"), support), -1.0, 12)
    np.testing.assert_almost_equal(pair_with_test(H, t, support), np.sqrt(np.pi) / 2, 8)


def test_smooth_restriction_is_pointwise_product():
    F = make_dist([0.0], ["1", "x"])
    G = smooth("exp(x)")
    P = star(F, G)
    xs = np.linspace(0.1, 1.0, 7)
    np.testing.assert_allclose(evaluate(lateral_piece(P, 0.5, "right"), xs), xs * np.exp(xs))


POINTS = (-1.0, 0.0, 1.0)


def random_piece(rng):
    kind = rng.integers(3)
    a, b, c, d = (f"{v:.3f}" for v in rng.normal(size=4))
    if kind == 0:
        return f"{a} + {b}*x + {c}*x^2 + {d}*x^3"
    if kind == 1:
        return f"{a}*sin({b}*x + {c})"
    return f"{a}*exp({rng.uniform(-1, 1):.3f}*x)"


def random_element(rng, points=POINTS):
    """Two breakpoints (one if only one point is allowed), three random pieces, deltas of order <= 3"""
    bps = sorted(float(p) for p in rng.choice(points, size=min(2, len(points)), replace=False))
    pieces = [random_piece(rng) for _ in range(len(bps) + 1)]
    terms = {(float(rng.choice(points)), int(rng.integers(4))): float(rng.normal()) for _ in range(3)}
    return make_dist(bps, pieces, terms)


def dual_product(F, G):
    """Hormander product for disjoint singular supports, built from the pieces directly"""
    total = star(DistA(F.piecewise), DistA(G.piecewise))
    for x, k, c in F.deltas:
        total = add(total, scale(c, DistA(deltas=dual_smooth_delta(lateral_piece(G, x, "left"), x, k))))
    for x, k, c in G.deltas:
        total = add(total, scale(c, DistA(deltas=dual_smooth_delta(lateral_piece(F, x, "right"), x, k))))
    return total


@pytest.mark.slow
def test_algebra_properties_randomized():
    rng = np.random.default_rng(7)
    domain = (-2.0, 2.0)
    for _ in range(200):
        F, G, K = random_element(rng), random_element(rng), random_element(rng)
        assert equals(star(star(F, G), K), star(F, star(G, K)), tol=1e-9, domain=domain)
        assert equals(star(F, add(G, K)), add(star(F, G), star(F, K)), tol=1e-9, domain=domain)
        assert equals(star(add(F, G), K), add(star(F, K), star(G, K)), tol=1e-9, domain=domain)
        leibniz = add(star(derivative(F), G), star(F, derivative(G)))
        assert equals(derivative(star(F, G)), leibniz, tol=1e-9, domain=domain)


@pytest.mark.slow
def test_hormander_compatibility_randomized():
    rng = np.random.default_rng(11)
    domain = (-2.0, 2.0)
    for _ in range(200):
        F = random_element(rng, points=(-1.0,))
        G = random_element(rng, points=(1.0,))
        assert not set(sing_supp(F)) & set(sing_supp(G))
        expected = dual_product(F, G)
        assert equals(star(F, G), expected, tol=1e-9, domain=domain)
        assert equals(star(G, F), expected, tol=1e-9, domain=domain)


@pytest.mark.slow
def test_smooth_restriction_randomized():
    rng = np.random.default_rng(13)
    omega = (-0.5, 2.0)
    for _ in range(200):
        F = random_element(rng, points=(-1.0,))
        G = random_element(rng)
        f = lateral_piece(F, 0.0, "right")
        restricted = restrict(star(F, G), omega)
        assert equals(restricted, star(smooth(f), restrict(G, omega)), tol=1e-9, domain=omega)


def test_hormander_compatibility():
    # disjoint singular supports: the product is the classical one
    F = make_dist([-1.0], ["0", "1"])
    G = dirac(1.0, 1)
    P = star(F, G)
    assert deltas(P) == {(1.0, 1): 1.0}
    Q = star(G, F)
    assert deltas(Q) == {(1.0, 1): 1.0}


def test_json_roundtrip_and_errors():
    F = add(make_dist([0.0], ["x^2", "sin(x)"]), dirac(0.0, 2, complex(1.0, -2.0)))
    G = from_json(to_json(F))
    assert equals(F, G)
    assert equals(from_json(3), smooth(3.0))
    assert equals(from_json("x"), smooth("x"))
    with pytest.raises(ValueError, match="breakpoints"):
        from_json({"breakpoints": [1.0, 0.0], "pieces": ["0", "0", "0"]})
    with pytest.raises(ValueError, match="pieces"):
        from_json({"breakpoints": [0.0], "pieces": ["0"]})
    with pytest.raises(ValueError, match="delta"):
        from_json({"deltas": [{"order": 1}]})


def test_delta_part_helpers():
    part = DeltaPart.from_dict({(0.0, 1): 2.0, (1.0, 0): 0.0, (-1.0, 0): 1.0})
    assert part.points() == [-1.0, 0.0]
    assert part.max_order() == 1
    assert part.coefficient(0.0, 1) == 2.0
    assert part.coefficient(5.0, 0) == 0.0
    assert len(part) == 2 and bool(part)
    assert not DeltaPart()


def test_canonicalize_inserts_delta_points():
    raw = DistA(smooth("x").piecewise, DeltaPart(((1.0, 0, 2.0), (2.0, 0, 0.0))))
    F = canonicalize(raw)
    assert F.breakpoints == (1.0,)
    assert len(F.pieces) == 2
    assert deltas(F) == {(1.0, 0): 2.0}
    assert equals(F, raw)


def test_refine_shares_breakpoints():
    F, G = refine(H, dirac(1.0))
    assert F.breakpoints == G.breakpoints == (0.0, 1.0)
    assert equals(F, H)
    assert equals(G, dirac(1.0))
