import itertools

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from almost_finsler import jets
from almost_finsler.errors import DimensionError, FiniteDifferenceError, SlitProximityError
from almost_finsler.geometry import NormSpec
from almost_finsler.jets import Jet3


def test_seed_coordinate_jets():
    (c,) = jets.seed([3.0])
    assert c.val == 3.0
    assert c.d1.tolist() == [1.0]
    assert c.d2.tolist() == [0.0] and c.d3.tolist() == [0.0]
    y1, y2 = jets.seed([1.0, 2.0])
    assert y2.d1.tolist() == [0.0, 1.0]
    prod = jets.mul(y1, y2)
    assert prod.hessian()[0, 1] == 1.0 and prod.hessian()[1, 0] == 1.0


def test_seed_rejects_empty():
    with pytest.raises(DimensionError):
        jets.seed(np.zeros(0))


def test_mul_square():
    (c,) = jets.seed([2.0])
    sq = jets.mul(c, c)
    assert (float(sq.val), sq.d1.tolist(), sq.d2.tolist(), sq.d3.tolist()) == (4.0, [4.0], [2.0], [0.0])


def test_scale_identity_and_self_division():
    y = jets.seed([1.3, -0.4, 2.0])
    j = jets.sqrt_jet(jets.quadratic(np.diag([1.0, 2.0, 3.0]), [1.3, -0.4, 2.0])) * y[0]
    k = jets.scale(j, 1)
    for a, b in zip((j.val, j.d1, j.d2, j.d3), (k.val, k.d1, k.d2, k.d3)):
        np.testing.assert_array_equal(a, b)
    q = jets.div(j, j)
    assert float(q.val) == pytest.approx(1.0, abs=1e-15)
    for part in (q.d1, q.d2, q.d3):
        np.testing.assert_allclose(part, 0.0, atol=1e-13)


def test_division_by_zero_value():
    y = jets.seed([0.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        jets.div(y[1], y[0])


def test_sqrt_examples():
    four = Jet3.constant(4.0, 2)
    two = jets.sqrt_jet(four)
    assert float(two.val) == 2.0
    assert not np.any(two.d1) and not np.any(two.d2) and not np.any(two.d3)

    (c,) = jets.seed([3.0])
    r = jets.sqrt_jet(c * c)
    assert (float(r.val), r.d1.tolist()) == (3.0, [1.0])
    assert abs(r.d2[0]) < 1e-15 and abs(r.d3[0]) < 1e-15

    y = np.array([3.0, 4.0])
    r = jets.sqrt_jet(jets.quadratic(np.eye(2), y))
    yhat = y / 5
    assert float(r.val) == pytest.approx(5.0, abs=1e-15)
    np.testing.assert_allclose(r.d1, [0.6, 0.8], atol=1e-15)
    np.testing.assert_allclose(r.hessian(), (np.eye(2) - np.outer(yhat, yhat)) / 5, atol=1e-15)


def test_sqrt_nonpositive_raises():
    with pytest.raises(SlitProximityError):
        jets.sqrt_jet(Jet3.constant(0.0, 2))
    with pytest.raises(SlitProximityError):
        jets.sqrt_jet(Jet3.constant(-1.0, 2))


def test_sqrt_of_square_roundtrip():
    rng = np.random.default_rng(1)
    y = rng.uniform(0.5, 2.0, size=(20, 3))
    a = jets.sqrt_jet(jets.quadratic(np.eye(3), y)) + jets.linear([0.1, 0.2, 0.3], y)
    back = jets.sqrt_jet(a * a)
    for u, v in zip((a.val, a.d1, a.d2, a.d3), (back.val, back.d1, back.d2, back.d3)):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-13)


def test_packed_symmetry_bit_exact():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(50, 4))
    Q = rng.normal(size=(4, 4))
    f = jets.sqrt_jet(jets.quadratic(Q @ Q.T + np.eye(4), y)) * jets.linear(rng.normal(size=4), y)
    H, T = f.hessian(), f.third()
    np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))
    for perm in itertools.permutations(range(3)):
        np.testing.assert_array_equal(T, np.transpose(T, (0,) + tuple(p + 1 for p in perm)))


def _cubic_jet(y):
    y0, y1, y2 = jets.seed(y)
    return y0 * y0 * y0 + 2.0 * y0 * y1 * y1 - y2 + 0.5 * y0 * y1 * y2 + 3.0 * y2 * y2 - 7.0


def test_polynomial_matches_symbolic_derivatives():
    s = sp.symbols("y0:3")
    poly = s[0]**3 + 2 * s[0] * s[1]**2 - s[2] + sp.Rational(1, 2) * s[0] * s[1] * s[2] + 3 * s[2]**2 - 7
    rng = np.random.default_rng(3)
    for y in rng.normal(size=(10, 3)):
        sub = dict(zip(s, y))
        jet = _cubic_jet(y)
        d1 = [float(sp.diff(poly, a).subs(sub)) for a in s]
        d2 = [[float(sp.diff(poly, a, b).subs(sub)) for b in s] for a in s]
        d3 = [[[float(sp.diff(poly, a, b, c)) for c in s] for b in s] for a in s]
        assert float(jet.val) == pytest.approx(float(poly.subs(sub)), abs=1e-12)
        np.testing.assert_allclose(jet.d1, d1, atol=1e-12)
        np.testing.assert_allclose(jet.hessian(), d2, atol=1e-12)
        np.testing.assert_allclose(jet.third(), d3, atol=1e-12)


def test_finite_differences_exact_on_polynomials():
    # no truncation error on cubics, so a large step only shrinks the rounding error
    assert jets.finite_difference_check(_cubic_jet, [0.3, -1.2, 0.8], h=0.25) < 1e-12
    lin = lambda y: jets.linear([1.0, -2.0, 0.5], y)
    assert jets.finite_difference_check(lin, [1.0, 2.0, 3.0], h=1.0) < 1e-14


def test_finite_differences_euclidean_norm():
    fiber = NormSpec.euclidean(np.eye(3)).at()
    assert jets.finite_difference_check(lambda y: fiber.evaluate(y).F, [1.0, 1.0, 1.0], h=1e-3) < 1e-5


def test_finite_differences_randers_norm():
    fiber = NormSpec.randers(np.eye(2), [0.0, 0.5]).at()
    assert jets.finite_difference_check(lambda y: fiber.evaluate(y).F, [0.7, -0.2], h=1e-3) < 1e-5


def test_finite_difference_reports_stencil_failure():
    fiber = NormSpec.bspace(np.eye(2), [0.0, 0.5]).at()
    # one stencil point lands at slit distance 2e-4, inside delta_min = 1e-3
    with pytest.raises(FiniteDifferenceError):
        jets.finite_difference_check(lambda y: fiber.evaluate(y).F, [0.0102, 1.0], h=1e-2)


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        jets.finite_difference_check(_cubic_jet, [1.0, 1.0, 1.0], h=0.0)


coords = st.floats(min_value=0.2, max_value=3.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, min_size=2, max_size=4), st.lists(coords, min_size=4, max_size=4))
def test_arithmetic_rules(y, c):
    y = np.array(y)
    n = len(y)
    a = jets.sqrt_jet(jets.quadratic(np.eye(n), y))
    b = jets.linear(np.array(c[:n]), y) + 1.0
    ab, ba = a * b, b * a
    for u, v in zip((ab.val, ab.d1, ab.d2, ab.d3), (ba.val, ba.d1, ba.d2, ba.d3)):
        np.testing.assert_allclose(u, v, rtol=1e-15, atol=1e-15)
    q = (a * b) / b
    for u, v in zip((q.val, q.d1, q.d2, q.d3), (a.val, a.d1, a.d2, a.d3)):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-11)
    d = (a + b) - b
    np.testing.assert_allclose(d.d3, a.d3, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3), st.floats(min_value=0.1, max_value=2.0))
def test_norm_jets_homogeneity(y, lam):
    fiber = NormSpec.randers(np.diag([1.0, 2.0, 0.5]), [0.1, 0.2, -0.3]).at()
    y = np.array(y)
    F1, F2 = fiber.evaluate(y).F, fiber.evaluate(lam * y).F
    assert float(F2.val) == pytest.approx(lam * float(F1.val), rel=1e-13)
    np.testing.assert_allclose(F2.d1, F1.d1, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(lam * F2.d2, F1.d2, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(lam**2 * F2.d3, F1.d3, rtol=1e-10, atol=1e-11)
