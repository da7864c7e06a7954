import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite_e as herme

from _helpers import He, SQRT2, from_herme, to_herme
from wick_chaos.hermite import (
    ChaosExpansion,
    evaluate,
    expect,
    gauss_hermite_rule,
    make_rng,
    random_expansion,
    rule_for_degree,
)
from wick_chaos.wick import (
    delta,
    exp_series_tail,
    gamma,
    glambda_norm,
    gradient,
    gradient_norm_closed_form,
    iterated_gradient,
    l2_pairing,
    lp_norm,
    mehler_apply,
    ou_apply,
    partial,
    pointwise_product,
    s_transform,
    shifted_expectation,
    stochastic_exponential,
    wick_correction,
    wick_product,
    wick_with_delta,
)

seeds = st.integers(0, 2**32 - 1)


def poly(seed, dim, deg):
    return random_expansion(dim, deg, make_rng(seed))


def vec(seed, dim, scale=1.0):
    return scale * make_rng(seed).standard_normal(dim)


# --- products ---------------------------------------------------------------

def test_wick_product_examples():
    assert wick_product(He(2), He(2)).allclose(He(4), atol=0)
    F = ChaosExpansion(1, {(0,): 2.0, (3,): -1.5})
    assert wick_product(F, ChaosExpansion.constant(1.0, 1)).allclose(F, atol=0)
    h, k = np.array([0.4, -0.3]), np.array([0.2, 0.9])
    prod = wick_product(stochastic_exponential(h, 5), stochastic_exponential(k, 5))
    truncated = ChaosExpansion(2, {a: c for a, c in prod.coeffs.items() if sum(a) <= 5})
    assert truncated.max_coef_diff(stochastic_exponential(h + k, 5)) < 1e-14
    assert prod.degree_cap == 10
    with pytest.raises(ValueError):
        wick_product(He(1), He(1, 0))


def test_pointwise_product_examples():
    assert pointwise_product(He(1), He(1)).allclose(ChaosExpansion(1, {(0,): 1, (2,): 1}), atol=0)
    assert pointwise_product(He(2), He(2)).allclose(ChaosExpansion(1, {(0,): 2, (2,): 4, (4,): 1}), atol=0)
    F = ChaosExpansion(2, {(1, 2): 0.7})
    assert pointwise_product(F, ChaosExpansion.constant(1.0, 2)).allclose(F, atol=0)


@pytest.mark.parametrize("seed", range(5))
def test_pointwise_product_matches_numpy(seed):
    F, G = poly(seed, 1, 6), poly(seed + 100, 1, 5)
    oracle = from_herme(herme.hermemul(to_herme(F), to_herme(G)))
    assert pointwise_product(F, G).max_coef_diff(oracle) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_pointwise_product_agrees_with_evaluation(seed, dim):
    F, G = poly(seed, dim, 3), poly(seed + 1, dim, 3)
    pts = make_rng(seed + 2).standard_normal((7, dim))
    np.testing.assert_allclose(
        evaluate(pointwise_product(F, G), pts), evaluate(F, pts) * evaluate(G, pts), rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_wick_algebra_laws(seed, dim, a, b):
    F, G, H = poly(seed, dim, 3), poly(seed + 1, dim, 3), poly(seed + 2, dim, 2)
    assert wick_product(F, G).max_coef_diff(wick_product(G, F)) <= 1e-12
    assert wick_product(wick_product(F, G), H).max_coef_diff(wick_product(F, wick_product(G, H))) <= 1e-12
    lhs = wick_product(a * F + b * G, H)
    rhs = a * wick_product(F, H) + b * wick_product(G, H)
    assert lhs.max_coef_diff(rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 10


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 3))
def test_characterizing_property_and_mean(seed, dim):
    F, G = poly(seed, dim, 4), poly(seed + 1, dim, 3)
    h = vec(seed + 2, dim)
    W = wick_product(F, G)
    assert math.isclose(s_transform(W, h), s_transform(F, h) * s_transform(G, h), rel_tol=1e-9, abs_tol=1e-9)
    assert abs(W.mean - F.mean * G.mean) <= 1e-12


# --- identities linking the two products -------------------------------------

def _derivs_1d(F):
    out, G = [], F
    while G.coeffs:
        out.append(G)
        G = partial(G, 0)
    return out


@pytest.mark.parametrize("seed", range(20))
def test_one_dimensional_pointwise_identity(seed):
    f = poly(seed, 1, 6)
    nodes = gauss_hermite_rule(13).nodes
    ww = evaluate(wick_product(f, f), nodes)
    derivs = _derivs_1d(f)
    rhs = evaluate(f, nodes) ** 2
    for l, d in enumerate(derivs[1:], start=1):
        rhs = rhs + (-1) ** l / math.factorial(l) * evaluate(d, nodes) ** 2
    # values reach ~1e8 at the outer nodes, so the tolerance scales with magnitude
    assert np.all(np.abs(ww - rhs) <= 1e-9 * (1 + np.abs(rhs)))


def test_wick_square_example_against_derivatives():
    # (x^2-1)<>(x^2-1) = f^2 - f'^2 + f''^2/2
    f = He(2)
    xs = np.linspace(-2, 2, 9)
    rhs = (xs ** 2 - 1) ** 2 - (2 * xs) ** 2 + 4 / 2
    np.testing.assert_allclose(evaluate(wick_product(f, f), xs), rhs, atol=1e-12)


@pytest.mark.parametrize("dim, deg", [(1, 6), (2, 5), (3, 4)])
def test_coefficient_identity(random_poly, dim, deg):
    F = random_poly(dim, deg)
    diff = pointwise_product(F, F) - wick_product(F, F)
    assert diff.max_coef_diff(wick_correction(F)) < 1e-9


# --- gradients ----------------------------------------------------------------

def test_gradient_examples():
    assert gradient(He(3))[0].allclose(ChaosExpansion.hermite((2,), 3.0), atol=0)
    h = [0.5, -2.0, 1.5]
    g = gradient(delta(h))
    for i in range(3):
        assert g[i].allclose(ChaosExpansion.constant(h[i], 3), atol=0)
    assert gradient(ChaosExpansion.constant(4.0, 2)).is_zero()


def test_iterated_gradient_examples():
    s2 = iterated_gradient(He(3), 2)
    assert s2[(0, 0)].allclose(ChaosExpansion.hermite((1,), 6.0), atol=0)
    assert s2.norm_sq() == 36.0
    s3 = iterated_gradient(He(3), 3)
    assert s3[(0, 0, 0)].allclose(ChaosExpansion.constant(6.0, 1), atol=0)
    assert s3.norm_sq() == 36.0
    assert iterated_gradient(He(3), 4).is_zero()
    with pytest.raises(ValueError):
        iterated_gradient(He(1), 0)


@pytest.mark.parametrize("dim, deg, l", [(1, 6, 1), (2, 4, 2), (3, 3, 2), (2, 5, 3)])
def test_gradient_norm_closed_form_and_symmetry(random_poly, dim, deg, l):
    F = random_poly(dim, deg)
    stack = iterated_gradient(F, l)
    closed = gradient_norm_closed_form(F, l)
    rule = rule_for_degree(2 * deg)
    quad = sum(expect(lambda x, c=c: evaluate(c, x) ** 2, dim, rule) for c in stack.components.values())
    assert abs(quad - closed) <= 1e-9 * max(1.0, closed)
    assert abs(stack.norm_sq() - closed) <= 1e-9 * max(1.0, closed)
    for t, comp in stack.components.items():
        other = stack[tuple(sorted(t))]
        assert dict(comp.coeffs) == dict(other.coeffs)


# --- second quantization -------------------------------------------------------

def test_gamma_examples():
    h = np.array([0.7, -0.2])
    assert gamma(stochastic_exponential(h, 6), 1.7).max_coef_diff(stochastic_exponential(1.7 * h, 6)) < 1e-14
    F = poly(3, 2, 4)
    assert gamma(F, 1.0).allclose(F, atol=0)
    assert dict(gamma(F, 0.0).coeffs) == {(0, 0): F.mean}


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0, 3), st.floats(0, 3))
def test_semigroup_law(seed, lam, mu):
    F = poly(seed, 2, 4)
    a = gamma(gamma(F, lam), mu)
    b = gamma(F, lam * mu)
    assert a.max_coef_diff(b) <= 1e-12 * max(1.0, max(abs(c) for c in b.coeffs.values()) if b.coeffs else 1.0)


def test_ou_examples():
    F = poly(9, 1, 5)
    assert ou_apply(F, 0.0).allclose(F, atol=0)
    assert ou_apply(He(2), math.log(2)).allclose(ChaosExpansion.hermite((2,), 0.25), atol=1e-15)
    pts = np.array([-2.0, -0.5, 0.0, 1.0, 2.5])
    np.testing.assert_allclose(mehler_apply(He(2), math.log(2), pts), 0.25 * (pts ** 2 - 1), atol=1e-12)
    assert ou_apply(F, 60.0).max_coef_diff(ChaosExpansion.constant(F.mean, 1)) < 1e-20
    with pytest.raises(ValueError):
        ou_apply(F, -1.0)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_ou_matches_mehler(random_poly, dim):
    F = random_poly(dim, 4)
    pts = make_rng(dim).standard_normal((5, dim))
    np.testing.assert_allclose(mehler_apply(F, 0.3, pts), evaluate(ou_apply(F, 0.3), pts), atol=1e-10)


# --- pairings, norms, exponentials -------------------------------------------

def test_pairing_examples():
    for k in range(6):
        assert l2_pairing(He(k), He(k)) == math.factorial(k)
    F = poly(1, 2, 3)
    assert l2_pairing(F, ChaosExpansion.constant(1.0, 2)) == F.mean
    h, k = np.array([0.3, 0.5]), np.array([-0.4, 0.8])
    got = l2_pairing(stochastic_exponential(h, 20), stochastic_exponential(k, 20))
    assert abs(got - math.exp(h @ k)) < 1e-14


def test_glambda_norm_examples():
    F = poly(4, 2, 3)
    assert math.isclose(glambda_norm(F, 1.0), F.norm(), rel_tol=1e-14)
    assert math.isclose(glambda_norm(He(2), SQRT2), 2 * SQRT2, rel_tol=1e-14)
    assert glambda_norm(ChaosExpansion.constant(1.0, 3), 2.5) == 1.0
    assert math.isclose(glambda_norm(F, 1.3), gamma(F, 1.3).norm(), rel_tol=1e-13)


def test_stochastic_exponential_examples():
    assert dict(stochastic_exponential([0.0, 0.0], 4).coeffs) == {(0, 0): 1.0}
    E = stochastic_exponential([1.0], 2)
    assert dict(E.coeffs) == {(0,): 1.0, (1,): 1.0, (2,): 0.5}
    assert math.isclose(E.tail, math.e - 2.5, rel_tol=1e-14)
    for n in range(5):
        assert stochastic_exponential([0.4, -1.1], n).mean == 1.0
    # e^{x - 1/2} on the nodes of a fine rule
    xs = np.linspace(-2, 2, 5)
    np.testing.assert_allclose(evaluate(stochastic_exponential([1.0], 30), xs), np.exp(xs - 0.5), rtol=1e-12)


def test_exp_series_tail():
    for x in (0.5, 2.0, 10.0):
        for n in (0, 3, 8):
            direct = math.fsum(x ** k / math.factorial(k) for k in range(n + 1, 150))
            assert math.isclose(exp_series_tail(x, n), direct, rel_tol=1e-12)
    assert exp_series_tail(0.0, 3) == 0.0


def test_s_transform_examples():
    assert s_transform(ChaosExpansion.constant(1.0, 2), [0.3, 0.1]) == 1.0
    g, h = [1.0, -2.0], [0.5, 0.25]
    assert math.isclose(s_transform(delta(g), h), 0.0, abs_tol=1e-15)
    assert math.isclose(s_transform(delta([3.0, 1.0]), h), 1.75)


def test_wick_with_delta_examples():
    h = [0.6, -1.2]
    assert wick_with_delta(ChaosExpansion.constant(1.0, 2), h).allclose(delta(h), atol=1e-15)
    assert wick_with_delta(delta([1.0, 0.0]), [1.0, 0.0]).allclose(He(2, 0), atol=1e-15)
    assert not wick_with_delta(poly(5, 2, 3), [0.0, 0.0]).coeffs


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_wick_with_delta_cross_check(seed, dim):
    F = poly(seed, dim, 4)
    h = vec(seed + 1, dim)
    out = wick_with_delta(F, h)
    assert out.max_coef_diff(wick_product(F, delta(h))) == 0


def test_shifted_expectation_examples():
    assert math.isclose(shifted_expectation(He(1), [1.0]), 1.0, abs_tol=1e-14)
    assert math.isclose(shifted_expectation(He(2), [1.0]), 1.0, abs_tol=1e-14)
    F = poly(7, 2, 4)
    assert math.isclose(shifted_expectation(F, [0.0, 0.0]), F.mean, abs_tol=1e-12)
    with pytest.raises(ValueError):
        shifted_expectation(F, [1.0, 0.0], gauss_hermite_rule(1))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_cameron_martin_shift(seed, dim):
    F = poly(seed, dim, 4)
    a = vec(seed + 1, dim)
    assert math.isclose(shifted_expectation(F, a), s_transform(F, a), rel_tol=1e-10, abs_tol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_hypercontractivity(seed):
    G = poly(seed, 2, 4)
    assert lp_norm(gamma(G, 1 / SQRT2), 3) <= G.norm() + 1e-6


def test_lp_norm_two_matches_l2():
    G = poly(11, 2, 3)
    assert math.isclose(lp_norm(G, 2), G.norm(), rel_tol=1e-10)
