import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracobstacle.errors import ConfigurationError
from fracobstacle.obstacles import PolynomialObstacle, builtin_obstacles
from fracobstacle.poly_extension import (apply_La_poly, corrected_obstacle, extend,
                                         extend_homogeneous, extend_taylor, taylor_poly,
                                         taylor_remainders)
from fracobstacle.polynomial import Polynomial, homogeneous_indices, multi_indices

S_PANEL = (0.25, 0.5, 0.75)


def x1(n=1, power=1):
    return Polynomial.monomial((power,) + (0,) * (n - 1))


def test_multi_index_counts():
    assert len(homogeneous_indices(2, 3)) == 4
    assert len(multi_indices(2, 2)) == 6
    assert all(sum(a) == 3 for a in homogeneous_indices(3, 3))


def test_polynomial_drops_zero_terms():
    p = Polynomial(2, {(1, 0): 1.0, (0, 1): 0.0})
    q = p - Polynomial(2, {(1, 0): 1.0})
    assert len(p) == 1
    assert q.is_zero()


def test_polynomial_json_roundtrip():
    p = Polynomial(3, {(2, 0, 0): 1.5, (0, 1, 2): -0.25, (0, 0, 0): 3.0})
    assert Polynomial.from_json(3, p.to_json()).allclose(p, 0.0)


def test_translate_matches_shifted_evaluation():
    rng = np.random.default_rng(1)
    p = Polynomial(2, {(3, 0): 1.0, (1, 2): -2.0, (0, 1): 0.5})
    shift = np.array([0.3, -0.7])
    pts = rng.uniform(-1, 1, (50, 2))
    np.testing.assert_allclose(p.translate(shift)(pts), p(pts - shift), atol=1e-12)


def test_taylor_of_quadratic_is_exact():
    obs = PolynomialObstacle(x1(1, 2))
    assert taylor_poly(obs, [0.0], 2).allclose(x1(1, 2), 0.0)


def test_taylor_of_cubic_about_one():
    # hand expansion: x^3 = 1 + 3(x-1) + 3(x-1)^2 + (x-1)^3
    T = taylor_poly(PolynomialObstacle(x1(1, 3)), [1.0], 2)
    expected = Polynomial(1, {(2,): 3.0, (1,): -3.0, (0,): 1.0})
    assert T.allclose(expected, 1e-14)


def test_taylor_order_zero_is_constant():
    obs = builtin_obstacles(2, 2)["gaussian"]
    T = taylor_poly(obs, [0.1, -0.2], 0)
    assert T.degree == 0
    assert T.coeff((0, 0)) == pytest.approx(float(obs(np.array([0.1, -0.2]))))


def test_extension_of_constant_and_linear():
    one = Polynomial.constant(1, 1.0)
    assert extend_homogeneous(one, 0.3).allclose(one.embed(2), 0.0)
    assert extend_homogeneous(x1(), 0.3).allclose(x1().embed(2), 0.0)


@pytest.mark.parametrize("s", S_PANEL)
def test_extension_of_square(s):
    E = extend_homogeneous(x1(1, 2), s)
    expected = Polynomial(2, {(2, 0): 1.0, (0, 2): -1.0 / (2 * (1 - s))})
    assert E.allclose(expected, 1e-14)


@pytest.mark.parametrize("s", S_PANEL)
def test_extension_of_fourth_power(s):
    # two recursion steps by hand: p2 = -3 x^2/(1-s), p4 = 3/(4 (1-s)(2-s))
    E = extend_homogeneous(x1(1, 4), s)
    expected = Polynomial(2, {(4, 0): 1.0, (2, 2): -3.0 / (1 - s),
                              (0, 4): 3.0 / (4 * (1 - s) * (2 - s))})
    assert E.allclose(expected, 1e-13)


def _La_fd(poly, pts, a, step=1e-3):
    """L_a by fourth-order central differences at points with t > 0."""
    def d2(axis):
        e = np.zeros(pts.shape[1])
        e[axis] = step
        f = [poly(pts + k * e) for k in (-2, -1, 0, 1, 2)]
        return (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * step ** 2)

    e = np.zeros(pts.shape[1])
    e[-1] = step
    dt = (poly(pts - 2 * e) - 8 * poly(pts - e) + 8 * poly(pts + e) - poly(pts + 2 * e)) / (12 * step)
    return sum(d2(i) for i in range(pts.shape[1])) + a * dt / pts[:, -1]


@pytest.mark.parametrize("s", S_PANEL)
def test_extension_is_La_harmonic_by_finite_differences(s):
    rng = np.random.default_rng(7)
    a = 1 - 2 * s
    for alpha in [(4, 0), (2, 2), (3, 1), (0, 5)]:
        E = extend_homogeneous(Polynomial.monomial(alpha), s)
        pts = np.column_stack([rng.uniform(-1, 1, (20, 2)), rng.uniform(0.3, 1, 20)])
        val = _La_fd(E, pts, a)
        assert np.max(np.abs(val)) < 1e-5 * max(1.0, np.max(np.abs(E(pts))))


def test_apply_La_poly_on_square_of_t():
    s = 0.3
    a = 1 - 2 * s
    r = apply_La_poly(Polynomial.monomial((0, 2)), a)
    assert r.allclose(Polynomial.constant(2, 2 + 2 * a), 1e-15)
    assert r.coeff((0, 0)) == pytest.approx(4 * (1 - s))


def test_apply_La_poly_constant_and_odd():
    assert apply_La_poly(Polynomial.constant(3, 2.0), 0.2).is_zero()
    with pytest.raises(ConfigurationError):
        apply_La_poly(Polynomial.monomial((0, 1)), 0.0)


def test_extend_rejects_non_homogeneous_when_strict():
    p = x1(1, 2) + 1.0
    with pytest.raises(ConfigurationError):
        extend_homogeneous(p, 0.5)
    assert extend_homogeneous(p, 0.5, strict=False).allclose(extend(p, 0.5))


def test_extend_rejects_bad_s():
    with pytest.raises(ConfigurationError):
        extend(x1(), 1.0)


def test_extend_taylor_translation():
    s = 0.4
    rng = np.random.default_rng(3)
    p = Polynomial(2, {(2, 0): 1.0, (1, 1): 0.5, (0, 2): -0.3, (1, 0): 0.2})
    x0 = np.array([0.25, -0.4])
    T = p.translate(x0)  # T(x') = p(x' - x0)
    E = extend_taylor(T, x0, s)
    Ep = extend(p, s)
    pts = rng.uniform(-1, 1, (40, 3))
    shifted = pts - np.append(x0, 0.0)
    np.testing.assert_allclose(E(pts), Ep(shifted), atol=1e-12)
    assert extend_taylor(Polynomial.zero(2), x0, s).is_zero()


def test_corrected_obstacle_of_low_degree_polynomial():
    s = 0.6
    p = Polynomial(2, {(2, 0): 0.2, (0, 1): 0.1, (0, 0): -0.05})
    c = corrected_obstacle(PolynomialObstacle(p), [0.1, 0.2], 2, s)
    assert c.extension.allclose(extend(p, s), 1e-12)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (30, 3))
    np.testing.assert_allclose(c(pts), extend(p, s)(pts), atol=1e-13)


@pytest.mark.parametrize("name", ["polynomial", "affine", "cap", "gaussian"])
def test_corrected_obstacle_trace_is_obstacle(name):
    obs = builtin_obstacles(2, 2)[name]
    c = corrected_obstacle(obs, [0.05, -0.1], 2, 0.35)
    pts = np.random.default_rng(4).uniform(-0.4, 0.4, (200, 2))
    np.testing.assert_allclose(c.trace(pts), obs(pts), rtol=0, atol=1e-14)
    full = np.column_stack([pts, np.full(len(pts), 0.3)])
    refl = full * np.array([1, 1, -1])
    np.testing.assert_allclose(c(full), c(refl), atol=1e-14)


def test_gradient_of_taylor_is_taylor_of_gradient():
    obs = builtin_obstacles(2, 2)["gaussian"]
    x0 = np.array([0.2, -0.1])
    k = 3
    T = taylor_poly(obs, x0, k)
    for axis in range(2):
        grad_T = T.diff(axis)
        # Taylor polynomial of order k-1 of the partial derivative, built from derivatives of obs
        terms = {}
        for alpha in multi_indices(2, k - 1):
            beta = list(alpha)
            beta[axis] += 1
            terms[alpha] = float(obs.derivative(beta, x0)) / math.prod(math.factorial(i) for i in alpha)
        expected = Polynomial(2, terms).translate(x0)
        assert grad_T.allclose(expected, 1e-12)


def smooth_ball_pairs(obs, m, rng):
    """Paired points in the unit ball intersected with the obstacle's smooth ball."""
    n = obs.n
    rad = min(1.0, obs.smooth_radius)
    c = np.asarray(obs.smooth_center or (0.0,) * n)

    def draw():
        v = rng.normal(size=(m, n))
        v /= np.linalg.norm(v, axis=1)[:, None]
        return c + rad * v * rng.random((m, 1)) ** (1 / n)

    return draw(), draw()


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_taylor_remainders_within_bounds(n, k):
    rng = np.random.default_rng(10 * n + k)
    for name, obs in builtin_obstacles(n, k).items():
        q0, q1 = taylor_remainders(obs, *smooth_ball_pairs(obs, 400, rng), k)
        assert q0.max() <= 1.0, name
        assert q1.max() <= 1.0, name


def test_taylor_remainder_detects_unnormalized_obstacle():
    obs = builtin_obstacles(1, 2)["gaussian"].scaled(20.0)
    q0, q1 = taylor_remainders(obs, *smooth_ball_pairs(obs, 400, np.random.default_rng(0)), 2)
    assert q0.max() > 1.0 and q1.max() > 1.0


def test_taylor_remainder_matches_hand_value():
    # x^3 about 0 at order 2: remainder x^3 against the bound x^3 / 3!
    obs = PolynomialObstacle(x1(1, 3))
    q0, q1 = taylor_remainders(obs, [[0.0]], [[0.5]], 2)
    assert q0[0] == pytest.approx(6.0)
    # the order-2 expansion of 3 x^2 is exact
    assert q1[0] == 0.0


def _poly_strategy(degree, arity=2):
    idx = homogeneous_indices(arity, degree)
    return st.lists(st.floats(-3, 3, allow_nan=False), min_size=len(idx), max_size=len(idx)).map(
        lambda cs: Polynomial(arity, dict(zip(idx, cs))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8).flatmap(lambda d: st.tuples(_poly_strategy(d), _poly_strategy(d))),
       st.sampled_from(S_PANEL), st.floats(-2, 2), st.floats(-2, 2))
def test_extension_linear_and_annihilated(pair, s, alpha, beta):
    p, q = pair
    Ep, Eq = extend_homogeneous(p, s), extend_homogeneous(q, s)
    combo = extend_homogeneous(alpha * p + beta * q, s)
    assert combo.allclose(alpha * Ep + beta * Eq, 1e-12)
    assert apply_La_poly(Ep, 1 - 2 * s).is_zero(1e-12, max(p.max_abs_coeff(), 1e-300))
    assert Ep.restrict_last(0.0).allclose(p, 0.0)
    assert Ep.is_even_in(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6).flatmap(_poly_strategy), st.sampled_from(S_PANEL),
       st.floats(0.1, 2.0))
def test_extension_sup_bounded_by_trace_sup(p, s, r):
    # sampled continuity ratio sup_{B_r}|E p| / sup_{B'_r}|p| is finite
    if p.is_zero():
        return
    E = extend_homogeneous(p, s)
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    ph = np.linspace(0, np.pi / 2, 16)
    T, P = np.meshgrid(th, ph)
    ball = r * np.stack([np.cos(T) * np.cos(P), np.sin(T) * np.cos(P), np.sin(P)], -1).reshape(-1, 3)
    thin = ball[:, :2][np.isclose(ball[:, 2], 0.0)]
    top = np.max(np.abs(p(thin)))
    if top < 1e-9 * r ** p.degree * p.max_abs_coeff():
        return
    assert np.isfinite(np.max(np.abs(E(ball))) / top)
