import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracobstacle.errors import ConfigurationError, ResolutionError
from fracobstacle.grid import (QuadratureSpec, WeightedGrid, apply_La, cutoff, flux_residual,
                               gradient, weighted_flux_trace, weighted_integral)
from fracobstacle.poly_extension import extend
from fracobstacle.polynomial import Polynomial


def interior(grid):
    return ~grid.boundary_mask() & (np.arange(grid.shape[0]) > 0).reshape((-1,) + (1,) * grid.n)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.95, 0.95), st.sampled_from([1 / 8, 1 / 16, 1 / 32]), st.integers(2, 40))
def test_cell_weights_positive_and_exact(a, h, M):
    g = WeightedGrid(1, a, h, (M + 1, 5))
    assert np.all(g.cell_weights > 0)
    exact = (M * h) ** (1 + a) / (1 + a)
    assert math.isclose(g.cell_weights.sum(), exact, rel_tol=1e-12)


def test_grid_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        WeightedGrid.box(3, 0.0, 0.1)
    with pytest.raises(ConfigurationError):
        WeightedGrid.box(1, 1.0, 0.1)
    with pytest.raises(ConfigurationError):
        WeightedGrid.box(1, 0.0, 0.3, R=1.0)


@pytest.mark.parametrize("n", [1, 2])
def test_constant_and_linear_fields_are_balanced(n):
    g = WeightedGrid.box(n, 0.3, 1 / 8)
    x = g.coords()
    for field in (np.full(g.shape, 2.0), np.broadcast_to(x[0], g.shape).copy()):
        assert np.max(np.abs(apply_La(g, field)[interior(g)])) < 1e-10


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_stencil_annihilates_extended_square(s):
    g = WeightedGrid.box(1, 1 - 2 * s, 1 / 16)
    u = g.sample_polynomial(extend(Polynomial.monomial((2,)), s))
    res = apply_La(g, u)
    assert np.max(np.abs(res[~g.boundary_mask()])) < 1e-9


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_La_residual_decreases_for_fourth_power(s):
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = WeightedGrid.box(1, 1 - 2 * s, h)
        u = g.sample_polynomial(extend(Polynomial.monomial((4,)), s))
        errs.append(np.max(np.abs(apply_La(g, u)[interior(g)])))
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_flux_residual_is_conservative():
    rng = np.random.default_rng(2)
    g = WeightedGrid.box(1, -0.4, 1 / 8)
    u = rng.normal(size=g.shape)
    res = flux_residual(g, u)
    # sum over rows 0..J-1 and columns i0..i1 equals the flux through the box faces
    J, i0, i1 = 5, 3, 12
    total = res[:J, i0:i1 + 1].sum()
    kh, kv = g.kappa_h, g.kappa_v
    side = sum(kh[j] * ((u[j, i0 - 1] - u[j, i0]) + (u[j, i1 + 1] - u[j, i1])) for j in range(J))
    top = np.sum(kv[J - 1] * (u[J, i0:i1 + 1] - u[J - 1, i0:i1 + 1]))
    assert total == pytest.approx(side + top, abs=1e-12)


def test_gradient_of_linear_and_constant():
    g = WeightedGrid.box(2, 0.2, 1 / 8)
    x1 = np.broadcast_to(g.coords()[0], g.shape).copy()
    grad = gradient(g, x1)
    np.testing.assert_allclose(grad[0], 1.0, atol=1e-12)
    np.testing.assert_allclose(grad[1:], 0.0, atol=1e-12)
    assert np.max(np.abs(gradient(g, np.ones(g.shape)))) == 0.0


def test_gradient_of_extended_square_converges():
    s = 0.3
    E = extend(Polynomial.monomial((2, 0)), s)
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = WeightedGrid.box(2, 1 - 2 * s, h, R=0.5)
        grad = gradient(g, g.sample_polynomial(E))
        exact = [g.sample_polynomial(E.diff(i)) for i in range(3)]
        errs.append(max(np.max(np.abs(grad[i] - exact[i])) for i in range(3)))
    assert errs[-1] < 1e-10 or errs[-1] < errs[0] / 8


def test_flux_trace_of_even_polynomial_vanishes():
    s = 0.35
    g = WeightedGrid.box(2, 1 - 2 * s, 1 / 16, R=0.5)
    u = g.sample_polynomial(extend(Polynomial(2, {(2, 0): 1.0, (1, 1): 0.5}), s))
    assert np.max(np.abs(weighted_flux_trace(g, u))) < 1e-10
    assert np.max(np.abs(weighted_flux_trace(g, np.full(g.shape, 3.0)))) == 0.0


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_flux_trace_of_power_profile(s):
    a = 1 - 2 * s
    g = WeightedGrid.box(1, a, 1 / 32)
    t = g.coords()[-1]
    u = np.broadcast_to(t ** (2 * s), g.shape).copy()
    tr = weighted_flux_trace(g, u)
    np.testing.assert_allclose(tr[1:-1], 2 * s, rtol=1e-12)


def test_ball_cutoff_integral():
    # int_{R^2} phi(|x|/r) dx = 7 pi r^2 / 12 for the piecewise linear cutoff
    h = 1 / 64
    g = WeightedGrid.box(1, 0.0, h)
    r = 16 * h
    val = weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.0,), r, "ball"))
    assert val == pytest.approx(7 * math.pi * r * r / 12, rel=0.02)


def test_annulus_over_distance_integral():
    # -phi'(|x|/r)/|x| integrates to 2 pi r in R^2
    h = 1 / 64
    g = WeightedGrid.box(1, 0.0, h)
    r = 16 * h
    val = weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.0,), r, "annulus_over_distance"))
    assert val == pytest.approx(2 * math.pi * r, rel=0.02)


def test_indicator_weighted_volume():
    # polar form: int_0^r rho^{1+a} d rho times int_0^{2 pi} |sin|^a
    a = 0.4
    h = 1 / 64
    g = WeightedGrid.box(1, a, h)
    r = 24 * h
    val = weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.0,), r, "indicator"))
    ang = 4 * math.gamma((1 + a) / 2) * math.gamma(0.5) / (2 * math.gamma(1 + a / 2))
    exact = ang * r ** (2 + a) / (2 + a)
    assert val == pytest.approx(exact, rel=0.02)


def test_empty_annulus_gives_zero():
    g = WeightedGrid.box(1, 0.0, 1 / 32)
    u = np.zeros(g.shape)
    assert weighted_integral(g, u, QuadratureSpec((0.1,), 0.25, "annulus")) == 0.0


def test_quadrature_consistency_under_refinement():
    vals = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        g = WeightedGrid.box(1, 0.3, h)
        x, t = g.coords()
        u = np.broadcast_to(np.cos(x) + t * t, g.shape).copy()
        vals.append(weighted_integral(g, u, QuadratureSpec((0.05,), 0.25, "ball")))
    assert abs(vals[2] - vals[1]) <= abs(vals[1] - vals[0]) + 1e-12


def test_reflection_doubling():
    # the half grid only covers t >= 0; the full disc area needs the doubling
    h = 1 / 32
    g = WeightedGrid.box(1, 0.0, h)
    r = 0.5
    val = weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.0,), r, "indicator"))
    assert val == pytest.approx(math.pi * r * r, rel=0.01)


def test_resolution_guard():
    g = WeightedGrid.box(1, 0.0, 1 / 16)
    with pytest.raises(ResolutionError):
        weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.0,), 3 / 16, "ball"))
    with pytest.raises(ResolutionError):
        weighted_integral(g, np.ones(g.shape), QuadratureSpec((0.9,), 0.5, "ball"))


def test_cutoff_shape():
    np.testing.assert_allclose(cutoff([0.0, 0.5, 0.75, 1.0, 2.0]), [1, 1, 0.5, 0, 0])
