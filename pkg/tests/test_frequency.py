import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracobstacle.errors import ConfigurationError, DegenerateError, ResolutionError
from fracobstacle.frequency import (AnalysisConfig, CorrectedFieldCache, LocalField,
                                    calibrate_C_mono, check_identities, classify_frequency,
                                    delta_variation, dyadic_radii, frequency_profile,
                                    frequency_record, h_ratio_law, monotonicity_flags,
                                    spatial_comparability, spatial_oscillation_diag)
from fracobstacle.geometry import extract_geometry
from fracobstacle.grid import WeightedGrid
from fracobstacle.poly_extension import extend
from fracobstacle.polynomial import Polynomial

H = 1 / 128


def poly_field(p, s, h=H, n=1, R=1.0):
    g = WeightedGrid.box(n, 1 - 2 * s, h, R=R)
    return LocalField.from_polynomial(g, extend(p, s))


def square(n=1):
    return Polynomial.monomial((2,) + (0,) * (n - 1))


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_frequency_of_linear_field(s):
    f = poly_field(Polynomial.monomial((1,)), s)
    for r in (16 * H, 0.25, 0.5):
        assert frequency_record(f, [0.0], r).I == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_frequency_of_extended_square(s):
    f = poly_field(square(), s)
    for r in (16 * H, 0.25, 0.5):
        assert frequency_record(f, [0.0], r).I == pytest.approx(2.0, rel=0.01)


def test_constant_field_has_zero_frequency():
    f = poly_field(Polynomial.constant(1, 2.0), 0.4)
    rec = frequency_record(f, [0.1], 0.25)
    assert rec.G == 0.0 and rec.I == 0.0


def test_zero_field_is_degenerate():
    g = WeightedGrid.box(1, 0.0, H)
    with pytest.raises(DegenerateError):
        frequency_record(LocalField(g, np.zeros(g.shape)), [0.0], 0.25)


def test_resolution_guard_on_radius():
    f = poly_field(square(), 0.5)
    with pytest.raises(ResolutionError):
        frequency_record(f, [0.0], 3 * H)


def test_dyadic_radii():
    r = dyadic_radii(0.25, 1 / 64)
    assert r == [0.25, 0.125, 0.0625, 0.03125, 0.015625]
    assert all(a > b for a, b in zip(r, r[1:]))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AnalysisConfig(theta=1.0).validate()
    with pytest.raises(ConfigurationError):
        AnalysisConfig(min_cells=2).validate()
    with pytest.raises(ConfigurationError):
        AnalysisConfig(C_mono=-1).validate()


@pytest.mark.parametrize("s", [0.3, 0.7])
def test_identities_for_extended_square(s):
    f = poly_field(square(), s)
    rows = check_identities(f, [0.0], [16 * H, 32 * H])
    for row in rows:
        assert row["D_residual"] <= 0.01
        assert row["Hprime_residual"] <= 0.01
        assert row["L2_vs_H_ok"]
        assert row["cauchy_schwarz_ok"]


@pytest.mark.parametrize("r", [0.25, 0.5])
def test_identities_improve_under_refinement(r):
    s = 0.4
    p = Polynomial.monomial((4,))
    res = []
    for h in (1 / 64, 1 / 128):
        row = check_identities(poly_field(p, s, h), [0.0], [r])[0]
        res.append((row["Hprime_residual"], row["D_residual"]))
    assert res[1][0] < res[0][0]
    assert res[1][1] < res[0][1]


def test_identities_off_node_centre():
    p = Polynomial(1, {(2,): 1.0, (3,): 0.7, (1,): 0.2})
    for row in check_identities(poly_field(p, 0.4), [0.05], [0.125, 0.25]):
        assert row["Hprime_residual"] <= 0.01
        assert row["D_residual"] <= 0.01


def test_identities_for_constant_field():
    f = poly_field(Polynomial.constant(1, 1.0), 0.5)
    row = check_identities(f, [0.0], [0.25])[0]
    assert row["D"] == 0.0 and row["G"] == 0.0
    assert row["D_residual"] == 0.0


@pytest.mark.parametrize("lam", [1, 2, 4])
def test_profile_slope_matches_frequency(lam):
    s = 0.5
    f = poly_field(Polynomial.monomial((lam,)), s)
    prof = frequency_profile(f, [0.0], AnalysisConfig(r_max=0.5))
    assert prof.lambda_slope == pytest.approx(prof.I0, rel=0.02)
    assert prof.I0 == pytest.approx(lam, rel=0.01)
    assert not prof.flags
    law = h_ratio_law(prof.radii, prof.column("H"), prof.column("I"), 1, 0.0)
    assert law < 0.02


def test_delta_variation_of_homogeneous_field():
    f = poly_field(square(), 0.5)
    cfg = AnalysisConfig()
    assert abs(delta_variation(f, [0.0], 0.125, 0.5, cfg).value) < 0.01
    assert delta_variation(f, [0.0], 0.25, 0.25, cfg).value == 0.0
    with pytest.raises(ConfigurationError):
        delta_variation(f, [0.0], 0.5, 0.25, cfg)


def test_monotonicity_flags():
    assert monotonicity_flags(np.array([2.0, 1.9, 1.95, 1.0]), 1e-3) == [1]
    assert monotonicity_flags(np.array([2.0, 2.0005]), 1e-3) == []


def test_calibration_ladder(cap_solution_1d):
    geo = extract_geometry(cap_solution_1d, AnalysisConfig(r_max=0.125, min_cells=4),
                           compute_growth=False)
    profs = [frequency_profile(LocalField.corrected(cap_solution_1d, x, 0.125), x,
                               AnalysisConfig(r_max=0.125, min_cells=4)) for x in geo.free_points()]
    C = calibrate_C_mono(profs, 0.5, 1e-3)
    assert np.isfinite(C)
    for p in profs:
        assert not p.recompute_J(C, 0.5, 1e-3).flags


def test_sandwich_and_lower_bound(cap_solution_1d):
    cfg = AnalysisConfig(r_max=0.125, min_cells=4)
    geo = extract_geometry(cap_solution_1d, cfg, compute_growth=False)
    for x in geo.free_points():
        prof = frequency_profile(LocalField.corrected(cap_solution_1d, x, 0.125), x, cfg)
        rD = prof.radii * prof.column("D") / prof.column("H")
        gap = np.abs(prof.column("I") / rD - 1) / prof.radii ** cfg.theta
        assert np.all(np.isfinite(gap)) and gap.max() < 10
        assert prof.I0 > 1.0


def test_spatial_oscillation_same_point(cap_solution_1d):
    cfg = AnalysisConfig(r_max=0.125, min_cells=4)
    x = extract_geometry(cap_solution_1d, cfg, compute_growth=False).free_points()[0]
    d = spatial_oscillation_diag(cap_solution_1d, x, x, 1 / 48, cfg, CorrectedFieldCache(cap_solution_1d))
    assert d["lhs"] == 0.0 and d["ratio"] == 0.0


def test_spatial_comparability_panel(cap_solution_1d):
    cfg = AnalysisConfig(min_cells=4)
    geo = extract_geometry(cap_solution_1d, cfg, compute_growth=False)
    x0 = geo.free_points()[0]
    pts = x0 + np.linspace(-0.03, 0.03, 7)[:, None]
    rep = spatial_comparability(cap_solution_1d, x0, 0.125, pts, cfg)
    assert rep["count"] == 7
    assert 0 < rep["H_ratio_min"] <= 1 <= rep["H_ratio_max"] < np.inf
    assert rep["I_diff_max"] < 1.0


def test_field_cache_shares_quadratic_obstacle(cap_solution_1d):
    cache = CorrectedFieldCache(cap_solution_1d)
    a = cache.get([0.1], 0.1)
    b = cache.get([-0.2], 0.1)
    assert a is b


@pytest.mark.parametrize("lam,s,name,m", [(1.5, 0.5, "Regular", None), (2.0, 0.5, "Singular", 1),
                                          (2.6, 0.3, "EvenPlus2s", 1), (3.3, 0.3, "OddPlusS", 2),
                                          (2.9, 0.3, "Other", None)])
def test_classification(lam, s, name, m):
    c = classify_frequency(lam, s)
    assert c.name == name and c.m == m


def test_classification_ambiguity():
    # at s = 1/2 the classes 2m + 2s = 3 and 2m - 1 + s = 3.5 both lie within 0.4 of 3.2
    c = classify_frequency(3.2, 0.5, tol=0.4)
    assert c.ambiguous
    with pytest.raises(ConfigurationError):
        classify_frequency(0.0, 0.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.6, 1.6), st.floats(0.15, 0.28), st.floats(-0.2, 0.2))
def test_scaling_invariance(c, r, rho, x0):
    s = 0.35
    p = Polynomial(1, {(2,): 1.0, (3,): 0.4, (1,): -0.3})
    E = extend(p, s)
    # u_hat(y) = c u(x0 + r y)
    g = WeightedGrid.box(1, 1 - 2 * s, H)
    xg = round(x0 / H) * H  # centre on a node of the same grid
    Ehat = E.translate([-xg, 0.0]).scale_variables([r, r]) * c
    I_hat = frequency_record(LocalField.from_polynomial(g, Ehat), [0.0], rho).I
    I = frequency_record(LocalField.from_polynomial(g, E), [xg], rho * r).I
    assert I_hat == pytest.approx(I, rel=0.01)
