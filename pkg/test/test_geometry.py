import math

import numpy as np
import pytest

from errors import DegenerateMetric, NotConformal, QuadratureUnderResolved
from geometry import (Atlas, DiscreteImmersion, area, as_atlas, conformal_factor, conformal_mean_curvature,
                      functionals, gauss_bonnet_residual, integrate, isoperimetric_ratio, lorentz_quasinorm,
                      normalized_total_mean_curvature, observed_order, scalar_mean_curvature, second_fundamental_form,
                      total_mean_curvature, volume, willmore_energy)
from model_surfaces import clifford_torus, mercator_sphere, sphere_atlas
from models import ChartGrid
from .utils import *


def test_unit_sphere_functionals(unit_sphere):
    f = functionals(unit_sphere)
    assert f.W == pytest.approx(FOUR_PI, rel=1e-3)
    assert f.A == pytest.approx(FOUR_PI, rel=1e-3)
    assert f.V == pytest.approx(FOUR_PI / 3, rel=1e-3)
    assert f.M == pytest.approx(FOUR_PI, rel=1e-3)
    assert f.I == pytest.approx(FOUR_PI / (FOUR_PI / 3) ** (2 / 3), rel=2e-3)
    assert f.T == pytest.approx(math.sqrt(FOUR_PI), rel=2e-3)


def test_sphere_shape_helpers(unit_sphere, outward_sphere):
    assert isoperimetric_ratio(unit_sphere) == pytest.approx(FOUR_PI / (FOUR_PI / 3) ** (2 / 3), rel=2e-3)
    assert math.isnan(isoperimetric_ratio(outward_sphere))
    assert normalized_total_mean_curvature(unit_sphere) == pytest.approx(math.sqrt(FOUR_PI), rel=2e-3)
    for chart in unit_sphere.charts:
        h11, h12, h22, norm2 = second_fundamental_form(chart.immersion)
        # umbilic: h_ij = e^{2 lambda} delta_ij
        assert np.allclose(h12, 0.0, atol=1e-9)
        assert np.allclose(h11, h22, rtol=1e-9)
        assert np.allclose(norm2, 2.0, rtol=1e-9)


def test_inward_normal_gives_positive_mean_curvature(unit_sphere):
    for chart in unit_sphere.charts:
        imm = chart.immersion
        H = scalar_mean_curvature(imm)
        mask = chart.partition > 0.5
        assert np.allclose(H[mask], 1.0, atol=1e-9)
        assert np.allclose(np.einsum("...k,...k->...", imm.fields.normal, imm.positions)[mask], -1.0, atol=1e-9)


def test_outward_sphere_flips_volume_and_mean_curvature(outward_sphere):
    assert volume(outward_sphere) == pytest.approx(-FOUR_PI / 3, rel=1e-3)
    assert total_mean_curvature(outward_sphere) == pytest.approx(-FOUR_PI, rel=1e-3)
    assert willmore_energy(outward_sphere) == pytest.approx(FOUR_PI, rel=1e-3)


def test_sphere_scales_like_radius():
    big = sphere_atlas(radius=3.0, center=(1.0, -2.0, 0.5))
    assert area(big) == pytest.approx(9 * FOUR_PI, rel=1e-3)
    assert willmore_energy(big) == pytest.approx(FOUR_PI, rel=1e-3)
    assert total_mean_curvature(big) == pytest.approx(3 * FOUR_PI, rel=1e-3)


def test_gauss_bonnet_sphere(unit_sphere):
    f = functionals(unit_sphere)
    assert abs(gauss_bonnet_residual(unit_sphere)) < 1e-2 * f.E


def test_gauss_bonnet_clifford_torus():
    torus = clifford_torus()
    f = functionals(torus)
    assert f.W == pytest.approx(2 * math.pi ** 2, rel=1e-3)
    assert abs(gauss_bonnet_residual(torus)) < 1e-2 * f.E


def test_catenoid_is_minimal(catenoid):
    assert willmore_energy(catenoid) < 1e-6
    # E = 8 pi tanh(T) on |t| <= T
    T = catenoid.chart.bounds[0][1]
    assert functionals(catenoid).E == pytest.approx(2 * FOUR_PI * math.tanh(T), rel=1e-3)


def test_finite_difference_mean_curvature_is_second_order():
    errors = []
    for res in ((64, 32), (128, 64), (256, 128)):
        imm = mercator_sphere(res)
        H = np.abs(scalar_mean_curvature(imm))[2:-2]
        errors.append(float(np.max(np.abs(H - 1.0))))
    orders = observed_order(errors)
    assert all(o == pytest.approx(2.0, abs=0.3) for o in orders)


def test_conformal_mean_curvature_matches_trace_formula(unit_sphere):
    imm = unit_sphere.charts[0].immersion
    H, defect = conformal_mean_curvature(imm)
    assert defect < 1e-8
    assert np.allclose(H, imm.fields.mean_curvature_vector, atol=1e-8)


def test_stretched_chart_is_not_conformal():
    grid = ChartGrid.square(1.0, 16)
    imm = DiscreteImmersion.from_map(grid, lambda U, V: np.stack([U, 2 * V, np.zeros_like(U)], axis=-1))
    with pytest.raises(NotConformal):
        conformal_factor(imm)


def test_collapsed_chart_is_degenerate():
    grid = ChartGrid.square(1.0, 16)
    imm = DiscreteImmersion.from_map(grid, lambda U, V: np.stack([U, U, np.zeros_like(U)], axis=-1), "line")
    with pytest.raises(DegenerateMetric) as exc:
        area(imm)
    assert "line" in exc.value.detail


def test_refinement_check_flags_coarse_sphere():
    coarse = sphere_atlas(n=16)
    with pytest.raises(QuadratureUnderResolved):
        willmore_energy(coarse, tolerance=1e-6)
    assert willmore_energy(sphere_atlas(), tolerance=1e-3) == pytest.approx(FOUR_PI, rel=1e-3)


def test_integrate_unrefinable_surface_skips_check(unit_sphere):
    chart = unit_sphere.charts[0].immersion
    frozen = DiscreteImmersion(chart=chart.chart, positions=chart.positions, name="frozen")
    value = integrate(frozen, lambda imm: np.ones(imm.chart.resolution), tolerance=1e-12)
    assert value > 0


def test_positions_must_match_chart():
    with pytest.raises(ValueError):
        DiscreteImmersion(chart=ChartGrid.square(1.0, 16), positions=np.zeros((8, 8, 3)))


def test_as_atlas_wraps_single_chart(catenoid):
    atlas = as_atlas(catenoid)
    assert isinstance(atlas, Atlas)
    assert atlas.chart("catenoid").immersion is catenoid
    with pytest.raises(KeyError):
        atlas.chart("missing")


def test_lorentz_quasinorm():
    values = np.array([1.0, 2.0, 3.0])
    weights = np.ones(3)
    assert lorentz_quasinorm(values, weights, 2.0) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        lorentz_quasinorm(values, weights, 1.0)
    with pytest.raises(ValueError):
        lorentz_quasinorm(values, -weights, 2.0)


def test_observed_order():
    assert observed_order([4.0, 1.0, 0.25]) == pytest.approx([2.0, 2.0])
