import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, special

from dtnspeed.errors import ConfigError, ValidationError
from dtnspeed.geometry import (EllipseBoundary, ForwardingRegion, TabulatedBoundary,
                               curve_speed_and_normal, fr_area, fr_membership,
                               g_region_membership, threshold_curve)
from dtnspeed.model_config import RoutingRule, neg_abs_theta_rule

ecc = st.floats(0.0, 0.9)
half_axis = st.floats(0.3, 4.0)


def test_ellipse_radius_formula():
    b = EllipseBoundary(1.0, 0.7)
    assert b(0.0) == pytest.approx(1.7)
    assert b(np.pi / 2) == pytest.approx(0.51)
    assert b.max_radius == pytest.approx(1.7)


@pytest.mark.parametrize("a,e", [(0.0, 0.5), (-1.0, 0.5), (1.0, 1.0), (1.0, -0.1)])
def test_ellipse_rejects_bad_parameters(a, e):
    with pytest.raises(ConfigError):
        EllipseBoundary(a, e)


def test_perimeter_matches_elliptic_integral():
    # oracle: perimeter 4 a E(e^2)
    b = EllipseBoundary(1.0, 0.7)
    s = (np.arange(1 << 14) + 0.5) / (1 << 14)
    length = np.mean(b.speed(-np.pi + 2 * np.pi * s))
    assert length == pytest.approx(4 * special.ellipe(0.49), rel=1e-9)


def test_derivative_matches_finite_difference():
    b = EllipseBoundary(1.0, 0.7)
    h = 1e-6
    fd = (b(np.pi / 2 + h) - b(np.pi / 2 - h)) / (2 * h)
    assert abs(b.derivative(np.pi / 2)) == pytest.approx(abs(fd), rel=1e-8)


def test_max_speed_golden():
    # oracle: bounded optimiser on the closed-form speed
    a, e = 1.0, 0.7
    p = a * (1 - e * e)

    def neg_speed(phi):
        b = p / (1 - e * np.cos(phi))
        db = -p * e * np.sin(phi) / (1 - e * np.cos(phi)) ** 2
        return -2 * np.pi * np.hypot(b, db)

    ref = max(-optimize.minimize_scalar(neg_speed, bounds=(lo, lo + 1.0), method="bounded",
                                        options={"xatol": 1e-12}).fun
              for lo in np.arange(-np.pi, np.pi, 1.0))
    assert ref == pytest.approx(11.42922, abs=1e-5)
    assert EllipseBoundary(a, e).max_speed() == pytest.approx(ref, rel=1e-6)


@given(half_axis, ecc)
def test_area_exact(a, e):
    b = EllipseBoundary(a, e)
    assert fr_area(ForwardingRegion(b)) == pytest.approx(np.pi * a * a * np.sqrt(1 - e * e))


def test_area_monte_carlo():
    region = ForwardingRegion(EllipseBoundary(1.0, 0.7))
    rng = np.random.default_rng(0)
    B = region.B
    pts = rng.uniform(-B, B, (400_000, 2))
    frac = fr_membership(pts, region).mean()
    est = frac * (2 * B) ** 2
    sigma = np.sqrt(frac * (1 - frac) / pts.shape[0]) * (2 * B) ** 2
    assert abs(est - fr_area(region)) < 4 * sigma


def test_membership_inclusive_and_origin():
    region = ForwardingRegion(EllipseBoundary(1.0, 0.7))
    assert fr_membership([0.0, 0.0], region)
    assert fr_membership([1.7, 0.0], region)
    assert not fr_membership([1.7 + 1e-6, 0.0], region)
    assert not fr_membership([-0.31, 0.0], region)


@given(st.floats(-2, 2), st.floats(-2, 2), ecc)
def test_membership_symmetric_in_y(x, y, e):
    region = ForwardingRegion(EllipseBoundary(1.0, e))
    assert fr_membership([x, y], region) == fr_membership([x, -y], region)


@given(st.floats(-1.0, 1.7), st.floats(-1.0, 1.0), st.floats(-1.0, 1.7), st.floats(-1.0, 1.0))
@settings(max_examples=200)
def test_g_region_definition(x1, y1, x2, y2):
    region = ForwardingRegion(EllipseBoundary(1.0, 0.7))
    rp, r = np.array([x1, y1]), np.array([x2, y2])
    expect = bool(region.contains(rp)) and not bool(region.contains(rp + r))
    assert bool(g_region_membership(rp, r, region)) == expect


def test_convexity():
    assert ForwardingRegion(EllipseBoundary(1.0, 0.9)).is_convex()
    star = TabulatedBoundary([1.0, 0.3] * 8)
    assert not ForwardingRegion(star).is_convex()


def test_tabulated_boundary_interpolates():
    b = TabulatedBoundary([1.0, 2.0, 1.0, 2.0])
    assert b(-np.pi) == pytest.approx(1.0)
    assert b(-np.pi + np.pi / 4) == pytest.approx(1.5)
    assert b.area() == pytest.approx(np.mean([b(x) ** 2 for x in np.linspace(-np.pi, np.pi, 200001)[:-1]])
                                     * np.pi, rel=1e-6)


def test_threshold_curve_location_independent():
    rule = neg_abs_theta_rule(EllipseBoundary())
    assert threshold_curve(2.0, 1.0, rule).kind == "boundary"
    assert threshold_curve(1.0, 2.0, rule).empty
    assert threshold_curve(1.0, -1.0, rule).empty


def test_curve_domain_errors():
    rule = neg_abs_theta_rule(EllipseBoundary())
    curve = threshold_curve(2.0, 1.0, rule)
    speed, normal = curve_speed_and_normal(curve, 0.25)
    assert speed > 0 and np.linalg.norm(normal) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        curve_speed_and_normal(curve, 1.5)
    with pytest.raises(ValueError):
        curve_speed_and_normal(threshold_curve(1.0, 2.0, rule), 0.5)


def _tilted(kappa):
    def pot(theta, x, y):
        theta = np.asarray(theta, dtype=float)
        return -np.abs(theta) + kappa * np.asarray(x) * (np.pi - np.abs(theta)) / np.pi

    return RoutingRule(EllipseBoundary(), pot, False, "tilted", -np.pi)


def test_contour_curve_is_level_set():
    rule = _tilted(0.1)
    curve = threshold_curve(0.62, 0.6, rule)
    assert curve.kind == "contour" and not curve.empty
    # K = F and x > -0.2474 here: half an ellipse cut by a vertical chord
    x_cut = -0.02 * np.pi / (0.1 * (np.pi - 0.6))
    step = 2 * rule.region.B / 128
    pts = curve.points
    assert np.all(rule.region.contains(pts * (1 - 2 * step)))
    on_chord = np.abs(pts[:, 0] - x_cut) < step
    on_boundary = ~rule.region.contains(pts * (1 + 2 * step))
    assert np.all(on_chord | on_boundary)
    assert np.all(pts[:, 0] > x_cut - step)
    assert curve.length <= rule.M_b
    assert not curve.notes


def test_contour_too_long_raises():
    # boundary length bound violated by a very wiggly level set
    def pot(theta, x, y):
        theta = np.asarray(theta, dtype=float)
        return -np.abs(theta) + 0.05 * np.sin(40 * np.asarray(x)) * (np.pi - np.abs(theta))

    rule = RoutingRule(EllipseBoundary(), pot, False, "wiggle", -np.pi)
    object.__setattr__(rule, "M_b", 1.0)
    with pytest.raises(ValidationError), pytest.warns(RuntimeWarning, match="components"):
        threshold_curve(0.62, 0.6, rule)
