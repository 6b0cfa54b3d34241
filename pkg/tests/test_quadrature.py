import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from dtnspeed.errors import ConfigError
from dtnspeed.geometry import EllipseBoundary, ForwardingRegion
from dtnspeed.model_config import DirectionDensity, RoutingRule
from dtnspeed.quadrature import (build_grid, build_speedup_tables, direction_pieces, g_mask,
                                 integrate_cells, phi1, phi2)


def test_default_grid_golden(grid):
    # oracle: count lattice centres with r - e x <= p, the focal form of the ellipse
    L, B, e, p = 21, 1.7, 0.7, 0.51
    c = B * (-1 + (2 * np.arange(1, L + 1) - 1) / L)
    X, Y = np.meshgrid(c, c)
    count = int(np.sum(np.hypot(X, Y) - e * X <= p))
    assert count == 86
    assert grid.M == 86
    assert grid.n_states == 36 * 87


def test_grid_measures(grid):
    assert grid.delta_theta == pytest.approx(2 * np.pi / 36)
    assert grid.delta_A == pytest.approx((2 * 1.7 / 21) ** 2)
    assert grid.V_d == pytest.approx(grid.delta_theta * grid.delta_A)
    assert np.array_equal(grid.theta[::-1], -grid.theta)
    assert grid.theta[0] == pytest.approx(-np.pi + np.pi / 36)


@pytest.mark.parametrize("N,L", [(3, 21), (36, 2), (36.5, 21)])
def test_grid_rejects_bad_sizes(params, N, L):
    with pytest.raises(ConfigError):
        build_grid(params.region, N, L)


def test_integrate_constant(grid):
    val = integrate_cells(lambda t, x, y: np.ones_like(t * x), grid)
    assert val == pytest.approx(2 * np.pi * grid.area)


def test_integrate_converges_to_second_moment(params):
    # oracle: polar integral of r^2 over the ellipse with adaptive quadrature
    b = params.rule.boundary
    ref, _ = integrate.quad(lambda phi: b(phi) ** 4 / 4, -np.pi, np.pi, epsabs=1e-13)
    ref *= 2 * np.pi
    fine = build_grid(params.region, 8, 161)
    val = integrate_cells(lambda t, x, y: x * x + y * y + 0 * t, fine)
    assert val == pytest.approx(ref, rel=1e-2)


def test_integrate_reports_bad_cell(grid):
    with pytest.raises(FloatingPointError, match="cell"), np.errstate(divide="ignore"):
        integrate_cells(lambda t, x, y: 1.0 / (x - x) + t, grid)


@given(st.floats(0.0, 60.0))
def test_phi_functions_against_quadrature(z):
    ref1, _ = integrate.quad(lambda t: np.exp(-z * t), 0, 1, epsabs=1e-14)
    ref2, _ = integrate.quad(lambda t: t * np.exp(-z * t), 0, 1, epsabs=1e-14)
    assert float(phi1(z)) == pytest.approx(ref1, rel=1e-9, abs=1e-14)
    assert float(phi2(z)) == pytest.approx(ref2, rel=1e-9, abs=1e-14)


@given(st.floats(np.pi / 16, np.pi / 2 - 1e-3), st.integers(4, 40))
def test_direction_pieces_partition(w, N):
    region = ForwardingRegion(EllipseBoundary())
    g = build_grid(region, N, 5)
    d = DirectionDensity.four_window(w)
    P = direction_pieces(d, g)
    assert P.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(P.lo < P.hi)
    assert np.all(P.u_lo <= P.u_hi + 1e-15)
    edges = g.theta_edges
    assert np.all(P.lo >= edges[P.cell] - 1e-12) and np.all(P.hi <= edges[P.cell + 1] + 1e-12)
    # no piece straddles the cell centre or zero
    assert not np.any((P.lo < g.theta[P.cell] - 1e-12) & (P.hi > g.theta[P.cell] + 1e-12))
    assert not np.any((P.lo < -1e-12) & (P.hi > 1e-12))


def test_speedup_tables(params, grid):
    T = build_speedup_tables(params.rule, params.direction_density, grid)
    assert np.allclose(T.I1 + T.I3, 1.0)
    u = np.abs(grid.theta) / np.pi
    assert np.allclose(T.I1, u)
    assert np.all(T.I4 >= 0)
    assert T.I2.max() <= grid.area + 1e-12


def test_g_area_monte_carlo(params, grid):
    # oracle: dart throwing for |G(r)| at a few grid points
    region = params.region
    rng = np.random.default_rng(7)
    B = region.B
    darts = rng.uniform(-B, B, (200_000, 2))
    inF = region.contains(darts)
    G = g_mask(grid)
    fine = build_grid(region, 4, 121)
    for k in [0, 20, 43, 85]:
        r = grid.points[k]
        hit = inF & ~region.contains(darts + r)
        est = hit.mean() * (2 * B) ** 2
        sd = np.sqrt(hit.mean() * (1 - hit.mean()) / darts.shape[0]) * (2 * B) ** 2
        fine_area = _fine_g_area(region, fine, r)
        assert abs(fine_area - est) < 3 * sd + 0.01 * region.area
        assert G[k].sum() * grid.delta_A == pytest.approx(est, abs=0.06 * region.area)


def _fine_g_area(region, fine, r):
    return float(np.sum(~region.contains(fine.points + r)) * fine.delta_A)


def test_speedup_needs_location_independent(params, grid):
    rule = RoutingRule(params.rule.boundary, lambda t, x, y: -np.abs(t) + 0 * x, False, "ld", -np.pi)
    with pytest.raises(ConfigError):
        build_speedup_tables(rule, params.direction_density, grid)
