"""Discretisation of the packet state space.

Directions are split into ``N`` equal cells centred at
``theta_i = -pi + (pi/N)(2i - 1)``.  Space is covered by an ``L x L``
lattice of square cells over ``[-B, B]^2``; the centres inside the
forwarding region are kept.  Cell measures are ``delta_theta = 2 pi/N``,
``delta_A = (2B/L)^2`` and their product ``V_d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Grid",
    "build_grid",
    "integrate_cells",
    "SpeedupTables",
    "build_speedup_tables",
    "DirectionPieces",
    "direction_pieces",
    "g_mask",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class Grid:
    """Direction cells and retained spatial cell centres.

    Attributes
    ----------
    N, L : int
        Direction count and linear spatial resolution.
    B : float
        Bounding half-width.
    theta : ndarray, shape (N,)
        Direction cell centres.
    theta_edges : ndarray, shape (N + 1,)
        Direction cell edges from ``-pi`` to ``pi``.
    points : ndarray, shape (M, 2)
        Retained spatial cell centres, x-major then y.
    delta_theta, delta_A, V_d : float
        Cell measures.
    region : ForwardingRegion
    """

    N: int
    L: int
    B: float
    theta: np.ndarray
    theta_edges: np.ndarray
    points: np.ndarray
    delta_theta: float
    delta_A: float
    V_d: float
    region: object

    @property
    def M(self) -> int:
        return int(self.points.shape[0])

    @property
    def area(self) -> float:
        """Discrete area ``M * delta_A`` of the forwarding region."""
        return self.M * self.delta_A

    @property
    def n_states(self) -> int:
        return self.N * (self.M + 1)


def build_grid(region, N: int = 36, L: int = 21) -> Grid:
    """Build the direction and spatial grids for ``region``.

    Parameters
    ----------
    region : ForwardingRegion
    N, L : int
        Direction count and spatial resolution, both at least 4.

    Returns
    -------
    Grid
    """
    if int(N) != N or N < 4:
        raise ConfigError("grid_n", f"must be an integer >= 4, got {N!r}")
    if int(L) != L or L < 4:
        raise ConfigError("grid_l", f"must be an integer >= 4, got {L!r}")
    N, L = int(N), int(L)
    if not region.area > 0:
        raise ConfigError("boundary", "forwarding region has zero area")
    B = region.B
    # (2i - 1 - N) keeps +theta and -theta exact negatives of each other
    theta = (2.0 * np.arange(1, N + 1) - 1.0 - N) * np.pi / N
    edges = (2.0 * np.arange(N + 1) - N) * np.pi / N
    c = B * (-1.0 + (2.0 * np.arange(1, L + 1) - 1.0) / L)
    X, Y = np.meshgrid(c, c, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = pts[region.contains(pts)]
    if pts.shape[0] == 0:
        raise ConfigError("grid_l", "no spatial cell centre falls inside the forwarding region")
    d_theta = TWO_PI / N
    d_A = (2.0 * B / L) ** 2
    return Grid(N, L, B, theta, edges, pts, d_theta, d_A, 8.0 * np.pi * B * B / (N * L * L),
                region)


def integrate_cells(f, grid: Grid) -> float:
    """Cell-centre sum ``V_d * sum_{i,j} f(theta_i, r_j)``.

    ``f`` is called once as ``f(theta, x, y)`` with ``theta`` of shape
    ``(N, 1)`` and ``x, y`` of shape ``(1, M)`` and must broadcast to
    ``(N, M)``.
    """
    vals = np.broadcast_to(
        np.asarray(f(grid.theta[:, None], grid.points[None, :, 0], grid.points[None, :, 1]),
                   dtype=float), (grid.N, grid.M))
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise FloatingPointError(
            f"non-finite integrand at cell theta={grid.theta[i]!r}, r={tuple(grid.points[j])!r}")
    return float(grid.V_d * vals.sum())


def g_mask(grid: Grid) -> np.ndarray:
    """``G[k, l]`` is True when grid point ``l`` lies in ``G(r_k)``."""
    shifted = grid.points[None, :, :] + grid.points[:, None, :]
    return ~grid.region.contains(shifted)


@dataclass(frozen=True, eq=False)
class SpeedupTables:
    """Direction and area integrals for location-independent potentials.

    ``I1[i]`` is the direction mass strictly better than ``theta_i``,
    ``I3[i]`` the mass strictly worse, ``I4[i, j]`` the mass between them
    and ``I2[k]`` the grid area of ``G(r_k)``.
    """

    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    I4: np.ndarray
    G: np.ndarray


def build_speedup_tables(rule, density, grid: Grid) -> SpeedupTables:
    """Precompute the speedup integrals.

    With a location-independent potential ordering by potential is the
    same as ordering by ``|theta|`` (strict monotonicity), so the direction
    integrals are exact masses of ``|theta|`` intervals.
    """
    if not rule.location_independent:
        raise ConfigError("potential", "speedup tables need a location-independent potential")
    u = density.abs_mass(np.abs(grid.theta))
    G = g_mask(grid)
    I2 = G.sum(axis=1) * grid.delta_A
    I4 = np.maximum(0.0, u[None, :] - u[:, None])
    return SpeedupTables(u, I2, 1.0 - u, I4, G)


# ---------------------------------------------------------------------------
# Exact direction cell integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirectionPieces:
    """Sub-intervals of the direction cells on which the density is constant.

    Every cell is cut at its centre, at zero and at the density breakpoints
    and their mirror images.  On each piece the cumulative coordinate
    ``u(x) = P(|Theta| < |x|)`` is linear, so integrals of functions of
    ``u`` weighted by ``f_D`` have closed forms.

    Attributes
    ----------
    cell : ndarray of int
        Direction cell of each piece.
    lo, hi : ndarray
        Piece end points in ``x``.
    abs_lo, abs_hi : ndarray
        Range of ``|x|`` over the piece.
    mass : ndarray
        ``int f_D`` over the piece.
    u_lo, u_hi : ndarray
        Range of ``u`` over the piece.
    """

    cell: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    abs_lo: np.ndarray
    abs_hi: np.ndarray
    mass: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def better_than(self, theta) -> np.ndarray:
        """``mask[i, p]``: piece ``p`` has ``|x| <= |theta_i|``."""
        tau = np.abs(np.atleast_1d(np.asarray(theta, dtype=float)))
        return self.abs_hi[None, :] <= tau[:, None] * (1 + 1e-12) + 1e-14

    def onehot(self, n_cells: int) -> np.ndarray:
        """Matrix summing piece values into their direction cells."""
        out = np.zeros((self.cell.size, n_cells))
        out[np.arange(self.cell.size), self.cell] = 1.0
        return out


def direction_pieces(density, grid: Grid) -> DirectionPieces:
    edges = grid.theta_edges
    bps = density.breaks
    cuts = np.concatenate([edges, grid.theta, bps, -bps, [0.0]])
    cuts = np.unique(np.clip(cuts, -np.pi, np.pi))
    # merge cut points closer than rounding noise
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-13])]
    cuts[0], cuts[-1] = -np.pi, np.pi
    lo, hi = cuts[:-1], cuts[1:]
    mid = 0.5 * (lo + hi)
    cell = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, grid.N - 1)
    mass = density.mass(lo, hi)
    a_lo = np.where(mid >= 0, np.abs(lo), np.abs(hi))
    a_hi = np.where(mid >= 0, np.abs(hi), np.abs(lo))
    u_lo = density.abs_mass(a_lo)
    u_hi = density.abs_mass(a_hi)
    return DirectionPieces(cell, lo, hi, a_lo, a_hi, mass, u_lo, u_hi)


def phi1(z):
    """``(1 - exp(-z)) / z`` with the limit 1 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, -np.expm1(-zs) / zs)


def phi2(z):
    """``(1 - exp(-z)(1 + z)) / z^2`` with the limit 1/2 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    exact = (-np.expm1(-zs) - zs * np.exp(-zs)) / (zs * zs)
    series = 0.5 - z / 3.0 + z * z / 8.0 - z ** 3 / 30.0
    return np.where(small, series, exact)
