"""Transmission and buffering stages of the packet.

A transmission stage starts at a fresh carrier heading ``theta`` that sits
at ``r`` relative to the previous carrier.  Either no better node lies in
the new part ``G(r)`` of the forwarding region (the packet starts
buffering, probability ``P_E``) or the best such node takes the packet
(density ``g``).

A buffering stage ends through one of four event families: the carrier
turns with no handoff (A), the carrier turns and hands off (B), a node
inside the region turns into an eligible direction (C), or a node crosses
into the eligibility region (D).  Their rates are frozen at the values at
the start of the sojourn, so sojourns are exponential with rate ``r(theta)``.

Two evaluation routes exist.  For location-independent potentials the
direction integrals over each target direction cell are computed in
closed form (:mod:`.quadrature` pieces), which keeps the discrete kernel
rows and the identity ``r_A + r_B = r0`` exact.  For general potentials
spatial integrals are cell-centre sums, direction integrals use
mass-weighted sub-samples of each direction cell, and ties are weighted
one half.  Sub-sampling keeps the within-cell ordering of directions when
a location-dependent term would otherwise decide it for a whole cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, NumericGateError
from .geometry import ThresholdCurve, boundary_curve, curve_speed_and_normal, threshold_curve
from .quadrature import build_speedup_tables, direction_pieces, g_mask, phi1, phi2

__all__ = [
    "StageModel",
    "TransmissionTables",
    "RateTables",
    "aggregate_rates",
    "conditional_event_probabilities",
]

# generic route materialises g as N*M x N*M; refuse beyond this many entries
GENERIC_MAX_ENTRIES = 40_000_000


def _ramp_above(centre, half, v, tol):
    """Fraction of a uniform spread on ``centre +- half`` lying above ``v``."""
    return np.clip(0.5 + (centre - v) / (2.0 * np.maximum(half, tol)), 0.0, 1.0)


class _RampCDF:
    """Total weight below ``v`` of uniform spreads ``centre +- half``.

    Spreads narrower than ``tol`` count as point masses with ties weighted
    one half.
    """

    def __init__(self, centre, half, weight, tol):
        centre, half, weight = (np.ravel(a).astype(float) for a in
                                np.broadcast_arrays(centre, half, weight))
        self.tol = tol
        point = half <= tol
        order = np.argsort(centre[point])
        self._pv = centre[point][order]
        self._pw = np.concatenate([[0.0], np.cumsum(weight[point][order])])
        a = centre[~point] - half[~point]
        b = centre[~point] + half[~point]
        w = weight[~point]
        slope = w / (b - a)
        oa, ob = np.argsort(a), np.argsort(b)
        self._a, self._b = a[oa], b[ob]
        cum = lambda x: np.concatenate([[0.0], np.cumsum(x)])  # noqa: E731
        self._sa, self._saa = cum(slope[oa]), cum((slope * a)[oa])
        self._sb, self._sab, self._wb = cum(slope[ob]), cum((slope * a)[ob]), cum(w[ob])

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        lo = np.searchsorted(self._pv, v - self.tol, side="left")
        hi = np.searchsorted(self._pv, v + self.tol, side="right")
        out = self._pw[lo] + 0.5 * (self._pw[hi] - self._pw[lo])
        ia = np.searchsorted(self._a, v, side="left")
        ib = np.searchsorted(self._b, v, side="right")
        # finished spreads plus the partial share of those straddling v
        partial = v * (self._sa[ia] - self._sb[ib]) - (self._saa[ia] - self._sab[ib])
        return out + self._wb[ib] + partial


@dataclass(frozen=True, eq=False)
class TransmissionTables:
    """Transmission-stage tables on the grid.

    Attributes
    ----------
    EN, PE : ndarray, shape (N, M)
        Expected better-node count and escape probability per state.
    gdir : ndarray, shape (N, M, N) or None
        Exact route: ``g[i, k, j, l] = gdir[i, k, j] * G[k, l]`` where
        ``gdir`` is the direction-cell average of the density.
    g_dense : ndarray, shape (N, M, N, M) or None
        Generic route: the density at cell centres.
    G : ndarray of bool, shape (M, M)
    """

    EN: np.ndarray
    PE: np.ndarray
    G: np.ndarray
    gdir: np.ndarray | None = None
    g_dense: np.ndarray | None = None

    def g_row(self, i: int, k: int) -> np.ndarray:
        """Density ``g(theta_j, r_l; theta_i, r_k)`` as an ``(N, M)`` array."""
        if self.g_dense is not None:
            return self.g_dense[i, k]
        return self.gdir[i, k][:, None] * self.G[k][None, :]

    def normalization(self, grid) -> np.ndarray:
        """``P_E + sum g * delta_theta * delta_A`` for every state, ``(N, M)``."""
        if self.g_dense is not None:
            total = self.g_dense.sum(axis=(2, 3))
        else:
            total = self.gdir.sum(axis=2) * self.G.sum(axis=1)[None, :]
        return self.PE + total * grid.delta_theta * grid.delta_A


@dataclass(frozen=True, eq=False)
class RateTables:
    """Buffering-stage rates on the grid.

    ``rA`` has shape ``(N, N)`` and ``rB``, ``rC``, ``rDhat`` have shape
    ``(N, N, M)``; all are densities per unit ``theta'`` (and area).
    Aggregates have shape ``(N,)``.
    """

    rA: np.ndarray
    rB: np.ndarray
    rC: np.ndarray
    rDhat: np.ndarray
    rA_agg: np.ndarray
    rB_agg: np.ndarray
    rC_agg: np.ndarray
    rD_agg: np.ndarray
    r: np.ndarray
    r_alt: np.ndarray
    defect: np.ndarray
    bounds: dict


def aggregate_rates(rA, rB, rC, rDhat, grid, r0: float, check: bool = True):
    """Aggregate rates per carrier direction.

    Returns ``(rA_agg, rB_agg, rC_agg, rD_agg, r, r_alt, defect)`` where
    ``r_alt = r0 + rC_agg + rD_agg`` and ``defect = |r - r_alt| / r``.
    A defect above 5% raises :class:`NumericGateError`.
    """
    dth, dA = grid.delta_theta, grid.delta_A
    a = rA.sum(axis=1) * dth
    b = rB.sum(axis=(1, 2)) * dth * dA
    c = rC.sum(axis=(1, 2)) * dth * dA
    d = rDhat.sum(axis=(1, 2)) * dth * dA
    r = a + b + c + d
    r_alt = r0 + c + d
    defect = np.abs(r - r_alt) / r
    if check and np.max(defect) > 0.05:
        raise NumericGateError(
            f"aggregate-rate defect {np.max(defect):.3g} exceeds 5%; refine the grid")
    return a, b, c, d, r, r_alt, defect


def conditional_event_probabilities(tables: RateTables, i: int) -> dict:
    """Probability of each event family ending a sojourn at ``theta_i``.

    Also reports the mean sojourn ``1 / r(theta_i)``.
    """
    r = float(tables.r[i])
    if not r > 0:
        raise NumericGateError("aggregate rate vanished")
    return {
        "A": float(tables.rA_agg[i]) / r,
        "B": float(tables.rB_agg[i]) / r,
        "C": float(tables.rC_agg[i]) / r,
        "D": float(tables.rD_agg[i]) / r,
        "mean_sojourn": 1.0 / r,
    }


class StageModel:
    """Stage quantities for one parameter set on one grid.

    Parameters
    ----------
    params : ModelParams
    grid : Grid
    curve_resolution : int
        Samples per threshold curve.
    generic : bool, optional
        Force the cell-centre route even for location-independent
        potentials.  Defaults to ``not rule.location_independent``.
    n_sub : int
        Sub-samples per direction piece for the crossing rates.
    contour_points : int
        Sampling grid side for contoured threshold curves.
    dir_sub : int
        Sub-samples per direction cell on the generic route.
    """

    def __init__(self, params, grid, curve_resolution: int = 256, generic: bool | None = None,
                 n_sub: int = 8, contour_points: int = 129, dir_sub: int = 8):
        self.params = params
        self.grid = grid
        self.rule = params.rule
        self.density = params.direction_density
        self.region = grid.region
        self.curve_resolution = int(curve_resolution)
        self.n_sub = int(n_sub)
        self.contour_points = int(contour_points)
        self.dir_sub = int(dir_sub)
        if generic is None:
            generic = not self.rule.location_independent
        if not generic and not self.rule.location_independent:
            raise ConfigError("potential", "the exact route needs a location-independent potential")
        self.generic = bool(generic)
        self.G = g_mask(grid)
        self.I2 = self.G.sum(axis=1) * grid.delta_A
        self.area = grid.area
        edges = grid.theta_edges
        self.w = self.density.mass(edges[:-1], edges[1:])
        self.fbar = self.w / grid.delta_theta
        self._tree = cKDTree(grid.points)
        if self.generic:
            th, pts = grid.theta, grid.points
            x, y = pts[:, 0], pts[:, 1]
            self.U = self.rule.U(th[:, None], x[None, :], y[None, :])
            self.U0 = self.rule.U(th, 0.0, 0.0) + 0.0 * th
            n = self.dir_sub
            sub = edges[:-1, None] + grid.delta_theta * np.arange(n + 1)[None, :] / n
            self.w_sub = self.density.mass(sub[:, :-1], sub[:, 1:])            # (N, n)
            self.th_sub = 0.5 * (sub[:, :-1] + sub[:, 1:])
            self.Us = self.rule.U(self.th_sub[:, :, None], x[None, None, :], y[None, None, :])
            self.U0s = self.rule.U(self.th_sub, 0.0, 0.0) + 0.0 * self.th_sub
            # U is taken linear in theta across a sub-cell: its values spread
            # uniformly between the extremes at the sub-cell ends and midpoint
            Ue = self.rule.U(sub[:, :, None], x[None, None, :], y[None, None, :])
            U0e = self.rule.U(sub, 0.0, 0.0) + 0.0 * sub
            self.Us_c, self.Us_h = self._spread(Ue[:, :-1], Ue[:, 1:], self.Us)
            self.U0s_c, self.U0s_h = self._spread(U0e[:, :-1], U0e[:, 1:], self.U0s)
            self.tol = 1e-12 * (1.0 + float(np.max(np.abs(Ue))))
            ramp_tol = 1e-6 * (1.0 + float(np.max(np.abs(Ue))))
            self._below_table = _RampCDF(self.Us_c, self.Us_h, self.w_sub[:, :, None], ramp_tol)
            self._U0_table = _RampCDF(self.U0s_c, self.U0s_h, self.w_sub, ramp_tol)
        else:
            self.tables = build_speedup_tables(self.rule, self.density, grid)
            self.pieces = direction_pieces(self.density, grid)

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def _u(self, theta):
        return self.density.abs_mass(np.abs(np.asarray(theta, dtype=float)))

    def _require_in_F(self, r, name="r"):
        r = np.asarray(r, dtype=float)
        if not np.all(self.region.contains(r)):
            raise ValueError(f"{name} lies outside the forwarding region")
        return r

    def _I2_point(self, r):
        inside = self.region.contains(self.grid.points)
        outside = ~self.region.contains(self.grid.points + np.asarray(r, dtype=float))
        return float(np.sum(inside & outside) * self.grid.delta_A)

    def _G_point(self, r):
        return ~self.region.contains(self.grid.points + np.asarray(r, dtype=float))

    @staticmethod
    def _spread(lo_end, hi_end, mid):
        top = np.maximum(np.maximum(lo_end, hi_end), mid)
        bot = np.minimum(np.minimum(lo_end, hi_end), mid)
        return 0.5 * (top + bot), 0.5 * (top - bot)

    def _above(self, j, v):
        """Fraction of each sub-cell (``j`` indexes them) with potential above ``v``."""
        return _ramp_above(self.Us_c[j], self.Us_h[j], v, self.tol)

    def _below(self, v):
        """``delta_A`` times the direction-position mass with potential below ``v``."""
        return self.grid.delta_A * self._below_table(v)

    def _better(self, theta_p, r_p, theta):
        """Strict ``U(theta', r') > U(theta, 0)``."""
        return float(self.rule.U(theta_p, *r_p)) > float(self.rule.U(theta, 0.0, 0.0))

    # ------------------------------------------------------------------
    # transmission stage, pointwise
    # ------------------------------------------------------------------
    def expected_better_count(self, theta, r) -> float:
        """Expected number of nodes in ``G(r)`` better than a carrier
        heading ``theta``."""
        r = self._require_in_F(r)
        lam = self.params.lam
        if not self.generic:
            return float(lam * self._u(theta) * self._I2_point(r))
        U0 = float(self.rule.U(theta, 0.0, 0.0))
        Gp = self._G_point(r)
        ind = self._above(Ellipsis, U0) * Gp[None, None, :]
        return float(lam * self.grid.delta_A * np.sum(self.w_sub[:, :, None] * ind))

    def escape_probability(self, theta, r) -> float:
        """Probability that no eligible node waits in ``G(r)``."""
        return float(np.exp(-self.expected_better_count(theta, r)))

    def forward_density(self, theta_p, r_p, theta, r) -> float:
        """Density of the next carrier at ``(theta', r')``."""
        r = self._require_in_F(r)
        r_p = self._require_in_F(r_p, "r_p")
        lam = self.params.lam
        f = float(self.density.pdf(theta_p))
        if not self._better(theta_p, r_p, theta):
            return 0.0
        if self.region.contains(np.asarray(r_p) + r):
            return 0.0
        if not self.generic:
            return float(lam * f * np.exp(-lam * self._u(theta_p) * self._I2_point(r)))
        Up = float(self.rule.U(theta_p, *r_p))
        Gp = self._G_point(r)
        inner = self.grid.delta_A * np.sum(self.w_sub[:, :, None] * self._above(Ellipsis, Up)
                                           * Gp[None, None, :])
        return float(lam * f * np.exp(-lam * inner))

    # ------------------------------------------------------------------
    # buffering stage, pointwise
    # ------------------------------------------------------------------
    def rate_A(self, theta, theta_p) -> float:
        """Carrier turns to ``theta'`` and keeps the packet."""
        p = self.params
        f = float(self.density.pdf(theta_p))
        if not self.generic:
            gap = max(0.0, float(self._u(theta_p) - self._u(theta)))
            return float(p.r0 * f * np.exp(-p.lam * self.area * gap))
        U0, Up = float(self.rule.U(theta, 0, 0)), float(self.rule.U(theta_p, 0, 0))
        gap = max(0.0, float(self._below(U0) - self._below(Up)))
        return float(p.r0 * f * np.exp(-p.lam * gap))

    def rate_B(self, theta, theta_p, r_p) -> float:
        """Carrier turns and hands off to a node at ``r'`` heading ``theta'``."""
        r_p = self._require_in_F(r_p, "r_p")
        p = self.params
        f = float(self.density.pdf(theta_p))
        U0, Up = float(self.rule.U(theta, 0, 0)), float(self.rule.U(theta_p, *r_p))
        if not U0 >= Up:
            return 0.0
        if not self.generic:
            u0, up = float(self._u(theta)), float(self._u(theta_p))
            return float(p.r0 * p.lam * f * (1.0 - up) * np.exp(-p.lam * self.area * max(0.0, up - u0)))
        worse = float(self._U0_table(Up))
        gap = max(0.0, float(self._below(U0) - self._below(Up)))
        return float(p.r0 * p.lam * f * worse * np.exp(-p.lam * gap))

    def rate_C(self, theta, theta_p, r_p) -> float:
        """A node at ``r'`` turns into direction ``theta'`` and becomes eligible."""
        r_p = self._require_in_F(r_p, "r_p")
        p = self.params
        f = float(self.density.pdf(theta_p))
        if not self._better(theta_p, r_p, theta):
            return 0.0
        U0 = float(self.rule.U(theta, 0, 0))
        if not self.generic:
            return float(p.lam * p.r0 * f * (1.0 - float(self._u(theta))))
        edges = self.grid.theta_edges
        sub = edges[:-1, None] + self.grid.delta_theta * np.arange(self.dir_sub + 1) / self.dir_sub
        Ue = self.rule.U(sub, *r_p) + 0.0 * sub
        c, h = self._spread(Ue[:, :-1], Ue[:, 1:], self.rule.U(self.th_sub, *r_p) + 0.0 * self.th_sub)
        above = _ramp_above(c, h, U0, self.tol)
        return float(p.lam * p.r0 * f * np.sum(self.w_sub * (1.0 - above)))

    def threshold_curve(self, theta, theta_p) -> ThresholdCurve:
        return threshold_curve(theta, theta_p, self.rule, self.curve_resolution,
                               self.contour_points)

    def rate_D(self, theta, theta_p, s, curve: ThresholdCurve):
        """Crossing rate into eligibility at curve parameter ``s``."""
        if curve.empty:
            return np.zeros_like(np.asarray(s, dtype=float))
        p = self.params
        speed, t = curve_speed_and_normal(curve, s)
        dv = np.array([np.cos(theta) - np.cos(theta_p), np.sin(theta) - np.sin(theta_p)])
        flux = np.maximum(0.0, t @ dv)
        return p.lam * p.v0 * float(self.density.pdf(theta_p)) * flux * speed

    def relocate_rate_D(self, theta, theta_p, curve: ThresholdCurve) -> np.ndarray:
        """Crossing rate moved to the nearest grid point, per unit area."""
        out = np.zeros(self.grid.M)
        if curve.empty:
            return out
        p = self.params
        dv = np.array([np.cos(theta) - np.cos(theta_p), np.sin(theta) - np.sin(theta_p)])
        rates = (p.lam * p.v0 * float(self.density.pdf(theta_p))
                 * np.maximum(0.0, curve.normals @ dv) * curve.speed)
        _, idx = self._tree.query(curve.points)
        np.add.at(out, idx, rates / len(curve))
        return out / self.grid.delta_A

    # ------------------------------------------------------------------
    # tables
    # ------------------------------------------------------------------
    def transmission_tables(self) -> TransmissionTables:
        if self.generic:
            return self._transmission_generic()
        return self._transmission_exact()

    def rate_tables(self, check: bool = True) -> RateTables:
        if self.generic:
            rA, rB, rC, rDhat, rD_curve_max = self._rates_generic()
        else:
            rA, rB, rC, rDhat, rD_curve_max = self._rates_exact()
        agg = aggregate_rates(rA, rB, rC, rDhat, self.grid, self.params.r0, check=check)
        bounds = self._bounds(rA, rB, rC, rD_curve_max, agg[4])
        return RateTables(rA, rB, rC, rDhat, *agg, bounds=bounds)

    # -- exact route --------------------------------------------------
    def _transmission_exact(self) -> TransmissionTables:
        g, P = self.grid, self.pieces
        lam = self.params.lam
        u_th = self.tables.I1
        c = lam * self.I2                                    # (M,)
        EN = u_th[:, None] * c[None, :]
        PE = np.exp(-EN)
        du = P.u_hi - P.u_lo
        # integral of f_D exp(-c u) over each piece, for every c
        piece = P.mass[None, :] * np.exp(-c[:, None] * P.u_lo[None, :]) * phi1(c[:, None] * du[None, :])
        better = P.better_than(g.theta).astype(float)       # (N, P)
        onehot = P.onehot(g.N)
        gdir = np.einsum("ip,kp,pj->ikj", better, piece, onehot, optimize=True)
        gdir *= lam / g.delta_theta
        return TransmissionTables(EN, PE, self.G, gdir=gdir)

    def _rates_exact(self):
        g, P, p = self.grid, self.pieces, self.params
        lam, r0 = p.lam, p.r0
        N, M = g.N, g.M
        u0 = self.tables.I1                                  # (N,)
        c4 = lam * self.area
        du = P.u_hi - P.u_lo
        better = P.better_than(g.theta)                      # (N, P)
        onehot = P.onehot(N)
        shift = np.maximum(0.0, P.u_lo[None, :] - u0[:, None])
        decay = np.exp(-c4 * shift)
        worse_A = P.mass[None, :] * decay * phi1(c4 * du)[None, :]
        pieceA = np.where(better, P.mass[None, :], worse_A)
        rA = pieceA @ onehot / g.delta_theta
        avg_B = (1.0 - P.u_lo)[None, :] * phi1(c4 * du)[None, :] - (du * phi2(c4 * du))[None, :]
        pieceB = np.where(better, 0.0, P.mass[None, :] * decay * avg_B)
        rB_cell = r0 * lam * (pieceB @ onehot) / g.delta_theta
        pieceC = np.where(better, P.mass[None, :], 0.0) * (1.0 - u0)[:, None]
        rC_cell = lam * r0 * (pieceC @ onehot) / g.delta_theta
        rB = np.repeat(rB_cell[:, :, None], M, axis=2)
        rC = np.repeat(rC_cell[:, :, None], M, axis=2)

        # crossings: the threshold curve is the whole boundary when K = F
        curve = boundary_curve(0.0, 0.0, self.rule.boundary, self.curve_resolution)
        n = self.n_sub
        q = (np.arange(n) + 0.5) / n
        x = (P.lo[:, None] + q[None, :] * (P.hi - P.lo)[:, None]).ravel()    # (P*n,)
        wx = np.repeat(P.mass / n, n)
        cell_x = np.repeat(P.cell, n)
        bx = np.repeat(better, n, axis=1)                                       # (N, P*n)
        onehot_x = np.zeros((x.size, N))
        onehot_x[np.arange(x.size), cell_x] = 1.0
        tx, ty = curve.normals[:, 0], curve.normals[:, 1]
        _, idx = self._tree.query(curve.points)
        reloc = np.zeros((len(curve), M))
        reloc[np.arange(len(curve)), idx] = 1.0
        rDhat = np.empty((N, N, M))
        rD_curve_max = np.zeros((N, N))
        for i in range(N):
            th = g.theta[i]
            flux = np.maximum(0.0, (np.cos(th) - np.cos(x))[:, None] * tx[None, :]
                              + (np.sin(th) - np.sin(x))[:, None] * ty[None, :])   # (P*n, S)
            wflux = (wx * bx[i])[:, None] * flux
            cell_flux = onehot_x.T @ wflux                                     # (N, S)
            D = lam * p.v0 * cell_flux * curve.speed[None, :] / g.delta_theta  # per unit theta'
            rD_curve_max[i] = D.max(axis=1)
            rDhat[i] = (D / len(curve)) @ reloc / g.delta_A
        return rA * r0, rB, rC, rDhat, rD_curve_max

    # -- generic route ------------------------------------------------
    def _check_size(self):
        g = self.grid
        if (g.N * g.M) ** 2 > GENERIC_MAX_ENTRIES:
            raise NumericGateError(
                f"generic route needs {(g.N * g.M) ** 2:.3g} kernel entries; reduce the grid")

    def _transmission_generic(self) -> TransmissionTables:
        self._check_size()
        g, lam = self.grid, self.params.lam
        N, M = g.N, g.M
        Gf = self.G.astype(float)
        # Aw[i, j, l]: mass of cell j better at r_l than a carrier heading theta_i
        Aw = np.einsum("js,ijsl->ijl", self.w_sub,
                       _ramp_above(self.Us_c[None], self.Us_h[None],
                                   self.U0[:, None, None, None], self.tol), optimize=True)
        EN = lam * g.delta_A * np.einsum("ijl,kl->ik", Aw, Gf, optimize=True)
        PE = np.exp(-EN)
        # P[l', (j, l)]: direction mass at l' better than U[j, l]
        Uflat = self.U.ravel()
        P = np.zeros((M, N * M))
        for jp in range(N):
            for q in range(self.dir_sub):
                if self.w_sub[jp, q] > 0:
                    P += self.w_sub[jp, q] * self._above((jp, q, slice(None), None), Uflat[None, :])
        E = lam * g.delta_A * (Gf @ P)                                      # (M_k, N*M)
        g_dense = (lam / g.delta_theta * Aw[:, None, :, :]
                   * Gf[None, :, None, :] * np.exp(-E).reshape(1, M, N, M))
        return TransmissionTables(EN, PE, self.G, g_dense=g_dense)

    def _rates_generic(self):
        self._check_size()
        g, p = self.grid, self.params
        lam, r0 = p.lam, p.r0
        N, M = g.N, g.M
        dth = g.delta_theta
        ws = self.w_sub                                                     # (N_j, n)
        S0 = self._below(self.U0)                                           # (N_i,)
        S0s = self._below(self.U0s)                                         # (N_j, n)
        SUs = self._below(self.Us)                                          # (N_j, n, M)
        rA = r0 / dth * np.einsum(
            "js,ijs->ij", ws, np.exp(-lam * np.maximum(0.0, S0[:, None, None] - S0s[None])))
        # I3s[j, s, l]: carrier-direction mass with potential below the node's
        I3s = self._U0_table(self.Us)
        worse = 1.0 - _ramp_above(self.Us_c[None], self.Us_h[None],
                                  self.U0[:, None, None, None], self.tol)       # (N_i, N_j, n, M)
        decay = np.exp(-lam * np.maximum(0.0, S0[:, None, None, None] - SUs[None]))
        rB = r0 * lam / dth * np.einsum("js,ijsl,jsl,ijsl->ijl", ws, worse, I3s, decay,
                                        optimize=True)
        Aw = np.einsum("js,ijsl->ijl", ws, 1.0 - worse, optimize=True)
        below = np.einsum("qs,iqsl->il", ws, worse, optimize=True)
        rC = lam * r0 / dth * Aw * below[:, None, :]
        rDhat = np.zeros((N, N, M))
        rD_curve_max = np.zeros((N, N))
        for i in range(N):
            for j in range(N):
                if self.w[j] == 0:
                    continue
                # sub-sample the target cell only where its sub-cells disagree on K
                masks = self.Us[j] > self.U0[i] + self.tol
                live = ws[j] > 0
                if np.all(masks[live] == masks[live][0]):
                    samples = [(g.theta[j], self.w[j])]
                else:
                    samples = [(self.th_sub[j, q], ws[j, q]) for q in np.flatnonzero(live)]
                for th_p, mass in samples:
                    curve = self.threshold_curve(g.theta[i], th_p)
                    if curve.empty:
                        continue
                    dv = np.array([np.cos(g.theta[i]) - np.cos(th_p),
                                   np.sin(g.theta[i]) - np.sin(th_p)])
                    rates = (lam * p.v0 * mass / dth * np.maximum(0.0, curve.normals @ dv)
                             * curve.speed)
                    rD_curve_max[i, j] = max(rD_curve_max[i, j], rates.max() * self.w[j] / mass)
                    _, idx = self._tree.query(curve.points)
                    np.add.at(rDhat[i, j], idx, rates / len(curve))
        rDhat /= g.delta_A
        return rA, rB, rC, rDhat, rD_curve_max

    # -- bounds -------------------------------------------------------
    def _bounds(self, rA, rB, rC, rD_curve_max, r):
        """Violation counts of the rate bounds.

        All bounds are compared on direction-cell averages: the lower bound
        on ``r_A`` uses the cell average of ``eps_D 1[f_D > 0]``.
        """
        p, g = self.params, self.grid
        lam, r0, v0 = p.lam, p.r0, p.v0
        tol = 1e-9
        edges = g.theta_edges
        fbar = self.fbar
        support = self._support_fraction(edges)
        live = fbar > 0
        lowA = r0 * self.density.epsilon_d * support * np.exp(-lam * self.area)
        viol = {
            "rA_lower": int(np.sum((rA < lowA[None, :] * (1 - tol)) & live[None, :])),
            "rA_upper": int(np.sum(rA > r0 * fbar[None, :] * (1 + tol) + 1e-300)),
            "rB_upper": int(np.sum(rB > r0 * lam * fbar[None, :, None] * (1 + tol) + 1e-300)),
            "rC_upper": int(np.sum(rC > r0 * lam * fbar[None, :, None] * (1 + tol) + 1e-300)),
            "rD_upper": int(np.sum(rD_curve_max > 2 * self.rule.M_b * lam * v0 * fbar[None, :]
                                   * (1 + tol) + 1e-300)),
            "r_upper": int(np.sum(r > (r0 + r0 * lam * self.area + 2 * self.rule.M_b * lam * v0)
                                  * (1 + tol))),
        }
        return viol

    def _support_fraction(self, edges):
        d = self.density
        frac = np.zeros(edges.size - 1)
        lo_b, hi_b = d.breaks[:-1], d.breaks[1:]
        pos = d.values > 0
        for j in range(edges.size - 1):
            ov = np.clip(np.minimum(hi_b, edges[j + 1]) - np.maximum(lo_b, edges[j]), 0, None)
            frac[j] = np.sum(ov[pos]) / (edges[j + 1] - edges[j])
        return frac
