"""Planar geometry of the forwarding region and the eligibility region.

The forwarding region ``F`` is star-shaped about the carrier and given in
polar form by a boundary function ``b(phi)``.  The eligibility region
``K(theta, theta')`` is the part of ``F`` where a node heading ``theta'``
beats a carrier heading ``theta``; its boundary is the threshold curve.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage import measure

from .errors import ConfigError, ValidationError

__all__ = [
    "Boundary",
    "EllipseBoundary",
    "TabulatedBoundary",
    "ForwardingRegion",
    "ThresholdCurve",
    "fr_membership",
    "fr_area",
    "g_region_membership",
    "threshold_curve",
    "curve_speed_and_normal",
]

TWO_PI = 2.0 * np.pi


def _wrap(phi):
    return (np.asarray(phi, dtype=float) + np.pi) % TWO_PI - np.pi


class Boundary:
    """Radial boundary function ``b(phi)`` on [-pi, pi).

    Subclasses provide ``__call__``, ``derivative`` and ``max_radius``.
    """

    kind = "abstract"

    def __call__(self, phi):
        raise NotImplementedError

    def derivative(self, phi):
        raise NotImplementedError

    @property
    def max_radius(self) -> float:
        raise NotImplementedError

    def area(self) -> float:
        phi = -np.pi + TWO_PI * (np.arange(1 << 16) + 0.5) / (1 << 16)
        return float(0.5 * np.mean(self(phi) ** 2) * TWO_PI)

    def point(self, phi):
        phi = np.asarray(phi, dtype=float)
        b = self(phi)
        return np.stack([b * np.cos(phi), b * np.sin(phi)], axis=-1)

    def tangent(self, phi):
        """Derivative of the boundary point with respect to ``phi``."""
        phi = np.asarray(phi, dtype=float)
        b, db = self(phi), self.derivative(phi)
        c, s = np.cos(phi), np.sin(phi)
        return np.stack([db * c - b * s, db * s + b * c], axis=-1)

    def normal(self, phi):
        """Outward unit normal (the curve runs counter-clockwise)."""
        t = self.tangent(phi)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def speed(self, phi):
        """``|b'(s)|`` for the parametrisation ``phi = -pi + 2 pi s``."""
        return TWO_PI * np.linalg.norm(self.tangent(phi), axis=-1)

    def max_speed(self, n: int = 1 << 16) -> float:
        phi = -np.pi + TWO_PI * np.arange(n) / n
        return float(np.max(self.speed(phi)))


class EllipseBoundary(Boundary):
    """Ellipse with one focus at the carrier, major axis along +x.

    ``b(phi) = a (1 - eps^2) / (1 - eps cos(phi))``.
    """

    kind = "ellipse"

    def __init__(self, a: float = 1.0, eccentricity: float = 0.7):
        if not (np.isfinite(a) and a > 0):
            raise ConfigError("a", f"must be > 0, got {a!r}")
        if not (np.isfinite(eccentricity) and 0 <= eccentricity < 1):
            raise ConfigError("eccentricity", f"must lie in [0, 1), got {eccentricity!r}")
        self.a = float(a)
        self.eccentricity = float(eccentricity)
        self.p = self.a * (1 - self.eccentricity ** 2)

    def __call__(self, phi):
        return self.p / (1 - self.eccentricity * np.cos(phi))

    def derivative(self, phi):
        e = self.eccentricity
        return -self.p * e * np.sin(phi) / (1 - e * np.cos(phi)) ** 2

    @property
    def max_radius(self) -> float:
        return self.a * (1 + self.eccentricity)

    def area(self) -> float:
        return float(np.pi * self.a ** 2 * np.sqrt(1 - self.eccentricity ** 2))

    def __repr__(self):
        return f"EllipseBoundary(a={self.a!r}, eccentricity={self.eccentricity!r})"


class TabulatedBoundary(Boundary):
    """Periodic piecewise-linear boundary through ``values`` at
    ``phi_k = -pi + 2 pi k / n``."""

    kind = "tabulated"

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 3:
            raise ConfigError("boundary", "need at least three tabulated radii")
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ConfigError("boundary", "tabulated radii must be finite and > 0")
        self.values = values
        self.n = values.size
        self.h = TWO_PI / self.n

    def __call__(self, phi):
        t = (_wrap(phi) + np.pi) / self.h
        k = np.floor(t).astype(int) % self.n
        w = t - np.floor(t)
        return (1 - w) * self.values[k] + w * self.values[(k + 1) % self.n]

    def derivative(self, phi):
        # central differences with a step of 1e-6 in the unit parameter
        d = TWO_PI * 1e-6
        return (self(np.asarray(phi) + d) - self(np.asarray(phi) - d)) / (2 * d)

    @property
    def max_radius(self) -> float:
        return float(self.values.max())

    def area(self) -> float:
        b0, b1 = self.values, np.roll(self.values, -1)
        return float(0.5 * np.sum(self.h * (b0 * b0 + b0 * b1 + b1 * b1) / 3))

    def max_speed(self, n: int = 1 << 16) -> float:
        # exact for the piecewise-linear form: check both ends of every segment
        b0, b1 = self.values, np.roll(self.values, -1)
        slope = (b1 - b0) / self.h
        return float(TWO_PI * np.max(np.sqrt(np.maximum(b0, b1) ** 2 + slope ** 2)))


@dataclass(frozen=True, eq=False)
class ForwardingRegion:
    """Closed region ``{r : |r| <= b(angle(r))}`` around the carrier."""

    boundary: Boundary
    B: float = field(init=False)
    area: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "B", float(self.boundary.max_radius))
        object.__setattr__(self, "area", float(self.boundary.area()))

    @property
    def bounding_half_width(self) -> float:
        return self.B

    def contains(self, r) -> np.ndarray:
        """Inclusive membership test for points of shape ``(..., 2)``."""
        r = np.asarray(r, dtype=float)
        x, y = r[..., 0], r[..., 1]
        rad = np.hypot(x, y)
        b = self.boundary(np.arctan2(y, x))
        return rad <= b * (1 + 1e-12)

    def is_convex(self, n: int = 4096) -> bool:
        phi = -np.pi + TWO_PI * np.arange(n) / n
        p = self.boundary.point(phi)
        e = np.roll(p, -1, axis=0) - p
        cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
        scale = np.mean(np.sum(e * e, axis=1))
        return bool(np.all(cross >= -1e-9 * scale))


def fr_membership(r, region: ForwardingRegion) -> np.ndarray:
    """True iff ``|r| <= b(angle(r))``; the origin is always inside."""
    return region.contains(r)


def fr_area(region: ForwardingRegion) -> float:
    """Exact ellipse area or ``0.5 * int b^2`` for other boundaries."""
    return region.area


def g_region_membership(r_prime, r, region: ForwardingRegion) -> np.ndarray:
    """True iff ``r'`` lies in ``F`` but ``r' + r`` does not.

    ``r`` is the position of the new carrier relative to the old one, so
    this is the part of the new forwarding region not already covered by
    the old one.
    """
    r_prime = np.asarray(r_prime, dtype=float)
    return region.contains(r_prime) & ~region.contains(r_prime + np.asarray(r, dtype=float))


# ---------------------------------------------------------------------------
# Threshold curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThresholdCurve:
    """Sampled boundary of the eligibility region ``K(theta, theta')``.

    Samples sit at ``s_i = (i + 1/2) / n`` with ``delta_s = 1/n``.  ``kind``
    is ``"empty"``, ``"boundary"`` (the whole forwarding-region boundary,
    parametrised by ``phi = -pi + 2 pi s``) or ``"contour"`` (an extracted
    level set parametrised by normalised arc length).
    """

    theta: float
    theta_prime: float
    kind: str
    s: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    speed: np.ndarray
    boundary: Boundary | None = None
    polyline: np.ndarray | None = None  # (2, n_seg, 2): segment starts and vectors
    polyline_normals: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return self.kind == "empty"

    def __len__(self) -> int:
        return int(self.s.size)

    @property
    def length(self) -> float:
        """``int_0^1 |b'(s)| ds`` by the sample midpoint rule."""
        return float(np.mean(self.speed)) if self.s.size else 0.0


def _empty_curve(theta, theta_prime) -> ThresholdCurve:
    z = np.zeros((0,))
    return ThresholdCurve(float(theta), float(theta_prime), "empty", z, np.zeros((0, 2)),
                          np.zeros((0, 2)), z)


def boundary_curve(theta, theta_prime, boundary: Boundary, resolution: int = 256) -> ThresholdCurve:
    """The whole forwarding-region boundary as a threshold curve."""
    s = (np.arange(resolution) + 0.5) / resolution
    phi = -np.pi + TWO_PI * s
    return ThresholdCurve(float(theta), float(theta_prime), "boundary", s, boundary.point(phi),
                          boundary.normal(phi), boundary.speed(phi), boundary=boundary)


def threshold_curve(theta, theta_prime, rule, resolution: int = 256,
                    contour_points: int = 129) -> ThresholdCurve:
    """Boundary of ``K(theta, theta') = {r in F : U(theta', r) > U(theta, 0)}``.

    For location-independent potentials ``K`` is empty or all of ``F``.
    Otherwise the level set is extracted by marching squares on a
    ``contour_points``-square sampling grid and resampled uniformly in
    arc length.

    Parameters
    ----------
    theta, theta_prime : float
        Carrier and node directions.
    rule : RoutingRule
    resolution : int
        Number of samples along the curve.
    contour_points : int
        Side of the sampling grid used for contouring.

    Returns
    -------
    ThresholdCurve
    """
    if rule.location_independent:
        if float(rule.U(theta_prime)) > float(rule.U(theta)):
            return boundary_curve(theta, theta_prime, rule.boundary, resolution)
        return _empty_curve(theta, theta_prime)
    return _contour_curve(theta, theta_prime, rule, resolution, contour_points)


def _contour_curve(theta, theta_prime, rule, resolution, n) -> ThresholdCurve:
    region = rule.region
    B = region.B
    half = B * (1 + 4.0 / n)
    xs = np.linspace(-half, half, n)
    step = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, xs)
    U0 = float(rule.U(theta, 0.0, 0.0))

    def field_at(x, y):
        pot = rule.U(theta_prime, x, y) - U0
        inside = rule.boundary(np.arctan2(y, x)) - np.hypot(x, y)
        return np.minimum(pot, inside)

    H = field_at(X, Y)
    if not np.any(H > 0):
        return _empty_curve(theta, theta_prime)
    contours = measure.find_contours(H, 0.0)
    segs, notes = [], []
    for c in contours:
        pts = np.stack([xs[0] + c[:, 1] * step, xs[0] + c[:, 0] * step], axis=1)
        if len(pts) >= 2:
            segs.append(pts)
    if not segs:
        return _empty_curve(theta, theta_prime)
    if len(segs) > 1:
        notes.append("eligibility region has several components (nonconvex)")

    starts = np.concatenate([p[:-1] for p in segs])
    ends = np.concatenate([p[1:] for p in segs])
    d = ends - starts
    seg_len = np.hypot(d[:, 0], d[:, 1])
    keep = seg_len > 0
    starts, d, seg_len = starts[keep], d[keep], seg_len[keep]
    nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / seg_len[:, None]
    mid = starts + 0.5 * d
    probe = mid + 0.25 * step * nrm
    flip = field_at(probe[:, 0], probe[:, 1]) > 0
    nrm[flip] *= -1

    if len(segs) == 1 and len(segs[0]) >= 4:
        # area deficit against the convex hull; corner jitter stays far below 1%
        poly = segs[0]
        area = 0.5 * abs(np.dot(poly[:-1, 0], poly[1:, 1]) - np.dot(poly[1:, 0], poly[:-1, 1]))
        try:
            hull = ConvexHull(poly).volume
        except QhullError:
            hull = area
        if hull - area > 1e-2 * hull:
            notes.append("eligibility region is not convex")
    for msg in notes:
        warnings.warn(f"threshold curve ({theta:.4g}, {theta_prime:.4g}): {msg}", RuntimeWarning,
                      stacklevel=3)

    total = float(seg_len.sum())
    if total > rule.M_b * (1 + 1e-9):
        raise ValidationError(f"threshold curve length {total:.6g} exceeds M_b={rule.M_b:.6g}")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = (np.arange(resolution) + 0.5) / resolution
    target = s * total
    k = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, seg_len.size - 1)
    frac = (target - cum[k]) / seg_len[k]
    points = starts[k] + frac[:, None] * d[k]
    return ThresholdCurve(float(theta), float(theta_prime), "contour", s, points, nrm[k],
                          np.full(resolution, total), polyline=np.stack([starts, d]),
                          polyline_normals=nrm,
                          notes=tuple(notes))


def _polyline_point(curve: ThresholdCurve, s):
    starts, d = curve.polyline
    seg_len = np.hypot(d[:, 0], d[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    target = np.clip(np.asarray(s, dtype=float), 0.0, 1.0) * cum[-1]
    k = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, seg_len.size - 1)
    frac = (target - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0)
    return starts[k] + frac[..., None] * d[k], k


def curve_speed_and_normal(curve: ThresholdCurve, s):
    """Speed ``|b'(s)|`` and unit normal ``t(s)`` pointing out of ``K``.

    Boundary curves use the analytic derivative of ``b(phi)`` (central
    differences for tabulated boundaries); contoured curves use central
    differences with ``delta_s = 1e-6`` on the arc-length polyline.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > 1):
        raise ValueError("curve parameter s outside [0, 1]")
    if curve.empty:
        raise ValueError("empty threshold curve has no parametrisation")
    if curve.kind == "boundary":
        phi = -np.pi + TWO_PI * s_arr
        return curve.boundary.speed(phi), curve.boundary.normal(phi)
    ds = 1e-6
    lo = np.clip(s_arr - ds, 0.0, 1.0)
    hi = np.clip(s_arr + ds, 0.0, 1.0)
    p_lo, _ = _polyline_point(curve, lo)
    p_hi, _ = _polyline_point(curve, hi)
    speed = np.linalg.norm(p_hi - p_lo, axis=-1) / (hi - lo)
    _, k = _polyline_point(curve, s_arr)
    return speed, curve.polyline_normals[k]
