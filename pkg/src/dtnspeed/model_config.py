"""Model quantities: node field, mobility, routing rule and cost.

Everything a run needs is gathered in :class:`ModelParams`.  The built-in
families are the uniform and four-window direction densities, the
elliptical forwarding region, the potential ``U = -|theta|`` and the
quadratic transmission cost.  Tabulated densities, boundaries and costs
use piecewise-constant (densities, costs) or periodic-linear (boundaries)
interpolation on uniform grids.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError
from .geometry import Boundary, EllipseBoundary, ForwardingRegion, TabulatedBoundary

__all__ = [
    "ConfigError",
    "DirectionDensity",
    "CostFunction",
    "RoutingRule",
    "ModelParams",
    "ValidationReport",
    "AssumptionCheck",
    "CONFIG_KEYS",
    "default_params",
    "direction_density_eval",
    "params_from_dict",
    "load_config",
    "neg_abs_theta_rule",
    "validate_rule",
]

TWO_PI = 2.0 * np.pi

CONFIG_KEYS = ("lambda", "v0", "r0", "theta_w", "a", "eccentricity", "cost", "potential")


def _check_angles(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < -np.pi) or np.any(x >= np.pi):
        raise ValueError("direction outside [-pi, pi)")
    return x


# ---------------------------------------------------------------------------
# Direction density
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirectionDensity:
    """Piecewise-constant density of node travel directions on [-pi, pi).

    Parameters
    ----------
    kind : str
        ``"uniform"``, ``"four-window"`` or ``"tabulated"``.
    breaks : ndarray, shape (K + 1,)
        Increasing breakpoints from ``-pi`` to ``pi``.
    values : ndarray, shape (K,)
        Density value on each interval ``[breaks[k], breaks[k + 1])``.
    epsilon_d : float
        Lower bound of the density on its support.
    theta_w : float or None
        Window width of the four-window family.
    """

    kind: str
    breaks: np.ndarray
    values: np.ndarray
    epsilon_d: float
    theta_w: float | None = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def uniform(cls) -> "DirectionDensity":
        return cls("uniform", np.array([-np.pi, np.pi]), np.array([1.0 / TWO_PI]),
                   1.0 / TWO_PI, np.pi / 2)

    @classmethod
    def four_window(cls, theta_w: float) -> "DirectionDensity":
        """Density ``1/(4 theta_w)`` on ``|x - k pi/2| < theta_w/2``."""
        theta_w = float(theta_w)
        if not (0.0 < theta_w <= np.pi / 2 + 1e-15):
            raise ConfigError("theta_w", f"must lie in (0, pi/2], got {theta_w!r}")
        theta_w = min(theta_w, np.pi / 2)
        h = theta_w / 2
        centers = np.array([-np.pi, -np.pi / 2, 0.0, np.pi / 2, np.pi])
        edges = np.concatenate([centers - h, centers + h, [-np.pi, np.pi]])
        edges = np.unique(np.clip(edges, -np.pi, np.pi))
        mids = 0.5 * (edges[:-1] + edges[1:])
        inside = np.min(np.abs(mids[:, None] - centers[None, :]), axis=1) < h
        values = np.where(inside, 1.0 / (4 * theta_w), 0.0)
        return cls("four-window", edges, values, 1.0 / (4 * theta_w), theta_w)

    @classmethod
    def tabulated(cls, values, epsilon_d: float) -> "DirectionDensity":
        """Piecewise-constant density on a uniform grid of ``len(values)`` bins."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ConfigError("direction_density", "tabulated values must be a 1-D array")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigError("direction_density", "tabulated values must be finite and >= 0")
        breaks = np.linspace(-np.pi, np.pi, values.size + 1)
        total = float(np.sum(values * np.diff(breaks)))
        if abs(total - 1.0) > 1e-9:
            raise ConfigError("direction_density", f"integrates to {total!r}, not 1")
        if not epsilon_d > 0:
            raise ConfigError("direction_density", "epsilon_d must be strictly positive")
        positive = values[values > 0]
        if np.any(positive < epsilon_d):
            raise ConfigError("direction_density", "support values fall below epsilon_d")
        return cls("tabulated", breaks, values, float(epsilon_d))

    # -- evaluation -------------------------------------------------------
    def pdf(self, x):
        """Density at ``x``; raises ``ValueError`` outside [-pi, pi)."""
        x = _check_angles(x)
        if self.kind == "uniform":
            return np.full_like(x, 1.0 / TWO_PI)
        if self.kind == "four-window":
            k = np.round(x / (np.pi / 2))
            inside = np.abs(x - k * np.pi / 2) < self.theta_w / 2
            return np.where(inside, 1.0 / (4 * self.theta_w), 0.0)
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.values.size - 1)
        return self.values[idx]

    def cdf(self, x):
        """Cumulative distribution from ``-pi``; exact for the piecewise form."""
        x = np.clip(np.asarray(x, dtype=float), -np.pi, np.pi)
        cum = np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.breaks))])
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.values.size - 1)
        return cum[idx] + self.values[idx] * (x - self.breaks[idx])

    def mass(self, lo, hi):
        """Exact probability of ``[lo, hi]``."""
        return self.cdf(hi) - self.cdf(lo)

    def abs_mass(self, t):
        """Probability that ``|theta| < t`` for ``t`` in [0, pi]."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, np.pi)
        return self.cdf(t) - self.cdf(-t)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw directions by inverting the piecewise-linear CDF."""
        probs = self.values * np.diff(self.breaks)
        probs = probs / probs.sum()
        k = rng.choice(probs.size, size=size, p=probs)
        u = rng.random(size)
        return self.breaks[k] + u * (self.breaks[k + 1] - self.breaks[k])


def direction_density_eval(d: DirectionDensity, x):
    """Evaluate ``f_D(x)``; ``x`` must lie in [-pi, pi)."""
    return d.pdf(x)


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CostFunction:
    """Transmission cost as a function of displacement.

    ``kind="quadratic"`` is ``|r|^2``.  ``kind="tabulated"`` holds a
    piecewise-constant table over ``[-half_width, half_width]^2`` with
    ``table[iy, ix]`` covering the ``ix``-th column and ``iy``-th row.
    """

    kind: str = "quadratic"
    table: np.ndarray | None = None
    half_width: float | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "tabulated"):
            raise ConfigError("cost", f"unknown cost kind {self.kind!r}")
        if self.kind == "tabulated":
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or np.any(tab < 0) or not np.all(np.isfinite(tab)):
                raise ConfigError("cost", "tabulated cost must be a finite, nonnegative 2-D table")
            if not (self.half_width and self.half_width > 0):
                raise ConfigError("cost", "tabulated cost needs a positive half_width")
            object.__setattr__(self, "table", tab)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "quadratic":
            return x * x + y * y
        ny, nx = self.table.shape
        h = self.half_width
        ix = np.clip(np.floor((x + h) / (2 * h) * nx).astype(int), 0, nx - 1)
        iy = np.clip(np.floor((y + h) / (2 * h) * ny).astype(int), 0, ny - 1)
        return self.table[iy, ix]


# ---------------------------------------------------------------------------
# Routing rule
# ---------------------------------------------------------------------------


def _neg_abs_theta(theta, x, y):
    theta = np.asarray(theta, dtype=float)
    return -np.abs(theta) + 0.0 * np.asarray(x, dtype=float) + 0.0 * np.asarray(y, dtype=float)


@dataclass(frozen=True, eq=False)
class RoutingRule:
    """Forwarding region and potential.

    Parameters
    ----------
    boundary : Boundary
        Radial boundary function ``b(phi)`` of the forwarding region.
    potential : callable
        Vectorised ``U(theta, x, y)``.
    location_independent : bool
        True when ``U`` depends on ``theta`` only.
    name : str
        Registry name of the potential, used by the JSON loader and the
        simulator.
    potential_floor_K : float, optional
        The constant ``U(-pi, r)``; defaults to ``U(-pi, 0)``.
    """

    boundary: Boundary
    potential: Callable
    location_independent: bool
    name: str = "custom"
    potential_floor_K: float | None = None
    region: ForwardingRegion = field(init=False)
    M_b: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "region", ForwardingRegion(self.boundary))
        object.__setattr__(self, "M_b", float(self.boundary.max_speed()))
        if self.potential_floor_K is None:
            k = float(np.asarray(self.potential(-np.pi, 0.0, 0.0)))
            object.__setattr__(self, "potential_floor_K", k)

    def U(self, theta, x=0.0, y=0.0):
        return np.asarray(self.potential(theta, x, y), dtype=float)


def neg_abs_theta_rule(boundary: Boundary) -> RoutingRule:
    """The rule ``U(theta, r) = -|theta|`` used throughout the experiments."""
    return RoutingRule(boundary, _neg_abs_theta, True, "neg_abs_theta", -np.pi)


POTENTIALS = {"neg_abs_theta": (_neg_abs_theta, True)}


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Physical and protocol quantities of one model instance.

    ``lam`` is the node density (JSON key ``lambda``).
    """

    lam: float
    v0: float
    r0: float
    direction_density: DirectionDensity
    cost: CostFunction
    rule: RoutingRule

    def __post_init__(self):
        for name, attr in (("lambda", "lam"), ("v0", "v0"), ("r0", "r0")):
            val = getattr(self, attr)
            if not (isinstance(val, (int, float, np.floating)) and np.isfinite(val)):
                raise ConfigError(name, f"must be a finite number, got {val!r}")
        # lambda = 0 is kept as the degenerate no-neighbour limit
        if self.lam < 0:
            raise ConfigError("lambda", f"must be >= 0, got {self.lam!r}")
        if self.v0 <= 0:
            raise ConfigError("v0", f"must be > 0, got {self.v0!r}")
        if self.r0 <= 0:
            raise ConfigError("r0", f"must be > 0, got {self.r0!r}")

    @property
    def region(self) -> ForwardingRegion:
        return self.rule.region

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


def params_from_dict(cfg: Mapping[str, Any] | None = None) -> ModelParams:
    """Build :class:`ModelParams` from a flat configuration mapping.

    Keys are those of :data:`CONFIG_KEYS`; missing keys take the default
    values and unknown keys raise :class:`ConfigError`.
    """
    cfg = dict(cfg or {})
    unknown = sorted(set(cfg) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")

    def number(key, default):
        val = cfg.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(key, f"must be a number, got {val!r}")
        return float(val)

    lam = number("lambda", 1.0)
    v0 = number("v0", 1.0)
    r0 = number("r0", 1.0)
    theta_w = number("theta_w", np.pi / 2)
    a = number("a", 1.0)
    ecc = number("eccentricity", 0.7)

    if not (0 < theta_w <= np.pi / 2 + 1e-12):
        raise ConfigError("theta_w", f"must lie in (0, pi/2], got {theta_w!r}")
    density = (DirectionDensity.uniform() if theta_w >= np.pi / 2 - 1e-12
               else DirectionDensity.four_window(theta_w))

    boundary = EllipseBoundary(a, ecc)

    pot = cfg.get("potential", "neg_abs_theta")
    if pot not in POTENTIALS:
        raise ConfigError("potential", f"unknown potential {pot!r}")
    fn, loc_ind = POTENTIALS[pot]
    rule = RoutingRule(boundary, fn, loc_ind, pot, float(np.asarray(fn(-np.pi, 0.0, 0.0))))

    cost_cfg = cfg.get("cost", "quadratic")
    if cost_cfg == "quadratic":
        cost = CostFunction("quadratic")
    elif isinstance(cost_cfg, Mapping) and set(cost_cfg) == {"table", "half_width"}:
        cost = CostFunction("tabulated", np.asarray(cost_cfg["table"], dtype=float),
                            float(cost_cfg["half_width"]))
    else:
        raise ConfigError("cost", f"expected 'quadratic' or {{table, half_width}}, got {cost_cfg!r}")

    return ModelParams(lam, v0, r0, density, cost, rule)


def load_config(path: str | Path) -> ModelParams:
    """Read a JSON configuration document and build :class:`ModelParams`."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return params_from_dict(data)


def default_params() -> ModelParams:
    """Default parameter set: unit density, speed and turning rate,
    uniform directions, quadratic cost and the ellipse ``a=1, eps=0.7``."""
    return params_from_dict({})


# ---------------------------------------------------------------------------
# Rule validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    n_checked: int
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]
    M_b: float

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_rule(rule: RoutingRule, grid, n_angles: int = 181, n_triples: int = 2000,
                  seed: int = 0) -> ValidationReport:
    """Sampled checks of the four modelling assumptions.

    ``A1`` strict monotonicity in ``|theta|``, ``A2`` order preservation
    under common translations inside the forwarding region, ``A3`` a
    finite boundary speed bound ``M_b`` together with convexity of the
    region, and ``A4`` a constant potential floor at ``theta = -pi``.
    """
    pts = np.vstack([[0.0, 0.0], grid.points])
    x, y = pts[:, 0], pts[:, 1]
    angles = -np.pi + TWO_PI * np.arange(n_angles) / n_angles
    U = rule.U(angles[:, None], x[None, :], y[None, :])
    checks = []

    # A1: group angles by |theta| and require strict decrease across levels
    mag = np.round(np.abs(angles), 12)
    levels = np.unique(mag)
    lo = np.array([U[mag == m].min(axis=0) for m in levels])
    hi = np.array([U[mag == m].max(axis=0) for m in levels])
    bad = hi[1:] >= lo[:-1]
    checks.append(AssumptionCheck("A1", not bad.any(), int(bad.size),
                                  f"{int(bad.sum())} non-decreasing level pairs"))

    # A2: translations that keep both shifted points inside F
    rng = np.random.default_rng(seed)
    region = rule.region
    i1, i2 = rng.integers(0, grid.M, n_triples), rng.integers(0, grid.M, n_triples)
    q = rng.integers(0, grid.M, n_triples)
    t1, t2 = rng.choice(angles, n_triples), rng.choice(angles, n_triples)
    r1, r2 = grid.points[i1], grid.points[i2]
    r3 = r1 - grid.points[q]
    ok = region.contains(r2 - r3)
    a = rule.U(t1, r1[:, 0], r1[:, 1]) - rule.U(t2, r2[:, 0], r2[:, 1])
    b = (rule.U(t1, r1[:, 0] - r3[:, 0], r1[:, 1] - r3[:, 1])
         - rule.U(t2, r2[:, 0] - r3[:, 0], r2[:, 1] - r3[:, 1]))
    flips = ok & (np.sign(np.round(a, 12)) != np.sign(np.round(b, 12)))
    checks.append(AssumptionCheck("A2", not flips.any(), int(ok.sum()),
                                  f"{int(flips.sum())} order flips"))

    # A3: boundary speed bound and convexity
    convex = region.is_convex()
    finite = np.isfinite(rule.M_b) and rule.M_b > 0
    checks.append(AssumptionCheck("A3", bool(finite and convex), 1,
                                  f"M_b={rule.M_b:.6g}, convex={convex}"))

    # A4: constant floor at theta = -pi
    floor = rule.U(-np.pi, x, y)
    dev = float(np.max(np.abs(floor - rule.potential_floor_K)))
    checks.append(AssumptionCheck("A4", dev <= 1e-12, int(x.size), f"max deviation {dev:.3g}"))
    return ValidationReport(tuple(checks), rule.M_b)


__all__ += ["TabulatedBoundary", "EllipseBoundary", "POTENTIALS"]
