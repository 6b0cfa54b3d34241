"""Monte Carlo simulation of the unapproximated network.

Nodes form a Poisson field on a torus, move at constant speed and turn at
Poisson epochs to directions drawn from ``f_D``.  The packet carrier hands
the packet to the best eligible node in its forwarding region whenever one
exists; chains of handoffs are instantaneous.  Eligibility is re-checked at
every turn of the carrier or of a node near it, and at the end of every
time step (crossings into the region are detected with a delay of at most
one step).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .errors import ConfigError
from .geometry import EllipseBoundary, TabulatedBoundary
from .model_config import ModelParams

__all__ = ["SimConfig", "ReplicaResult", "SimEstimate", "run_replica", "estimate"]

EVENT_CAP = 1 << 20
MAX_HOPS = 1_000_000
# event columns: time, dx, dy, carrier direction, receiver direction
EV_T, EV_DX, EV_DY, EV_TH_OLD, EV_TH_NEW = range(5)
# float state: step-start time, progress-accrual time, X_W, X_B, cost
F_T, F_TACC, F_XW, F_XB, F_COST = range(5)
# int state: carrier, transmissions, buffering stages, events, overflow, hop-cap hits
I_CAR, I_NTX, I_NBUF, I_NEV, I_OVF, I_HOPS = range(6)


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation settings.

    Attributes
    ----------
    params : ModelParams
    world_half_width : float or None
        Torus half side; defaults to ``10 * max FR extent``.
    time_step : float or None
        Scan step; defaults to ``min(0.01 / r0, 0.01 * a / v0)`` with
        ``a`` the region's half-extent.
    horizon : float or None
        Simulated time per replica; defaults to ``1e4 / r0``.
    min_stages : int
    seed : int
    replicas : int
    chunk : float
        Simulated time per compiled call.
    record_events : bool
        Keep the per-transmission trace in each replica result.
    """

    params: ModelParams
    world_half_width: float | None = None
    time_step: float | None = None
    horizon: float | None = None
    min_stages: int = 0
    seed: int = 0
    replicas: int = 8
    chunk: float = 100.0
    record_events: bool = False
    n_direction_samples: int = 10_000

    def __post_init__(self):
        p = self.params
        extent = self.extent
        if p.rule.location_independent is False:
            raise ConfigError("potential", "the simulator supports location-independent potentials")
        if self.world_half_width is None:
            object.__setattr__(self, "world_half_width", 10.0 * extent)
        if self.world_half_width < 10.0 * extent * (1 - 1e-12):
            raise ConfigError("world_half_width",
                              f"must be >= 10 x FR extent ({10 * extent:.4g})")
        step_cap = min(0.01 / p.r0, 0.01 * self.half_axis / p.v0)
        if self.time_step is None:
            object.__setattr__(self, "time_step", step_cap)
        if not 0 < self.time_step <= step_cap * (1 + 1e-12):
            raise ConfigError("time_step", f"must lie in (0, {step_cap:.4g}]")
        if self.horizon is None:
            object.__setattr__(self, "horizon", 1e4 / p.r0)
        if not self.horizon > 0:
            raise ConfigError("horizon", "must be > 0")
        if self.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")

    @property
    def extent(self) -> float:
        """Largest distance from the carrier to a point of its region."""
        return float(self.params.region.B)

    @property
    def half_axis(self) -> float:
        b = self.params.rule.boundary
        if isinstance(b, EllipseBoundary):
            return b.a
        return float(np.min(b.values)) if isinstance(b, TabulatedBoundary) else self.extent


@dataclass(frozen=True, eq=False)
class ReplicaResult:
    """Totals of one replica.

    ``sum_x = sum_xw + sum_xb`` is the net progress along +x, ``sum_delta``
    the simulated time.  Violation counts are recomputed from the event
    trace, independently of the compiled loop.
    """

    seed: tuple
    n_nodes: int
    sum_xw: float
    sum_xb: float
    sum_delta: float
    sum_cost: float
    stages: int
    transmissions: int
    potential_violations: int
    region_violations: int
    cost_mismatch: float
    hop_cap_hits: int
    direction_samples: np.ndarray = field(repr=False)
    events: np.ndarray | None = field(default=None, repr=False)

    @property
    def sum_x(self) -> float:
        return self.sum_xw + self.sum_xb

    @property
    def V_hat(self) -> float:
        return self.sum_x / self.sum_delta

    @property
    def C_hat(self) -> float:
        return self.sum_cost / self.sum_x if self.sum_x != 0 else float("nan")


@dataclass(frozen=True, eq=False)
class SimEstimate:
    """Replica means with normal-approximation 95% half-widths."""

    V_p_hat: float
    C_p_hat: float
    V_half_width: float
    C_half_width: float
    stages: int
    transmissions: int
    replicas: tuple
    excluded_cost_replicas: int
    ks_pvalue: float

    @property
    def half_width_95(self) -> tuple[float, float]:
        return self.V_half_width, self.C_half_width


# ---------------------------------------------------------------------------
# compiled core
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _in_region(dx, dy, bkind, bpar, btab):
    r = math.sqrt(dx * dx + dy * dy)
    if bkind == 0:
        # r <= p / (1 - e cos(phi))  <=>  r - e x <= p
        return r - bpar[1] * dx <= bpar[0] * (1.0 + 1e-12)
    n = btab.size
    h = 2.0 * math.pi / n
    t = (math.atan2(dy, dx) + math.pi) / h
    ft = math.floor(t)
    k = int(ft) % n
    w = t - ft
    b = (1.0 - w) * btab[k] + w * btab[(k + 1) % n]
    return r <= b * (1.0 + 1e-12)


@numba.njit(cache=True)
def _cost(dx, dy, ckind, chalf, ctab):
    if ckind == 0:
        return dx * dx + dy * dy
    ny, nx = ctab.shape
    ix = int(math.floor((dx + chalf) / (2.0 * chalf) * nx))
    iy = int(math.floor((dy + chalf) / (2.0 * chalf) * ny))
    ix = min(max(ix, 0), nx - 1)
    iy = min(max(iy, 0), ny - 1)
    return ctab[iy, ix]


@numba.njit(cache=True)
def _draw_direction(rng, breaks, cumprob):
    u = rng.random()
    k = np.searchsorted(cumprob, u, side="right")
    if k >= cumprob.size:
        k = cumprob.size - 1
    x = breaks[k] + rng.random() * (breaks[k + 1] - breaks[k])
    if x >= math.pi:
        x -= 2.0 * math.pi
    return x


@numba.njit(cache=True)
def _wrap_delta(d, W):
    if d > W:
        d -= 2.0 * W
    elif d < -W:
        d += 2.0 * W
    return d


@numba.njit(cache=True)
def _build_hash(px, py, n_cells, cell_w, cell_start, cell_items, cell_of):
    n = px.size
    cell_start[:] = 0
    for k in range(n):
        ix = int(math.floor(px[k] / cell_w)) % n_cells
        iy = int(math.floor(py[k] / cell_w)) % n_cells
        c = ix * n_cells + iy
        cell_of[k] = c
        cell_start[c + 1] += 1
    for c in range(n_cells * n_cells):
        cell_start[c + 1] += cell_start[c]
    fill = cell_start[:-1].copy()
    for k in range(n):
        c = cell_of[k]
        cell_items[fill[c]] = k
        fill[c] += 1


@numba.njit(cache=True)
def _scan(tau, px, py, th, W, v0, n_cells, cell_w, cell_start, cell_items,
          bkind, bpar, btab, ckind, chalf, ctab, fs, ist, ev, buffering):
    """Hand the packet along while an eligible node exists at time ``tau``."""
    t0 = fs[F_T]
    hops = 0
    while True:
        c = ist[I_CAR]
        tc = th[c]
        cx = px[c] + v0 * math.cos(tc) * (tau - t0)
        cy = py[c] + v0 * math.sin(tc) * (tau - t0)
        best = -1
        best_abs = abs(tc)
        bdx = 0.0
        bdy = 0.0
        ix0 = int(math.floor(cx / cell_w))
        iy0 = int(math.floor(cy / cell_w))
        for ddx in range(-1, 2):
            for ddy in range(-1, 2):
                cc = ((ix0 + ddx) % n_cells) * n_cells + (iy0 + ddy) % n_cells
                for q in range(cell_start[cc], cell_start[cc + 1]):
                    k = cell_items[q]
                    if k == c:
                        continue
                    a = abs(th[k])
                    if a >= best_abs:
                        continue
                    nx = px[k] + v0 * math.cos(th[k]) * (tau - t0)
                    ny = py[k] + v0 * math.sin(th[k]) * (tau - t0)
                    dx = _wrap_delta(nx - cx, W)
                    dy = _wrap_delta(ny - cy, W)
                    if _in_region(dx, dy, bkind, bpar, btab):
                        best = k
                        best_abs = a
                        bdx = dx
                        bdy = dy
        if best < 0:
            break
        if buffering:
            fs[F_XB] += v0 * math.cos(tc) * (tau - fs[F_TACC])
            fs[F_TACC] = tau
            ist[I_NBUF] += 1
            buffering = False
        fs[F_XW] += bdx
        fs[F_COST] += _cost(bdx, bdy, ckind, chalf, ctab)
        ist[I_NTX] += 1
        m = ist[I_NEV]
        if m < ev.shape[0]:
            ev[m, EV_T] = tau
            ev[m, EV_DX] = bdx
            ev[m, EV_DY] = bdy
            ev[m, EV_TH_OLD] = tc
            ev[m, EV_TH_NEW] = th[best]
            ist[I_NEV] = m + 1
        else:
            ist[I_OVF] += 1
        ist[I_CAR] = best
        hops += 1
        if hops >= MAX_HOPS:
            ist[I_HOPS] += 1
            break
    if not buffering:
        fs[F_TACC] = tau
    return True


@numba.njit(cache=True)
def _run_chunk(px, py, th, tn, t_end, W, dt, v0, r0, reach, n_cells, cell_w,
               cell_start, cell_items, cell_of, bkind, bpar, btab, ckind, chalf, ctab,
               breaks, cumprob, rng, fs, ist, ev):
    n = px.size
    cand = np.empty(n, dtype=np.int64)
    two_w = 2.0 * W
    reach2 = reach * reach
    while fs[F_T] < t_end - 1e-12 and ist[I_NEV] < ev.shape[0] // 2:
        t0 = fs[F_T]
        t1 = t0 + dt
        nc = 0
        for k in range(n):
            if tn[k] <= t1:
                cand[nc] = k
                nc += 1
        # turns inside the step, in time order
        while nc > 0:
            jbest = 0
            for j in range(1, nc):
                if tn[cand[j]] < tn[cand[jbest]]:
                    jbest = j
            k = cand[jbest]
            tau = tn[k]
            if tau > t1:
                break
            old = th[k]
            new = _draw_direction(rng, breaks, cumprob)
            # keep the stored point on the new line through the true position
            px[k] += v0 * (math.cos(old) - math.cos(new)) * (tau - t0)
            py[k] += v0 * (math.sin(old) - math.sin(new)) * (tau - t0)
            th[k] = new
            tn[k] = tau + rng.exponential(1.0 / r0)
            if tn[k] > t1:
                cand[jbest] = cand[nc - 1]
                nc -= 1
            c = ist[I_CAR]
            if k == c:
                fs[F_XB] += v0 * math.cos(old) * (tau - fs[F_TACC])
                fs[F_TACC] = tau
                ist[I_NBUF] += 1
                _scan(tau, px, py, th, W, v0, n_cells, cell_w, cell_start, cell_items,
                      bkind, bpar, btab, ckind, chalf, ctab, fs, ist, ev, True)
            else:
                dx = _wrap_delta(px[k] + v0 * math.cos(new) * (tau - t0)
                                 - px[c] - v0 * math.cos(th[c]) * (tau - t0), W)
                dy = _wrap_delta(py[k] + v0 * math.sin(new) * (tau - t0)
                                 - py[c] - v0 * math.sin(th[c]) * (tau - t0), W)
                if dx * dx + dy * dy <= reach2:
                    _scan(tau, px, py, th, W, v0, n_cells, cell_w, cell_start, cell_items,
                          bkind, bpar, btab, ckind, chalf, ctab, fs, ist, ev, True)
        # advance to the end of the step
        for k in range(n):
            x = px[k] + v0 * math.cos(th[k]) * dt
            y = py[k] + v0 * math.sin(th[k]) * dt
            px[k] = x - two_w * math.floor(x / two_w)
            py[k] = y - two_w * math.floor(y / two_w)
        c = ist[I_CAR]
        fs[F_XB] += v0 * math.cos(th[c]) * (t1 - fs[F_TACC])
        fs[F_TACC] = t1
        fs[F_T] = t1
        _build_hash(px, py, n_cells, cell_w, cell_start, cell_items, cell_of)
        _scan(t1, px, py, th, W, v0, n_cells, cell_w, cell_start, cell_items,
              bkind, bpar, btab, ckind, chalf, ctab, fs, ist, ev, True)


# ---------------------------------------------------------------------------
# python driver
# ---------------------------------------------------------------------------


def _boundary_args(boundary):
    if isinstance(boundary, EllipseBoundary):
        return 0, np.array([boundary.p, boundary.eccentricity]), np.zeros(1)
    if isinstance(boundary, TabulatedBoundary):
        return 1, np.zeros(2), boundary.values.astype(float)
    raise ConfigError("boundary", f"simulator does not support {type(boundary).__name__}")


def _cost_args(cost):
    if cost.kind == "quadratic":
        return 0, 1.0, np.zeros((1, 1))
    return 1, float(cost.half_width), np.asarray(cost.table, dtype=float)


def initial_field(cfg: SimConfig, rng: np.random.Generator):
    """Poisson node field with directions from ``f_D`` and exponential
    residual times to the next turn.  Returns ``(px, py, th, tn)``."""
    p = cfg.params
    W = cfg.world_half_width
    n = int(rng.poisson(p.lam * (2 * W) ** 2))
    if n == 0:
        # an empty field still needs a carrier
        return (np.array([W]), np.array([W]), p.direction_density.sample(rng, 1),
                rng.exponential(1.0 / p.r0, 1))
    px = rng.random(n) * 2 * W
    py = rng.random(n) * 2 * W
    th = p.direction_density.sample(rng, n)
    tn = rng.exponential(1.0 / p.r0, n)
    return px, py, th, tn


def run_replica(cfg: SimConfig, seed) -> ReplicaResult:
    """Simulate one replica up to the horizon (and ``min_stages``).

    Parameters
    ----------
    cfg : SimConfig
    seed : int or numpy.random.SeedSequence

    Returns
    -------
    ReplicaResult
    """
    p = cfg.params
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    field_ss, motion_ss, sample_ss = ss.spawn(3)
    rng = np.random.default_rng(motion_ss)
    px, py, th, tn = initial_field(cfg, np.random.default_rng(field_ss))
    sampler = np.random.default_rng(sample_ss)
    W = float(cfg.world_half_width)
    centre = np.hypot(px - W, py - W)
    carrier = int(np.argmin(centre))

    extent = cfg.extent
    margin = 8.0 * p.v0 * cfg.time_step
    n_cells = max(1, int(math.floor(2 * W / (extent + margin))))
    if n_cells < 3:
        raise ConfigError("world_half_width", "torus too small for the neighbour grid")
    cell_w = 2 * W / n_cells
    cell_start = np.zeros(n_cells * n_cells + 1, dtype=np.int64)
    cell_items = np.zeros(px.size, dtype=np.int64)
    cell_of = np.zeros(px.size, dtype=np.int64)
    bkind, bpar, btab = _boundary_args(p.rule.boundary)
    ckind, chalf, ctab = _cost_args(p.cost)
    d = p.direction_density
    probs = d.values * np.diff(d.breaks)
    cumprob = np.cumsum(probs / probs.sum())
    cumprob[-1] = 1.0

    fs = np.zeros(5)
    ist = np.zeros(6, dtype=np.int64)
    ist[I_CAR] = carrier
    ev = np.zeros((EVENT_CAP, 5))
    _build_hash(px, py, n_cells, cell_w, cell_start, cell_items, cell_of)
    _scan(0.0, px, py, th, W, p.v0, n_cells, cell_w, cell_start, cell_items,
          bkind, bpar, btab, ckind, chalf, ctab, fs, ist, ev, True)

    per_chunk = max(1, int(math.ceil(cfg.n_direction_samples * cfg.chunk / cfg.horizon)))
    dir_samples, traces = [], []
    while True:
        done_time = fs[F_T] >= cfg.horizon - 1e-9
        stages = ist[I_NTX] + ist[I_NBUF] + 1
        if done_time and stages >= cfg.min_stages:
            break
        target = fs[F_T] + cfg.chunk if done_time else min(fs[F_T] + cfg.chunk, cfg.horizon)
        _run_chunk(px, py, th, tn, target, W, cfg.time_step, p.v0, p.r0, 2.0 * extent,
                   n_cells, cell_w, cell_start, cell_items, cell_of, bkind, bpar, btab,
                   ckind, chalf, ctab, d.breaks, cumprob, rng, fs, ist, ev)
        if ist[I_OVF]:
            raise RuntimeError("event buffer overflow")
        traces.append(ev[:ist[I_NEV]].copy())
        ist[I_NEV] = 0
        # without replacement: duplicated nodes would correlate the KS sample
        dir_samples.append(th[sampler.choice(th.size, min(per_chunk, th.size), replace=False)])

    events = np.concatenate(traces) if traces else np.zeros((0, 5))
    region = p.region
    pot_viol = int(np.sum(np.abs(events[:, EV_TH_NEW]) >= np.abs(events[:, EV_TH_OLD])))
    reg_viol = int(np.sum(~region.contains(events[:, [EV_DX, EV_DY]])))
    recomputed = np.cumsum(p.cost(events[:, EV_DX], events[:, EV_DY]))
    recomputed = float(recomputed[-1]) if recomputed.size else 0.0
    stages = int(ist[I_NTX] + ist[I_NBUF] + 1)
    return ReplicaResult(
        seed=(int(ss.entropy), *ss.spawn_key), n_nodes=int(px.size), sum_xw=float(fs[F_XW]), sum_xb=float(fs[F_XB]),
        sum_delta=float(fs[F_T]), sum_cost=float(fs[F_COST]), stages=stages,
        transmissions=int(ist[I_NTX]), potential_violations=pot_viol, region_violations=reg_viol,
        cost_mismatch=abs(recomputed - float(fs[F_COST])), hop_cap_hits=int(ist[I_HOPS]),
        direction_samples=np.concatenate(dir_samples)[:cfg.n_direction_samples],
        events=events if cfg.record_events else None)


def _workers() -> int:
    import os

    try:
        return max(1, int(os.environ.get("DTN_THREADS", "1")))
    except ValueError:
        return 1


def estimate(cfg: SimConfig) -> SimEstimate:
    """Run ``cfg.replicas`` independent replicas and combine them.

    Each replica gives ratio estimates ``sum X / sum Delta`` and
    ``sum C / sum X``.  Means and ``1.96 sd / sqrt(n)`` half-widths are
    taken across replicas; a replica with zero progress is excluded from
    the cost estimate and counted.
    """
    if cfg.replicas < 2:
        raise ConfigError("replicas", "estimate needs at least two replicas")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.replicas)
    workers = min(_workers(), cfg.replicas)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_replica, [cfg] * cfg.replicas, seeds))
    else:
        results = [run_replica(cfg, s) for s in seeds]
    V = np.array([r.V_hat for r in results])
    C = np.array([r.C_hat for r in results])
    ok = np.isfinite(C)
    n = len(results)
    hw_v = 1.96 * V.std(ddof=1) / math.sqrt(n)
    hw_c = 1.96 * C[ok].std(ddof=1) / math.sqrt(ok.sum()) if ok.sum() >= 2 else float("nan")
    share = int(math.ceil(cfg.n_direction_samples / n))
    samples = np.concatenate([r.direction_samples[:share] for r in results])
    d = cfg.params.direction_density
    ks = stats.kstest(samples, d.cdf).pvalue if samples.size else float("nan")
    return SimEstimate(float(V.mean()), float(C[ok].mean()) if ok.any() else float("nan"),
                       float(hw_v), float(hw_c), int(sum(r.stages for r in results)),
                       int(sum(r.transmissions for r in results)), tuple(results),
                       int((~ok).sum()), float(ks))
