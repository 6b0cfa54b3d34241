"""Command-line entry point: single runs and parameter sweeps to CSV.

Exit status is 0 on success, 1 for invalid configuration or a failed rule
assumption, 2 when a numerical gate fails.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import export
from .errors import ConfigError, NumericGateError, ValidationError
from .model_config import CONFIG_KEYS, params_from_dict
from .pipeline import analyze
from .simulator import SimConfig, estimate

__all__ = ["SweepSpec", "PRESETS", "run_point", "run_sweep", "load_sweep", "main"]

MODES = ("analytic", "simulate", "both")


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian sweep over one or two configuration keys.

    ``fixed`` overrides the base configuration for every point.
    """

    axis1: tuple[str, tuple]
    axis2: tuple[str, tuple] | None = None
    mode: str = "analytic"
    fixed: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        axes = [self.axis1] + ([self.axis2] if self.axis2 else [])
        for name, values in axes:
            if name not in CONFIG_KEYS:
                raise ConfigError("sweep", f"unknown axis {name!r}")
            if len(values) == 0:
                raise ConfigError("sweep", f"axis {name!r} has no values")
        for name in self.fixed:
            if name not in CONFIG_KEYS:
                raise ConfigError("sweep", f"unknown fixed key {name!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")

    @property
    def axis_names(self) -> list[str]:
        return [self.axis1[0]] + ([self.axis2[0]] if self.axis2 else [])

    def points(self) -> list[dict]:
        """Axis assignments in ascending lexicographic order."""
        axes = [self.axis1] + ([self.axis2] if self.axis2 else [])
        values = [sorted(v) for _, v in axes]
        names = [n for n, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*values)]


PRESETS = {
    "fig4": SweepSpec(("a", (0.5, 1.0, 1.5, 2.0)), ("eccentricity", (0.0, 0.2, 0.4, 0.6, 0.8))),
    "fig5": SweepSpec(("lambda", (0.25, 0.5, 1.0, 2.0, 4.0)), ("r0", (0.25, 0.5, 1.0, 2.0, 4.0))),
    "fig6": SweepSpec(("theta_w", (np.pi / 16, np.pi / 8, np.pi / 4, 3 * np.pi / 8, np.pi / 2)),
                      ("a", (0.5, 1.0, 2.0, 4.0)), fixed={"eccentricity": 0.0}),
}


def load_sweep(ref: str) -> SweepSpec:
    """Preset name or JSON file ``{"axis1": {"name", "values"}, "axis2"?, "fixed"?, "mode"?}``."""
    if ref in PRESETS:
        return PRESETS[ref]
    try:
        data = json.loads(Path(ref).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError("sweep", f"no preset or file named {ref!r}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("sweep", f"invalid JSON ({exc})") from exc

    def axis(d):
        if not isinstance(d, dict) or "name" not in d or "values" not in d:
            raise ConfigError("sweep", "axis needs 'name' and 'values'")
        return str(d["name"]), tuple(float(v) for v in d["values"])

    return SweepSpec(axis(data.get("axis1")),
                     axis(data["axis2"]) if data.get("axis2") else None,
                     data.get("mode", "analytic"), dict(data.get("fixed", {})), data.get("out"))


# ---------------------------------------------------------------------------
# points
# ---------------------------------------------------------------------------

ANALYTIC_COLS = ["V_p", "C_p", "cost_defined", "M", "states", "row_defect", "rate_defect",
                 "doeblin_mass", "residual", "solver_gap", "bound_violations", "gate_ok"]
SIM_COLS = ["V_sim", "V_sim_hw", "C_sim", "C_sim_hw", "stages", "transmissions",
            "excluded_cost_replicas", "ks_pvalue", "event_violations"]
GAP_COLS = ["gap_V", "gap_C"]


@dataclass
class PointOptions:
    mode: str = "analytic"
    N: int = 36
    L: int = 21
    seed: int = 0
    replicas: int = 8
    horizon: float | None = None
    trace: bool = False


def columns(mode: str) -> list[str]:
    cols = []
    if mode in ("analytic", "both"):
        cols += ANALYTIC_COLS
    if mode in ("simulate", "both"):
        cols += SIM_COLS
    if mode == "both":
        cols += GAP_COLS
    return cols


def run_point(config: dict, opts: PointOptions):
    """Evaluate one configuration.

    Returns ``(row, analysis, sim_estimate)`` where ``row`` maps column
    names to values.  Errors propagate.
    """
    params = params_from_dict(config)
    row, res, est = {}, None, None
    if opts.mode in ("analytic", "both"):
        res = analyze(params, opts.N, opts.L)
        d = res.diagnostics()
        row.update(V_p=res.V_p, C_p=res.C_p, cost_defined=res.metrics.cost_defined,
                   gate_ok=d["row_defect"] <= 0.05, **{k: d[k] for k in ANALYTIC_COLS if k in d})
    if opts.mode in ("simulate", "both"):
        cfg = SimConfig(params, horizon=opts.horizon, seed=opts.seed, replicas=opts.replicas,
                        record_events=opts.trace)
        est = estimate(cfg)
        viol = sum(r.potential_violations + r.region_violations for r in est.replicas)
        row.update(V_sim=est.V_p_hat, V_sim_hw=est.V_half_width, C_sim=est.C_p_hat,
                   C_sim_hw=est.C_half_width, stages=est.stages, transmissions=est.transmissions,
                   excluded_cost_replicas=est.excluded_cost_replicas, ks_pvalue=est.ks_pvalue,
                   event_violations=viol)
    if opts.mode == "both":
        row["gap_V"] = abs(est.V_p_hat - res.V_p) / abs(est.V_p_hat)
        row["gap_C"] = (abs(est.C_p_hat - res.C_p) / abs(est.C_p_hat)
                        if math.isfinite(res.C_p) else float("nan"))
    return row, res, est


def _sweep_task(args):
    config, opts = args
    try:
        row, _, _ = run_point(config, opts)
        row["error"] = ""
    except (ConfigError, ValidationError, NumericGateError, FloatingPointError) as exc:
        row = {"error": f"{type(exc).__name__}: {exc}"}
    return row


def workers() -> int:
    try:
        return max(1, int(os.environ.get("DTN_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(spec: SweepSpec, base: dict | None = None, opts: PointOptions | None = None):
    """Evaluate every sweep point.

    Failures are recorded in the ``error`` column and the sweep continues.
    Returns ``(header, rows)`` in ascending axis order.
    """
    opts = opts or PointOptions(mode=spec.mode)
    base = dict(base or {})
    configs = [{**base, **spec.fixed, **pt} for pt in spec.points()]
    tasks = [(c, opts) for c in configs]
    n = min(workers(), len(tasks))
    if n > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    names = spec.axis_names
    header = names + columns(opts.mode) + ["error"]
    rows = []
    for cfg, res in zip(configs, results):
        rows.append({**{k: cfg[k] for k in names}, **res})
    return header, rows


# ---------------------------------------------------------------------------
# main
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtnspeed",
                                description="Packet speed and cost in mobile DTNs.")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--mode", choices=MODES, default=None,
                   help="default: analytic, or the sweep file's mode")
    p.add_argument("--sweep", help="preset (fig4, fig5, fig6) or sweep JSON file")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0, help="simulation seed (u64)")
    p.add_argument("--grid-n", type=int, default=36, help="direction cells N")
    p.add_argument("--grid-l", type=int, default=21, help="spatial resolution L")
    p.add_argument("--dump-tables", action="store_true",
                   help="write stage tables, stationary vector and kernel next to --out")
    p.add_argument("--trace", action="store_true", help="write the simulator event trace")
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--horizon", type=float, default=None,
                   help="simulated time per replica (default 1e4 / r0)")
    return p


def _emit(header, rows, out):
    if out:
        export.write_rows(out, header, rows)
    else:
        import csv

        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([export.format_value(r.get(h)) for h in header])


def _side_path(out, suffix):
    stem = Path(out) if out else Path("dtnspeed")
    return stem.with_name(stem.stem + suffix)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: seed: must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        base = {}
        if args.config:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if not isinstance(base, dict):
                raise ConfigError("config", "top level must be a JSON object")
            params_from_dict(base)
        spec = load_sweep(args.sweep) if args.sweep else None
        mode = args.mode or (spec.mode if spec else "analytic")
        opts = PointOptions(mode, args.grid_n, args.grid_l, args.seed, args.replicas,
                            args.horizon, args.trace)
        if spec is not None:
            header, rows = run_sweep(spec, base, opts)
            _emit(header, rows, args.out or spec.out)
            return 0
        row, res, est = run_point(base, opts)
        header = columns(mode)
        _emit(header, [row], args.out)
        if args.dump_tables and res is not None:
            export.dump_tables(_side_path(args.out, "_tables"), res)
            export.dump_stationary(_side_path(args.out, "_stationary.csv"), res)
            export.dump_kernel_coo(_side_path(args.out, "_kernel.csv"), res.kernel)
        if est is not None:
            export.dump_replicas(_side_path(args.out, "_replicas.csv"), est)
            if args.trace:
                export.dump_trace(_side_path(args.out, "_trace.csv"), est, res.params.cost
                                  if res else params_from_dict(base).cost)
        return 0
    except (ConfigError, ValidationError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericGateError as exc:
        print(f"numeric gate: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
