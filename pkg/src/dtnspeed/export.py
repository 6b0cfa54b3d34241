"""Plain CSV output for tables, chains, simulation totals and sweeps.

Floats are written with ``repr`` so files are byte-identical across runs
given identical inputs.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

__all__ = [
    "format_value",
    "write_rows",
    "dump_array",
    "dump_tables",
    "dump_stationary",
    "dump_kernel_coo",
    "dump_replicas",
    "dump_trace",
]


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path, header, rows) -> None:
    """Write ``rows`` (sequences or dicts keyed by ``header``) with a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow([format_value(v) for v in row])


def dump_array(path, arr, index_names) -> None:
    """One row per element: flattened indices then value."""
    arr = np.asarray(arr)
    idx = np.indices(arr.shape).reshape(arr.ndim, -1).T
    write_rows(path, list(index_names) + ["value"],
               ([*map(int, i), v] for i, v in zip(idx, arr.ravel().tolist())))


def dump_tables(directory, result) -> list[Path]:
    """Write the grid, stage and rate tables of an analysis result."""
    d = Path(directory)
    g, tx, rt = result.grid, result.transmission, result.rates
    write_rows(d / "theta.csv", ["i", "theta"], enumerate(g.theta.tolist()))
    write_rows(d / "points.csv", ["k", "x", "y"],
               ([k, x, y] for k, (x, y) in enumerate(g.points.tolist())))
    dump_array(d / "EN.csv", tx.EN, ["i", "k"])
    dump_array(d / "PE.csv", tx.PE, ["i", "k"])
    dump_array(d / "G.csv", tx.G.astype(int), ["k", "l"])
    if tx.gdir is not None:
        dump_array(d / "gdir.csv", tx.gdir, ["i", "k", "j"])
    dump_array(d / "rA.csv", rt.rA, ["i", "j"])
    dump_array(d / "rB.csv", rt.rB, ["i", "j", "l"])
    dump_array(d / "rC.csv", rt.rC, ["i", "j", "l"])
    dump_array(d / "rDhat.csv", rt.rDhat, ["i", "j", "l"])
    write_rows(d / "rates.csv", ["i", "rA", "rB", "rC", "rD", "r", "r_alt", "defect"],
               ([i, *vals] for i, vals in enumerate(zip(
                   rt.rA_agg, rt.rB_agg, rt.rC_agg, rt.rD_agg, rt.r, rt.r_alt, rt.defect))))
    return sorted(d.glob("*.csv"))


def dump_stationary(path, result) -> None:
    """Stationary masses by state, followed by metric rows."""
    st, K = result.stationary, result.kernel
    rows = [["B", i, "", p] for i, p in enumerate(st.psi_B.tolist())]
    rows += [["W", i, k, st.psi_W[k, i]] for k in range(K.M) for i in range(K.N)]
    m, e = result.metrics, result.expectations
    for name, v in [("V_p", m.V_p), ("C_p", m.C_p), ("E_XW", e.E_XW), ("E_XB", e.E_XB),
                    ("E_C", e.E_C), ("E_Delta", e.E_Delta)]:
        rows.append(["metric", name, "", v])
    write_rows(path, ["kind", "i", "k", "value"], rows)


def dump_kernel_coo(path, K, threshold: float = 0.0) -> None:
    """Non-zero kernel entries as ``row, col, value``."""
    A = K.dense()
    r, c = np.nonzero(np.abs(A) > threshold)
    write_rows(path, ["row", "col", "value"], zip(r.tolist(), c.tolist(), A[r, c].tolist()))


REPLICA_HEADER = ["replica", "n_nodes", "sum_x", "sum_xw", "sum_xb", "sum_delta", "sum_cost",
                  "stages", "transmissions", "V_hat", "C_hat", "potential_violations",
                  "region_violations", "cost_mismatch"]


def dump_replicas(path, est) -> None:
    rows = []
    for n, r in enumerate(est.replicas):
        rows.append([n, r.n_nodes, r.sum_x, r.sum_xw, r.sum_xb, r.sum_delta, r.sum_cost,
                     r.stages, r.transmissions, r.V_hat, r.C_hat, r.potential_violations,
                     r.region_violations, r.cost_mismatch])
    rows.append(["estimate", "", "", "", "", "", "", est.stages, est.transmissions,
                 est.V_p_hat, est.C_p_hat, "", "", ""])
    write_rows(path, REPLICA_HEADER, rows)


def dump_trace(path, est, cost) -> None:
    """Transmission events of every replica that recorded a trace."""
    rows = []
    for n, r in enumerate(est.replicas):
        if r.events is None:
            continue
        ev = r.events
        c = cost(ev[:, 1], ev[:, 2])
        for e, ce in zip(ev.tolist(), np.atleast_1d(c).tolist()):
            rows.append([n, e[0], "transmission", e[3], e[1], e[2], ce])
    write_rows(path, ["replica", "time", "event", "carrier_theta", "dx", "dy", "cost"], rows)
