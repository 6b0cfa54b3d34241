"""Parameter sweeps through the library entry points.

The same sweeps run from the shell with
``python -m dtnspeed --sweep fig4 --out fig4.csv``.
Run with ``python demos/04_sweeps.py``.
"""
# %%
import numpy as np

from dtnspeed.cli import PointOptions, SweepSpec, run_sweep

spec = SweepSpec(("a", (0.5, 1.0, 2.0)), ("eccentricity", (0.0, 0.6)))
header, rows = run_sweep(spec, opts=PointOptions(N=24, L=15))

# %%
print(f"{'a':>4} {'ecc':>4} {'V_p':>8} {'C_p':>8}")
for r in rows:
    print(f"{r['a']:>4} {r['eccentricity']:>4} {r['V_p']:8.4f} {r['C_p']:8.4f}")

# %%
# Larger regions reach further per hop: V_p rises with a at fixed eccentricity.
V = np.array([r["V_p"] for r in rows]).reshape(3, 2)
print("V_p increasing in a:", bool(np.all(np.diff(V, axis=0) > 0)))
