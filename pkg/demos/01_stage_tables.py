"""Stage tables for the default configuration.

Builds the discretization grid and the stage model, then inspects the
transmission-stage escape probabilities and the buffering-stage rates.
Run with ``python demos/01_stage_tables.py``.
"""
# %%
import numpy as np

from dtnspeed.model_config import default_params
from dtnspeed.quadrature import build_grid
from dtnspeed.stage_analysis import StageModel

params = default_params()
grid = build_grid(params.region, N=36, L=21)
print(f"{grid.N} direction cells, {grid.M} forwarding-region cells, "
      f"cell area {grid.delta_A:.4f}")

# %%
# Escape probability at the leading tip of the region, per direction.
stage = StageModel(params, grid)
tx = stage.transmission_tables()
k0 = int(np.argmax(grid.points[:, 0]))
for i in range(0, grid.N, 6):
    print(f"theta = {grid.theta[i]:+.3f}   P_E = {tx.PE[i, k0]:.4f}")

# %%
# Buffering-stage rates: turns that keep the packet (A), turns that hand it
# off (B), nodes turning into eligibility (C), nodes drifting in (D).
rt = stage.rate_tables()
print(" theta      rA      rB      rC      rD")
for i in range(0, grid.N, 6):
    print(f"{grid.theta[i]:+.3f}  {rt.rA_agg[i]:.4f}  {rt.rB_agg[i]:.4f}  "
          f"{rt.rC_agg[i]:.4f}  {rt.rD_agg[i]:.4f}")
print("rA + rB = r0 to within", float(np.max(np.abs(rt.rA_agg + rt.rB_agg - params.r0))))
