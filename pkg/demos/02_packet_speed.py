"""Packet speed and cost per unit progress from the stationary chain.

Run with ``python demos/02_packet_speed.py``.
"""
# %%
from dtnspeed.model_config import default_params, params_from_dict
from dtnspeed.pipeline import analyze

res = analyze(default_params(), cross_check=True)
print(f"V_p = {res.V_p:.4f}   C_p = {res.C_p:.4f}")
for k, v in res.diagnostics().items():
    print(f"  {k:>18}: {v}")

# %%
# Denser networks forward more often, so the packet moves faster.
for lam in (0.25, 0.5, 1.0, 2.0, 4.0):
    r = analyze(params_from_dict({"lambda": lam}))
    print(f"lambda = {lam:<5} V_p = {r.V_p:.4f}  C_p = {r.C_p:.4f}")
