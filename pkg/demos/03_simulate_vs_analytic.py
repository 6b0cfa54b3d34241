"""Monte Carlo check of the analytic packet speed.

A short horizon keeps this quick; the acceptance run uses the default
horizon of ``1e4 / r0`` per replica.  Run with
``python demos/03_simulate_vs_analytic.py``.
"""
# %%
from dtnspeed.model_config import default_params
from dtnspeed.pipeline import analyze
from dtnspeed.simulator import SimConfig, estimate

params = default_params()
res = analyze(params)
est = estimate(SimConfig(params, horizon=500.0, replicas=4, seed=1))

# %%
print(f"analytic   V_p = {res.V_p:.4f}   C_p = {res.C_p:.4f}")
print(f"simulated  V_p = {est.V_p_hat:.4f} +- {est.V_half_width:.4f}   "
      f"C_p = {est.C_p_hat:.4f} +- {est.C_half_width:.4f}")
print(f"{est.transmissions} transmissions over {est.stages} stages, "
      f"direction KS p-value {est.ks_pvalue:.3f}")
viol = sum(r.potential_violations + r.region_violations for r in est.replicas)
print("event invariant violations:", viol)
