"""
Who gains at which wholesale price
==================================

A coarse sweep of the wholesale price the platform pays both operators.  At
each grid value the game is re-solved; profits are compared with the
equilibrium without the platform to find the prices at which every operator
is better off and the platform still breaks even.

The full 36-point grid is what ``maaseq sweep --grid 0:3.5:0.1`` runs; this
demo uses six points.
"""
from maaseq import SweepSpec, load_scenario, run_sweep

sc = load_scenario("small_with_maas")
res = run_sweep(sc, SweepSpec("wholesale", (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)))

print(f"{'c':>5}{'MoD':>10}{'PT':>10}{'MaaS':>10}{'total':>10}  converged")
for row in res.rows:
    print(f"{row['value']:5.1f}{row['profit.MoD']:10.1f}{row['profit.PT']:10.1f}"
          f"{row['profit.MaaS']:10.1f}{row['profit.Total']:10.1f}  {row['converged']}")

# %%
a = res.analysis
print("profit maximizers:", a["argmax"])
print("operators' profits without the platform:", a["baseline_profit"])
print("everyone gains for c in", a["pareto_values"])
