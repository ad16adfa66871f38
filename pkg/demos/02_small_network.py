"""
Operators with and without a MaaS platform
==========================================

Solves the built-in seven-node network twice and prints the change in shares,
profits and welfare once the platform enters.  Each solve takes several
seconds.
"""
from maaseq import compare, load_scenario, solve
from maaseq.metrics import format_compare, format_table

base = load_scenario("small_without_maas")
maas = load_scenario("small_with_maas")

# %%
# The expanded network: one destination graph per OD destination, with
# separate MaaS, non-MaaS and driving copies of the roads.
print(maas.build_network().summary())

# %%
# Equilibria.  The solver reports its residual rather than raising when it
# hits the iteration cap.
reports = [solve(base), solve(maas)]
for r in reports:
    print(f"{r.name}: converged={r.converged} after {r.iterations} iterations")

print(format_table(reports, arrows=True))

# %%
# Every scalar metric side by side.
print(format_compare(compare(*reports)))
