"""
Route choice as a soft-optimal MDP
==================================

A traveler at a node picks the next link with logit probabilities built from
the values downstream.  Here a three-node toy with two parallel routes shows
how the scale parameter trades off between all-or-nothing and uniform
splitting, and how the flow sensitivity predicts a utility change.
"""
import numpy as np

from maaseq import pumcm

# States 0 and 1 are intersections; state 2 (== n_states) is the destination.
# Action 0: 0 -> 2 directly.  Actions 1, 2: 0 -> 1 -> 2 via a detour.
mdp = pumcm.Mdp(2, tail=np.array([0, 0, 1]), head=np.array([2, 1, 2]))
u = np.array([-3.0, -1.0, -1.5])        # generalized utilities, all negative
q = np.array([100.0, 0.0])              # 100 travelers start at state 0

# %%
# Small scales concentrate flow on the better route (the detour, -2.5 vs -3);
# large ones spread it evenly.
for sigma in (0.1, 0.5, 1.0, 5.0):
    sol = pumcm.solve_destination(mdp, u, q, sigma)
    print(f"sigma={sigma:<4}  direct={sol.x[0]:6.2f}  detour={sol.x[1]:6.2f}  V(0)={sol.V[0]:.3f}")

# %%
# The flow Jacobian gives the first-order response to a toll on the direct
# link; compare with a re-solve.
sol = pumcm.solve_destination(mdp, u, q, 1.0)
J = pumcm.flow_sensitivity(sol)
toll = 0.2
predicted = sol.x - toll * J[:, 0]
actual = pumcm.solve_destination(mdp, u - np.array([toll, 0, 0]), q, 1.0).x
print("predicted flows after toll:", np.round(predicted, 3))
print("re-solved flows after toll:", np.round(actual, 3))

# %%
# Flows are also the demand-weighted gradient of the value function.
print("flows from values:", np.round(pumcm.flows_from_values(sol), 6))
