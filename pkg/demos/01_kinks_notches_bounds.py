# %% [markdown]
# # Kinks, notches and the identified set
#
# A worker with log ability n* picks log income y under a piecewise-linear
# budget.  At a convex kink a whole interval of abilities lands exactly on
# the cutoff.  How big that interval is depends on the elasticity, so the
# share of bunchers carries information about it.

# %%
import math

import numpy as np

from bunching.bounds import bounds_curve, m0, partial_id_set
from bunching.budget_model import build_schedule, bunching_mass, indifference_ability, solution_map, solve_agent
from bunching.hetero_dist import Uniform
from bunching.point_estimators import notch_eps, trapezoid_eps_logs

sched = build_schedule([1.0], [0.2, 0.3])
eps = 1.5
smap = solution_map(sched, eps)
print("bunching interval in logs:", smap.log_lower.round(3), smap.log_upper.round(3))

# %% [markdown]
# Below the interval income follows n* + eps s0; above it, n* + eps s1.

# %%
for n in (0.0, 0.4, 1.0):
    print(f"log ability {n:4.1f} -> log income {float(solve_agent(sched, n, eps, log=True)):+.5f}")

# %% [markdown]
# With log ability uniform on [-0.565, 1.435] the density is 0.5 everywhere,
# so the bunching mass is half the interval length.

# %%
ability = Uniform(-0.565, 1.435)
B = float(bunching_mass(sched, eps, ability)[0])
s0, s1 = sched.log_slopes
print(f"B = {B:.6f}; trapezoid estimate = {trapezoid_eps_logs(B, 0.5, 0.5, s0, s1).eps_hat:.6f}")

# %% [markdown]
# ## Notches
#
# A lump-sum jump at the cutoff leaves an empty stretch of incomes above it.
# The top of that stretch pins down the elasticity through one indifference
# condition.  With K = 1, no marginal tax and a jump of 0.5, the unit
# elasticity case has a closed form: N = 1.5 + sqrt(1.25).

# %%
notch = build_schedule([1.0], [0.0, 0.0], [0.5])
N_I, Y_I = indifference_ability(notch, 0, 1.0)
print(f"N_I = {N_I:.6f} (closed form {1.5 + math.sqrt(1.25):.6f})")
print(f"elasticity recovered from Y_I: {notch_eps(Y_I, notch).eps_hat:.10f}")

# %% [markdown]
# ## Bounds under a slope restriction
#
# If the ability density may bend, B alone no longer fixes the elasticity.
# Bounding the slope of that density by M gives an interval.  At the
# smallest admissible M the interval collapses to the trapezoid value.  For
# large M the upper end becomes infinite.

# %%
curve = bounds_curve(B, 0.5, 0.5, s0, s1, np.geomspace(0.05, 5, 9))
for M, case, lo, up, _ in curve.table():
    print(f"M = {M:6.3f}  {case:9s}  [{lo:.4f}, {up if up is None else round(up, 4)}]")
pid = partial_id_set(B, 0.5, 0.5, s0, s1, 0.5)
print(f"interval at M = 0.5: [{pid.eps_lower:.4f}, {pid.eps_upper:.4f}]")

# %% [markdown]
# Unequal side limits make m0 strictly positive, and the set is empty below it.

# %%
print("m0 for B=0.1, f-=0.2, f+=0.8:", m0(0.1, 0.2, 0.8))
print(partial_id_set(0.1, 0.2, 0.8, s0, s1, 2.0).case, partial_id_set(0.1, 0.2, 0.8, s0, s1, 3.0).width)
