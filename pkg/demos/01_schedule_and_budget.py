# Walkthrough: the noise schedule and where the guidance budget goes.
#
# A guided reverse chain pulls each predicted clean image toward the input x.
# Every pull leaks a little information about x, so the total pull is capped
# by a budget that depends only on the smoothing noise sigma. This script
# shows how that budget is spent step by step.

import numpy as np

from adds import (BudgetVector, build_linear_schedule, evenly_spaced_timesteps,
                  match_timestep, respace, step_cost)

# The standard linear schedule has 1000 steps. Sampling uses 20 of them.

full = build_linear_schedule()
grid = respace(full, evenly_spaced_timesteps(full.T, 20))
print("kept timesteps:", grid.timestep_map)
print("alpha_bar at the last kept step: %.6g" % grid.alpha_bar(grid.T))

# The smoothing noise sigma corresponds to a timestep of the full schedule,
# the first one noisy enough to hide sigma-level noise.

for sigma in (0.5, 1.0, 1.5, 2.0):
    print(f"sigma={sigma}: matching timestep {match_timestep(full, sigma)}")

# The budget starts at 1/sigma^2 per pixel. A step at scale s costs
# s^2 * c_t / sigma_t^2, so the noisy early steps are cheap and the quiet
# late steps are expensive.

sigma, s = 1.0, 0.8
budget = BudgetVector.initial(sigma, (1,))
print("\n t   cost at s=0.8   remaining")
for t in range(grid.T, 0, -1):
    sd = np.array([np.sqrt(grid.posterior_var(t))])
    cost = float(step_cost(s, t, grid, sd)[0])
    left = float(budget.remaining[0]) - cost
    if left <= 0:
        print(f"{t:2d}   {cost:12.4g}   budget would run out here")
        break
    budget = BudgetVector(np.array([left]), budget.mu_total)
    print(f"{t:2d}   {cost:12.4g}   {left:.4f}")
