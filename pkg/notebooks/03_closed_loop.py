"""
Closed-loop control from the kernel
===================================

The DP policy used as state feedback keeps the infection cap under every
scenario drawn from the uncertainty box, when started inside the kernel.
Starting just outside gives no such promise.
"""
# %%
from pathlib import Path

import numpy as np

from dengue_viability import svg
from dengue_viability.grid import ControlGrid, UncertaintySet, make_state_grid
from dengue_viability.robust_dp import Horizon, backward_sweep, extract_kernel
from dengue_viability.strategy import FeedbackStrategy, monte_carlo, random_scenario, simulate_closed_loop

out = Path("out")
out.mkdir(exist_ok=True)
a_m, a_h = 0.076608, 0.0722633
us = UncertaintySet(a_m * 0.95, a_m * 1.05, a_h * 0.95, a_h * 1.05, 70, 70)
sg = make_state_grid(70, 70, 1e-5, 1e-5)
sol = backward_sweep(sg, ControlGrid(70, 0.0333, 0.05), us, Horizon(0, 60))
kernel = extract_kernel(sol)
strategy = FeedbackStrategy(sol)
print(len(kernel), "viable nodes")

# %% one run from the kernel node with the most mosquitoes
i, j = max(kernel.members)
x0 = sg.node(i, j)
scn = random_scenario(us, seed=3, length=60, mode="extreme-switching")
traj = simulate_closed_loop(x0, strategy, scn)
print("start", x0, "max H", traj.states[:, 1].max(), "cap", sg.h_cap)
print("first controls", np.round(traj.controls[:8], 4))

t = np.arange(61)
svg.write(out / "closed_loop.svg",
          [{"x": t, "y": traj.states[:, 1], "label": "H under feedback"},
           {"x": [0, 60], "y": [sg.h_cap, sg.h_cap], "label": "cap"}],
          (0, 60), (0, 1.2 * sg.h_cap), "day", "H", "Feedback from a kernel node")

# %% Monte Carlo from every kernel node, then from the ring just outside it
mask = kernel.mask
ring = np.zeros_like(mask)
ring[1:] |= mask[:-1]
ring[:, 1:] |= mask[:, :-1]
ring &= ~mask
inside = np.array([sg.node(i, j) for i, j in zip(*np.nonzero(mask))])
outside = np.array([sg.node(i, j) for i, j in zip(*np.nonzero(ring))])
for name, starts in (("inside", inside), ("outside", outside)):
    summary, _ = monte_carlo(starts, strategy, us, sol.horizon, n_scenarios=20, seed=0)
    print(name, summary["runs"], "runs,", summary["violations"], "violations")
# the all-corners rule is cautious: nearby outside starts often survive these
# draws too, they are just not guaranteed to
