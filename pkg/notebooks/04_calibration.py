"""
Calibrating transmission rates from incidence
=============================================

Daily incidence is turned into prevalence with a ten-day window and fitted
by bounded least squares. Only the aggregate rates are identifiable.
"""
# %%
from pathlib import Path

import numpy as np

from dengue_viability import svg
from dengue_viability.dynamics import REFERENCE_ESTIMATE, REFERENCE_INITIAL
from dengue_viability.estimation import (FitProblem, aggregate_ranges, fit, fit_multistart,
                                         incidence_to_prevalence, simulate_prevalence,
                                         synthetic_incidence, PARAM_LOWER, PARAM_UPPER)

out = Path("out")
out.mkdir(exist_ok=True)

# %% noise-free synthetic counts from the published estimate
inc = synthetic_incidence(REFERENCE_ESTIMATE, 2e-4, 60, 2_400_000)
prev = incidence_to_prevalence(inc)
print(inc.new_cases[:10], "...")

# %% single start from the published initial guess, then a few random starts
problem = FitProblem(prev, REFERENCE_INITIAL)
res = fit(problem)
print(res.method, res.nfev, "evaluations, objective", res.objective)
print("aggregates", res.aggregates)
print("parameters", np.round(res.theta_hat.as_vector(), 4))
best = fit_multistart(problem, n_starts=4, seed=1)
print("multistart aggregates", best.aggregates, "from start", best.start)

# %% the fit
model = simulate_prevalence(res.theta_hat, problem.h0, problem.days)
svg.write(out / "calibration.svg",
          [{"x": model.days, "y": model.values, "label": "model"},
           {"x": prev.days, "y": prev.values, "label": "data", "kind": "points"}],
          (0, 60), (0, 1.05 * prev.values.max()), "day", "prevalence", "Calibration")

# %% aggregate rate ranges implied by the parameter bounds
print(aggregate_ranges(PARAM_LOWER, PARAM_UPPER).bounds)
