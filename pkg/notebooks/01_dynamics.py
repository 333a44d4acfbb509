"""
Controlled mosquito-human transmission over one day
===================================================

Integrates the daily flow map at the fitted rates, compares it with a tight
adaptive solver, and shows the effect of the mortality control.
"""
# %%
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from dengue_viability import svg
from dengue_viability.dynamics import GAMMA, REFERENCE_ESTIMATE, aggregate, phi_batch

out = Path("out")
out.mkdir(exist_ok=True)
rates = aggregate(REFERENCE_ESTIMATE)
print(rates)

# %% one day from a few starting points, fixed-step vs adaptive
starts = np.array([[0.01, 0.001], [0.3, 0.2], [0.9, 0.05]])
u = 0.04


def exact(m, h):
    f = lambda s, y: [rates.a_m * y[1] * (1 - y[0]) - u * y[0],
                      rates.a_h * y[0] * (1 - y[1]) - GAMMA * y[1]]
    return solve_ivp(f, (0, 1), [m, h], method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]


m1, h1 = phi_batch(starts[:, 0], starts[:, 1], u, rates.a_m, rates.a_h)
for (m, h), a, b in zip(starts, m1, h1):
    print(f"({m:.3f}, {h:.3f}) -> ({a:.10f}, {b:.10f})  ref gap {np.abs(exact(m, h) - [a, b]).max():.1e}")

# %% sixty days under the cheapest and the strongest control
days = 60
series = []
for u in (0.0333, 0.05):
    m, h = np.array([3e-4]), np.array([1e-4])
    path = [h[0]]
    for _ in range(days):
        m, h = phi_batch(m, h, u, rates.a_m, rates.a_h)
        path.append(h[0])
    series.append({"x": np.arange(days + 1), "y": np.array(path), "label": f"u = {u}"})
    print(f"u={u}: H after {days} days = {path[-1]:.3e}")

svg.write(out / "dynamics.svg", series, (0, days), (0, max(s["y"].max() for s in series)),
          "day", "H", "Infected humans under constant control")
