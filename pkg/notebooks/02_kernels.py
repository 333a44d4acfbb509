"""
Robust viability kernels
========================

Backward min-max programming on the state grid. At the default grid every
kernel is the origin alone, so a zoomed window over small M is used to show
how the kernel shrinks as the uncertainty box widens.
"""
# %%
from pathlib import Path

import numpy as np

from dengue_viability import svg
from dengue_viability.grid import ControlGrid, UncertaintySet, make_state_grid
from dengue_viability.robust_dp import (Horizon, backward_sweep, compare_kernels, extract_kernel,
                                        kernel_boundary)

out = Path("out")
out.mkdir(exist_ok=True)
controls = ControlGrid(70, 0.0333, 0.05)
horizon = Horizon(0, 60)
a_m, a_h = 0.076608, 0.0722633

# %% default grid: M spans [0, 1]
sets = {
    "low": UncertaintySet.singleton(a_m, a_h),
    "middle": UncertaintySet(0, 5, 0, 25, 70, 70),
    "high": UncertaintySet(0, 10, 0, 50, 70, 70),
}
for cap in (1e-5, 1e-4):
    sg = make_state_grid(70, 70, cap)
    sizes = {n: len(extract_kernel(backward_sweep(sg, controls, us, horizon))) for n, us in sets.items()}
    print(f"cap {cap:g}: kernel sizes {sizes}")
# the M spacing (1/69) dwarfs the band of viable M values, which is roughly
# gamma * cap / a_h, so only the rest point survives the conservative rule

# %% zoomed window: M in [0, cap]
sg = make_state_grid(70, 70, 1e-5, 1e-5)
boxes = {f"+-{int(100 * f)}%": UncertaintySet(a_m * (1 - f), a_m * (1 + f), a_h * (1 - f),
                                              a_h * (1 + f), 70, 70)
         for f in (0.0, 0.02, 0.05)}
kernels = {n: extract_kernel(backward_sweep(sg, controls, us, horizon)) for n, us in boxes.items()}
names = list(kernels)
for a, b in zip(names[1:], names):
    rel = compare_kernels(kernels[a], kernels[b])
    print(f"{a} vs {b}: {rel.relation}, {rel.difference} nodes differ")

series = []
for n, k in kernels.items():
    b = kernel_boundary(k)
    series.append({"x": b[:, 0], "y": b[:, 1], "label": n})
svg.write(out / "kernels_zoomed.svg", series, (0, sg.m_max), (0, sg.h_cap), "M", "H",
          "Kernels around the fitted rates")
