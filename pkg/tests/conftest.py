import numpy as np
import pytest

from dengue_viability.grid import ControlGrid, UncertaintySet, make_state_grid
from dengue_viability.robust_dp import Horizon, backward_sweep

# Small regime with non-trivial kernels; default caps collapse them.
TOY_CAP = 0.3
TOY_CONTROLS = (0.1, 0.6)
TOY_SET = (0.2, 0.4, 0.2, 0.4)


def toy_problem(n=8, n_u=3, lattice=2, steps=3, cap=TOY_CAP):
    sg = make_state_grid(n, n, cap)
    cg = ControlGrid(n_u, *TOY_CONTROLS)
    us = UncertaintySet(*TOY_SET, lattice, lattice)
    return sg, cg, us, Horizon(0, steps)


@pytest.fixture(scope="session")
def toy_solution():
    sg, cg, us, hz = toy_problem(n=10, n_u=3, lattice=2, steps=4)
    return backward_sweep(sg, cg, us, hz, "full", substeps=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_config(rng):
    """Small randomized instance whose uncertainty and control lattices can be
    widened by whole steps (so the wider lattice contains the narrower one)."""
    n = int(rng.integers(6, 11))
    cap = float(rng.uniform(0.1, 0.6))
    step_u = float(rng.uniform(0.03, 0.15))
    u_lo = step_u * int(rng.integers(1, 3))
    step_a = float(rng.uniform(0.03, 0.1))
    a_lo = step_a * int(rng.integers(1, 4))
    b_lo = step_a * int(rng.integers(1, 4))
    return {
        "sg": make_state_grid(n, n, cap),
        "cg": ControlGrid(3, u_lo, u_lo + 2 * step_u),
        "cg_wide": ControlGrid(5, u_lo - step_u, u_lo + 3 * step_u),
        "us": UncertaintySet(a_lo, a_lo + 2 * step_a, b_lo, b_lo + 2 * step_a, 3, 3),
        "us_wide": UncertaintySet(a_lo - step_a, a_lo + 3 * step_a, b_lo - step_a,
                                  b_lo + 3 * step_a, 5, 5),
        "hz": Horizon(0, int(rng.integers(2, 6))),
    }
