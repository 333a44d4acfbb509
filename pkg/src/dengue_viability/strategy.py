"""Feedback strategies built from a DP solution, and closed-loop simulation."""
from __future__ import annotations

import csv
import itertools
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dynamics import DEFAULT_SUBSTEPS, GAMMA, IntegrationError, phi_batch
from .grid import H_BOUND_TOL, UncertaintySet, locate_cells, uncertainty_points
from .robust_dp import DpSolution


class FeedbackStrategy:
    """Day-indexed state feedback read off the DP policy stack.

    ``lookup="nearest"`` evaluates the policy at the nearest grid node (ties
    go to the lower index). ``lookup="upper"`` uses the upper-right corner of
    the enclosing cell, which is the node the conservative rule certified.
    Nodes without a viable control fall back to the maximal control.
    """

    def __init__(self, sol: DpSolution, lookup="nearest"):
        if lookup not in ("nearest", "upper"):
            raise ValueError(f"unknown lookup {lookup!r}")
        self.sol = sol
        self.lookup = lookup
        self.levels = sol.control_grid.levels
        self.t0 = sol.horizon.t0
        self.t_final = sol.horizon.t_final

    def node_for(self, m, h):
        """Grid indices used to evaluate the policy at (arrays of) points."""
        sg = self.sol.state_grid
        m = np.asarray(m, dtype=float)
        h = np.asarray(h, dtype=float)
        if self.lookup == "upper":
            _, i, _, j, _ = locate_cells(np.minimum(m, sg.m_max), np.minimum(h, sg.h_cap), sg)
            return i, j
        xm = np.clip(m / sg.m_max * (sg.n_m - 1), 0, sg.n_m - 1)
        xh = np.clip(h / sg.h_cap * (sg.n_h - 1), 0, sg.n_h - 1)
        return np.ceil(xm - 0.5).astype(np.intp), np.ceil(xh - 0.5).astype(np.intp)

    def control_index(self, t, m, h):
        if not self.t0 <= t < self.t_final:
            raise ValueError(f"day {t} outside [{self.t0}, {self.t_final})")
        i, j = self.node_for(m, h)
        idx = self.sol.policy_at(t)[i, j].astype(np.intp)
        return np.where(idx >= 0, idx, len(self.levels) - 1)

    def __call__(self, t, m, h):
        return self.levels[self.control_index(t, m, h)]


class ConstantStrategy:
    """Apply the same control every day."""

    def __init__(self, u):
        self.u = float(u)

    def __call__(self, t, m, h):
        return np.full(np.shape(m), self.u)


@dataclass
class Scenario:
    rates: np.ndarray  # (n_days, 2) of (a_m, a_h)
    t0: int = 0
    seed: int | None = None

    def __post_init__(self):
        self.rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        if self.rates.shape[1] != 2:
            raise ValueError("scenario rates must have shape (n_days, 2)")

    def __len__(self):
        return len(self.rates)

    def within(self, us: UncertaintySet, tol=0.0):
        return all(us.contains(a, b, tol) for a, b in self.rates)


@dataclass
class Trajectory:
    states: np.ndarray    # (n_days + 1, 2)
    controls: np.ndarray  # (n_days,)
    scenario: Scenario

    @property
    def t0(self):
        return self.scenario.t0


def random_scenario(us: UncertaintySet, seed, length, mode="uniform", t0=0) -> Scenario:
    """Draw a scenario; ``extreme-switching`` picks a rectangle corner each day."""
    rng = np.random.default_rng(seed)
    if mode == "uniform":
        rates = np.column_stack([rng.uniform(us.a_m_lo, us.a_m_hi, length),
                                 rng.uniform(us.a_h_lo, us.a_h_hi, length)])
    elif mode == "extreme-switching":
        am = np.where(rng.integers(0, 2, length) == 1, us.a_m_hi, us.a_m_lo)
        ah = np.where(rng.integers(0, 2, length) == 1, us.a_h_hi, us.a_h_lo)
        rates = np.column_stack([am, ah])
    else:
        raise ValueError(f"unknown scenario mode {mode!r}")
    return Scenario(rates, t0, seed)


def lattice_scenarios(us: UncertaintySet, length, mode="full", t0=0):
    """Every scenario whose daily pair lies on the enumerated lattice."""
    pts = uncertainty_points(us, mode)
    for combo in itertools.product(range(len(pts)), repeat=length):
        yield Scenario(pts[list(combo)], t0)


def lattice_rates(us: UncertaintySet, length, mode="full"):
    """All lattice scenarios stacked as an array of shape (k**length, length, 2)."""
    pts = uncertainty_points(us, mode)
    idx = np.array(list(itertools.product(range(len(pts)), repeat=length)), dtype=np.intp)
    return pts[idx.reshape(-1, length)]


def simulate_batch(x0s, strat, rates, t0=0, substeps=DEFAULT_SUBSTEPS, gamma=GAMMA):
    """Closed-loop runs for many (start, scenario) pairs at once.

    ``x0s`` is (n, 2) and ``rates`` is (n, n_days, 2). Returns states of
    shape (n, n_days + 1, 2) and controls of shape (n, n_days).
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    rates = np.asarray(rates, dtype=float)
    n, n_days = rates.shape[:2]
    states = np.empty((n, n_days + 1, 2))
    controls = np.empty((n, n_days))
    m, h = x0s[:, 0].copy(), x0s[:, 1].copy()
    states[:, 0, 0], states[:, 0, 1] = m, h
    for k in range(n_days):
        u = strat(t0 + k, m, h)
        try:
            m, h = phi_batch(m, h, u, rates[:, k, 0], rates[:, k, 1], gamma, substeps)
        except IntegrationError as err:
            err.context.update(day=t0 + k)
            raise
        states[:, k + 1, 0], states[:, k + 1, 1] = m, h
        controls[:, k] = u
    return states, controls


def simulate_closed_loop(x0, strat, scn: Scenario, substeps=DEFAULT_SUBSTEPS, gamma=GAMMA) -> Trajectory:
    """Iterate the sampled dynamics under feedback ``strat`` along ``scn``."""
    states, controls = simulate_batch([tuple(x0)], strat, scn.rates[None], scn.t0, substeps, gamma)
    return Trajectory(states[0], controls[0], scn)


def first_violations(states, h_cap, t0=0):
    """Per-run first day above the cap (-1 where the cap always holds)."""
    over = states[..., 1] > h_cap + H_BOUND_TOL
    return np.where(over.any(axis=-1), t0 + np.argmax(over, axis=-1), -1)


def violation_report(traj: Trajectory, h_cap):
    """First day whose infected-human share exceeds the cap, else None."""
    over = np.nonzero(traj.states[:, 1] > h_cap + H_BOUND_TOL)[0]
    return int(traj.t0 + over[0]) if over.size else None


def monte_carlo(x0s, strat, us, horizon, n_scenarios, seed, mode="extreme-switching",
                substeps=DEFAULT_SUBSTEPS, gamma=GAMMA, h_cap=None, keep=0):
    """Run closed-loop simulations from each start over random scenarios.

    Scenario ``k`` is drawn with seed ``(seed, k)`` so results do not depend
    on batching. Returns a JSON-ready summary and up to ``keep`` trajectories.
    """
    h_cap = strat.sol.state_grid.h_cap if h_cap is None else h_cap
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    scenarios = [random_scenario(us, [seed, k], horizon.steps, mode, horizon.t0)
                 for k in range(n_scenarios)]
    starts = np.repeat(x0s, n_scenarios, axis=0)
    rates = np.tile(np.stack([s.rates for s in scenarios]), (len(x0s), 1, 1))
    states, controls = simulate_batch(starts, strat, rates, horizon.t0, substeps, gamma)
    first = first_violations(states, h_cap, horizon.t0)
    hist = Counter(int(d) for d in first if d >= 0)
    violations = int(np.count_nonzero(first >= 0))
    runs = len(first)
    kept = [Trajectory(states[k], controls[k], scenarios[k % n_scenarios])
            for k in range(min(keep, runs))]
    summary = {
        "seed": seed,
        "mode": mode,
        "n_scenarios": n_scenarios,
        "n_starts": len(x0s),
        "runs": runs,
        "violations": violations,
        "violation_rate": violations / runs if runs else 0.0,
        "first_violation_histogram": {str(d): c for d, c in sorted(hist.items())},
    }
    return summary, kept


def write_trajectory_csv(path, traj: Trajectory):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "m", "h", "u", "a_m", "a_h"])
        n = len(traj.controls)
        for k, (m, h) in enumerate(traj.states):
            row = [traj.t0 + k, f"{m:.17g}", f"{h:.17g}"]
            if k < n:
                a_m, a_h = traj.scenario.rates[k]
                row += [f"{traj.controls[k]:.17g}", f"{a_m:.17g}", f"{a_h:.17g}"]
            else:
                row += ["", "", ""]
            w.writerow(row)


def write_summary_json(path, summary):
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
