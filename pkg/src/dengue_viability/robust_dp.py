"""Backward min-max dynamic programming for robust viability kernels.

For every node the recursion keeps the best (max) control against the worst
(min) uncertainty, reading the next-day value function through the
conservative cell rule. The flow map does not depend on the day, so node
images are computed once per (control, uncertainty) pair and reused across
the whole sweep when they fit in memory.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dynamics import DEFAULT_SUBSTEPS, GAMMA, IntegrationError, phi_batch
from .grid import (ControlGrid, StateGrid, UncertaintySet, ValueGrid, locate_cells,
                   membership_from_cells, uncertainty_points)

log = logging.getLogger(__name__)

MAX_TABLE_ENTRIES = 10_000_000


@dataclass(frozen=True)
class Horizon:
    t0: int = 0
    t_final: int = 60

    def __post_init__(self):
        if self.t0 < 0 or self.t_final < self.t0 + 1:
            raise ValueError(f"need 0 <= t0 and T >= t0 + 1, got t0={self.t0}, T={self.t_final}")

    @property
    def steps(self):
        return self.t_final - self.t0


@dataclass
class DpSolution:
    """Value functions for t0..T and the per-day maximizing control index.

    ``policy_stack[k]`` holds the control index chosen at day ``t0 + k``;
    nodes that are not viable at that day carry -1.
    """

    state_grid: StateGrid
    control_grid: ControlGrid
    uncertainty: UncertaintySet
    horizon: Horizon
    mode: str
    substeps: int
    gamma: float
    value_stack: list
    policy_stack: np.ndarray
    wall_time: float = 0.0

    def value_at(self, t) -> ValueGrid:
        return self.value_stack[t - self.horizon.t0]

    def policy_at(self, t) -> np.ndarray:
        return self.policy_stack[t - self.horizon.t0]

    def metadata(self):
        sg, cg, us, hz = self.state_grid, self.control_grid, self.uncertainty, self.horizon
        return {
            "state_grid": {"n_m": sg.n_m, "n_h": sg.n_h, "h_cap": sg.h_cap, "m_max": sg.m_max},
            "control_grid": {"n_u": cg.n_u, "u_lo": cg.u_lo, "u_hi": cg.u_hi},
            "uncertainty": {"a_m": [us.a_m_lo, us.a_m_hi], "a_h": [us.a_h_lo, us.a_h_hi],
                            "n_am": us.n_am, "n_ah": us.n_ah},
            "horizon": {"t0": hz.t0, "T": hz.t_final},
            "mode": self.mode,
            "substeps": self.substeps,
            "gamma": self.gamma,
            "wall_time": self.wall_time,
        }


@dataclass
class Kernel:
    mask: np.ndarray
    state_grid: StateGrid
    metadata: dict = field(default_factory=dict)

    @property
    def members(self):
        return frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(self.mask))))

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, node):
        i, j = node
        return bool(self.mask[i, j])


class KernelComparison(NamedTuple):
    relation: str
    difference: int


def _node_images(sg, controls, points, gamma, substeps, threads=1):
    """Images of every node under every (control, uncertainty) pair.

    Returns arrays of shape (n_nodes, n_controls, n_points).
    """
    mm, hh = sg.mesh()
    m0 = mm.ravel()[:, None, None]
    h0 = hh.ravel()[:, None, None]
    n_u, n_a = len(controls), len(points)
    out_m = np.empty((m0.shape[0], n_u, n_a))
    out_h = np.empty_like(out_m)

    def work(c):
        u = controls[c]
        try:
            m1, h1 = phi_batch(m0[:, 0, :], h0[:, 0, :], u, points[None, :, 0], points[None, :, 1],
                               gamma, substeps)
        except IntegrationError:
            _diagnose(sg, u, points, gamma, substeps)
            raise
        out_m[:, c, :] = m1
        out_h[:, c, :] = h1

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n_u)))
    else:
        for c in range(n_u):
            work(c)
    return out_m, out_h


def _diagnose(sg, u, points, gamma, substeps):
    """Re-run the failing batch pointwise to attach node/uncertainty context."""
    mm, hh = sg.mesh()
    for (i, j), m in np.ndenumerate(mm):
        for a_m, a_h in points:
            try:
                phi_batch(m, hh[i, j], u, a_m, a_h, gamma, substeps)
            except IntegrationError as err:
                err.context.update(node=(i, j), u=float(u), a=(float(a_m), float(a_h)))
                raise err


def _pack(cells):
    i_lo, i_hi, j_lo, j_hi, inside = cells
    return tuple(a.astype(np.int16) for a in (i_lo, i_hi, j_lo, j_hi)) + (inside,)


def backward_sweep(sg: StateGrid, cg: ControlGrid, us: UncertaintySet, hz: Horizon,
                   mode="corners", substeps=DEFAULT_SUBSTEPS, gamma=GAMMA, threads=1,
                   max_table_entries=MAX_TABLE_ENTRIES) -> DpSolution:
    """Compute the value functions from T down to t0.

    ``mode="full"`` takes the minimum over the whole uncertainty lattice;
    ``mode="corners"`` evaluates only the upper-right corner, which is exact
    when the dynamics are monotone and every value function is a lower set
    (see :func:`verify_corners_mode`).
    """
    start = time.perf_counter()
    controls = cg.levels
    points = uncertainty_points(us, mode)
    n_nodes = sg.n_m * sg.n_h
    size = n_nodes * len(controls) * len(points)

    def cells_for(u_idx):
        m1, h1 = _node_images(sg, controls[u_idx], points, gamma, substeps, threads)
        return _pack(locate_cells(m1, h1, sg))

    table = cells_for(np.arange(len(controls))) if size <= max_table_entries else None
    if table is None:
        log.info("transition table of %d entries exceeds budget; recomputing per step", size)

    values = np.ones(sg.shape, dtype=bool)
    value_stack = [ValueGrid(values.copy(), hz.t_final)]
    policies = []
    for t in range(hz.t_final - 1, hz.t0 - 1, -1):
        flat = values  # V_{t+1}, read-only during this step
        if table is not None:
            robust = membership_from_cells(flat, table).all(axis=2)
        else:
            robust = np.empty((n_nodes, len(controls)), dtype=bool)
            for c in range(len(controls)):
                robust[:, c] = membership_from_cells(flat, cells_for(np.array([c]))).all(axis=2)[:, 0]
        viable = robust.any(axis=1)
        policy = np.where(viable, np.argmax(robust, axis=1), -1).astype(np.int16)
        values = viable.reshape(sg.shape)
        value_stack.append(ValueGrid(values.copy(), t))
        policies.append(policy.reshape(sg.shape))
        log.debug("t=%d viable=%d", t, int(values.sum()))
    value_stack.reverse()
    policies.reverse()
    return DpSolution(sg, cg, us, hz, mode, int(substeps), float(gamma), value_stack,
                      np.array(policies), time.perf_counter() - start)


def extract_kernel(sol: DpSolution) -> Kernel:
    """Nodes whose value at the initial day equals 1."""
    mask = sol.value_stack[0].values.copy()
    return Kernel(mask, sol.state_grid, sol.metadata())


def kernel_boundary(k: Kernel):
    """Highest kernel node in each M-column, as an (n, 2) array ordered by M."""
    if not k.mask.any():
        raise ValueError("kernel is empty; no boundary to trace")
    sg = k.state_grid
    rows = []
    for i in range(sg.n_m):
        js = np.nonzero(k.mask[i])[0]
        if js.size:
            rows.append((sg.m_nodes[i], sg.h_nodes[js[-1]]))
    return np.array(rows)


def compare_kernels(a: Kernel, b: Kernel) -> KernelComparison:
    """Set relation of ``a`` to ``b`` and the size of their symmetric difference."""
    if a.mask.shape != b.mask.shape or a.state_grid != b.state_grid:
        raise ValueError("kernels were computed on different grids")
    diff = int(np.count_nonzero(a.mask ^ b.mask))
    a_in_b = not np.any(a.mask & ~b.mask)
    b_in_a = not np.any(b.mask & ~a.mask)
    if a_in_b and b_in_a:
        rel = "equal"
    elif a_in_b:
        rel = "subset"
    elif b_in_a:
        rel = "superset"
    else:
        rel = "incomparable"
    return KernelComparison(rel, diff)


def is_lower_set(mask) -> bool:
    """True if every node dominated by a member is itself a member."""
    mask = np.asarray(mask, dtype=bool)
    # lower closure: a node joins if any member dominates it
    closed = np.flip(np.logical_or.accumulate(np.flip(mask, 0), axis=0), 0)
    closed = np.flip(np.logical_or.accumulate(np.flip(closed, 1), axis=1), 1)
    return bool(np.array_equal(closed, mask))


def verify_corners_mode(sg, cg, us, hz, substeps=DEFAULT_SUBSTEPS, gamma=GAMMA):
    """Run both modes and check they agree and every full-mode value is a lower set."""
    full = backward_sweep(sg, cg, us, hz, "full", substeps, gamma)
    corners = backward_sweep(sg, cg, us, hz, "corners", substeps, gamma)
    same = all(np.array_equal(a.values, b.values)
               for a, b in zip(full.value_stack, corners.value_stack))
    lower = all(is_lower_set(v.values) for v in full.value_stack)
    return same and lower


def save_solution(path, sol: DpSolution):
    """Persist value and policy stacks (npz) with their metadata."""
    np.savez_compressed(
        path,
        values=np.array([v.values for v in sol.value_stack]),
        policy=sol.policy_stack,
        metadata=np.array(json.dumps({**sol.metadata(), "wall_time": 0.0}, sort_keys=True)),
    )


def load_solution(path) -> DpSolution:
    with np.load(path) as z:
        values, policy = z["values"], z["policy"]
        meta = json.loads(str(z["metadata"]))
    g, c, u, h = meta["state_grid"], meta["control_grid"], meta["uncertainty"], meta["horizon"]
    sg = StateGrid(g["n_m"], g["n_h"], g["h_cap"], g["m_max"])
    cg = ControlGrid(c["n_u"], c["u_lo"], c["u_hi"])
    us = UncertaintySet(*u["a_m"], *u["a_h"], u["n_am"], u["n_ah"])
    hz = Horizon(h["t0"], h["T"])
    stack = [ValueGrid(v, hz.t0 + k) for k, v in enumerate(values)]
    return DpSolution(sg, cg, us, hz, meta["mode"], meta["substeps"], meta["gamma"], stack, policy)
