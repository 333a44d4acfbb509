"""State, control and uncertainty grids, plus the conservative lookup rule.

A continuum point is declared viable only when every grid node surrounding
it is viable. Points within ``SNAP_TOL`` (in index units) of a node line use
that node line alone, so node coordinates always read back their own value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import AggregateRates

SNAP_TOL = 1e-9  # index units
M_BOUND_TOL = 1e-12
H_BOUND_TOL = 1e-15


@dataclass(frozen=True)
class StateGrid:
    """Uniform grid over [0, m_max] x [0, h_cap].

    ``m_max`` defaults to 1 (the full mosquito range). A smaller value zooms
    onto low prevalence; anything mapped beyond it is treated as not viable.
    """

    n_m: int = 70
    n_h: int = 70
    h_cap: float = 1e-5
    m_max: float = 1.0

    def __post_init__(self):
        if int(self.n_m) < 2 or int(self.n_h) < 2:
            raise ValueError(f"grid needs n_m, n_h >= 2, got ({self.n_m}, {self.n_h})")
        if not 0.0 < self.h_cap < 1.0:
            raise ValueError(f"h_cap must lie in (0, 1), got {self.h_cap}")
        if not 0.0 < self.m_max <= 1.0:
            raise ValueError(f"m_max must lie in (0, 1], got {self.m_max}")

    @property
    def shape(self):
        return (self.n_m, self.n_h)

    @property
    def m_nodes(self):
        return np.arange(self.n_m) / (self.n_m - 1) * self.m_max

    @property
    def h_nodes(self):
        return self.h_cap * np.arange(self.n_h) / (self.n_h - 1)

    def node(self, i, j):
        return float(self.m_nodes[i]), float(self.h_nodes[j])

    def mesh(self):
        """Node coordinate arrays of shape (n_m, n_h)."""
        return np.meshgrid(self.m_nodes, self.h_nodes, indexing="ij")


def make_state_grid(n_m=70, n_h=70, h_cap=1e-5, m_max=1.0) -> StateGrid:
    return StateGrid(int(n_m), int(n_h), float(h_cap), float(m_max))


@dataclass(frozen=True)
class ControlGrid:
    n_u: int = 70
    u_lo: float = 0.0333
    u_hi: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.u_lo <= self.u_hi <= 1.0:
            raise ValueError(f"need 0 <= u_lo <= u_hi <= 1, got [{self.u_lo}, {self.u_hi}]")
        if self.n_u < 1 or (self.n_u == 1 and self.u_lo != self.u_hi):
            raise ValueError(f"n_u={self.n_u} cannot include both endpoints")

    @property
    def levels(self):
        if self.u_lo == self.u_hi:
            return np.full(self.n_u, self.u_lo)
        return np.linspace(self.u_lo, self.u_hi, self.n_u)


@dataclass(frozen=True)
class UncertaintySet:
    """Rectangle of admissible (a_m, a_h); lo == hi gives a singleton side."""

    a_m_lo: float
    a_m_hi: float
    a_h_lo: float
    a_h_hi: float
    n_am: int = 70
    n_ah: int = 70

    def __post_init__(self):
        if not (0.0 <= self.a_m_lo <= self.a_m_hi and 0.0 <= self.a_h_lo <= self.a_h_hi):
            raise ValueError(f"invalid uncertainty rectangle {self.bounds}")
        if self.n_am < 1 or self.n_ah < 1:
            raise ValueError("lattice counts must be >= 1")

    @classmethod
    def singleton(cls, a_m, a_h):
        return cls(a_m, a_m, a_h, a_h, 1, 1)

    @property
    def bounds(self):
        return (self.a_m_lo, self.a_m_hi, self.a_h_lo, self.a_h_hi)

    @property
    def is_singleton(self):
        return self.a_m_lo == self.a_m_hi and self.a_h_lo == self.a_h_hi

    def contains(self, a_m, a_h, tol=0.0):
        return (self.a_m_lo - tol <= a_m <= self.a_m_hi + tol
                and self.a_h_lo - tol <= a_h <= self.a_h_hi + tol)

    def corners(self):
        pts = {(a, b) for a in (self.a_m_lo, self.a_m_hi) for b in (self.a_h_lo, self.a_h_hi)}
        return np.array(sorted(pts))


def _axis(lo, hi, n):
    return np.array([lo]) if lo == hi else np.linspace(lo, hi, n)


def uncertainty_points(us: UncertaintySet, mode="full"):
    """Enumerated uncertainty pairs as an (k, 2) array."""
    if mode == "corners":
        return np.array([[us.a_m_hi, us.a_h_hi]])
    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}; expected 'full' or 'corners'")
    am, ah = np.meshgrid(_axis(us.a_m_lo, us.a_m_hi, us.n_am),
                         _axis(us.a_h_lo, us.a_h_hi, us.n_ah), indexing="ij")
    return np.column_stack([am.ravel(), ah.ravel()])


def enumerate_uncertainties(us: UncertaintySet, mode="full"):
    return [AggregateRates(float(a), float(b)) for a, b in uncertainty_points(us, mode)]


@dataclass
class ValueGrid:
    values: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("value grid must be 2-D")
        if v.dtype != bool:
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("value grid entries must be 0 or 1")
            v = v.astype(bool)
        self.values = v

    @classmethod
    def ones(cls, sg: StateGrid, time_index=0):
        return cls(np.ones(sg.shape, dtype=bool), time_index)


def _axis_cells(x, n):
    """Lower/upper node indices for fractional index ``x`` in [0, n-1]."""
    x = np.clip(x, 0.0, n - 1)
    r = np.rint(x)
    snapped = np.abs(x - r) <= SNAP_TOL
    lo = np.where(snapped, r, np.floor(x)).astype(np.intp)
    hi = np.where(snapped, r, lo + 1).astype(np.intp)
    return lo, np.minimum(hi, n - 1)


def locate_cells(m, h, sg: StateGrid):
    """Enclosing-cell corner indices for arrays of points.

    Returns ``(i_lo, i_hi, j_lo, j_hi, inside)``; the indices are only
    meaningful where ``inside`` is True.
    """
    m = np.asarray(m, dtype=float)
    h = np.asarray(h, dtype=float)
    inside = ((m >= -M_BOUND_TOL) & (m <= sg.m_max + M_BOUND_TOL)
              & (h >= -H_BOUND_TOL) & (h <= sg.h_cap + H_BOUND_TOL)
              & np.isfinite(m) & np.isfinite(h))
    xm = np.where(inside, m, 0.0) / sg.m_max * (sg.n_m - 1)
    xh = np.where(inside, h, 0.0) / sg.h_cap * (sg.n_h - 1)
    i_lo, i_hi = _axis_cells(xm, sg.n_m)
    j_lo, j_hi = _axis_cells(xh, sg.n_h)
    return i_lo, i_hi, j_lo, j_hi, inside


def membership_from_cells(values, cells):
    i_lo, i_hi, j_lo, j_hi, inside = cells
    return (inside & values[i_lo, j_lo] & values[i_hi, j_lo]
            & values[i_lo, j_hi] & values[i_hi, j_hi])


def conservative_membership_batch(m, h, values, sg: StateGrid):
    values = np.asarray(values, dtype=bool)
    if values.shape != sg.shape:
        raise ValueError(f"value grid shape {values.shape} != state grid {sg.shape}")
    return membership_from_cells(values, locate_cells(m, h, sg))


def conservative_membership(point, vg: ValueGrid, sg: StateGrid) -> int:
    """1 iff every grid node around ``point`` is viable in ``vg``."""
    m, h = point
    return int(conservative_membership_batch(float(m), float(h), vg.values, sg))


def write_value_grid_csv(path, vg: ValueGrid, sg: StateGrid, column="value"):
    """Write ``m,h,<column>`` rows; H index is the outer loop, M the inner."""
    mn, hn = sg.m_nodes, sg.h_nodes
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["m", "h", column])
        for j in range(sg.n_h):
            for i in range(sg.n_m):
                w.writerow([f"{mn[i]:.17g}", f"{hn[j]:.17g}", int(vg.values[i, j])])


def read_value_grid_csv(path, sg: StateGrid, time_index=0) -> ValueGrid:
    values = np.zeros(sg.shape, dtype=bool)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    body = rows[1:]
    if len(body) != sg.n_m * sg.n_h:
        raise ValueError(f"{path}: expected {sg.n_m * sg.n_h} rows, found {len(body)}")
    for k, row in enumerate(body):
        j, i = divmod(k, sg.n_m)
        values[i, j] = int(row[2]) == 1
    return ValueGrid(values, time_index)
