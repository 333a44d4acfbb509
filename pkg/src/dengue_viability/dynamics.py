"""Controlled Ross-Macdonald dynamics and its one-day flow map.

The state is the pair (m, h) of infected mosquito and infected human
proportions. Over one day the control ``u`` (mosquito mortality) and the
aggregate transmission rates ``(a_m, a_h)`` are held constant, and the flow
map ``phi`` returns the state at the end of that day.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 0.1
DEFAULT_SUBSTEPS = 100
CLAMP_TOL = 1e-12


class DomainError(ValueError):
    """Raised for negative or non-finite model inputs."""


class IntegrationError(ArithmeticError):
    """Raised when the fixed-step integrator produces an unusable value."""

    def __init__(self, message, substep=None, context=None):
        super().__init__(message)
        self.substep = substep
        self.context = dict(context or {})

    def __str__(self):
        msg = super().__str__()
        if self.substep is not None:
            msg += f" (substep {self.substep})"
        if self.context:
            msg += " [" + ", ".join(f"{k}={v}" for k, v in self.context.items()) + "]"
        return msg


def _check_nonneg(**values):
    for name, v in values.items():
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"{name} must be finite, got {v!r}")
        if np.any(arr < 0):
            raise DomainError(f"{name} must be nonnegative, got {v!r}")


def _check_unit(**values):
    _check_nonneg(**values)
    for name, v in values.items():
        if np.any(np.asarray(v, dtype=float) > 1):
            raise DomainError(f"{name} must lie in [0, 1], got {v!r}")


@dataclass(frozen=True)
class State:
    m: float
    h: float

    def __post_init__(self):
        _check_unit(m=self.m, h=self.h)

    def __iter__(self):
        yield self.m
        yield self.h


@dataclass(frozen=True)
class ModelParams:
    """Ross-Macdonald parameters (biting rate, infection probabilities,
    mosquitoes per human, natural mosquito mortality, human recovery)."""

    alpha: float
    p_m: float
    p_h: float
    xi: float
    delta: float
    gamma: float = GAMMA

    def __post_init__(self):
        _check_nonneg(alpha=self.alpha, xi=self.xi, delta=self.delta, gamma=self.gamma)
        _check_unit(p_m=self.p_m, p_h=self.p_h)

    def as_vector(self):
        """Fitted parameter vector, ordered (alpha, p_m, p_h, xi, delta)."""
        return np.array([self.alpha, self.p_m, self.p_h, self.xi, self.delta])

    @classmethod
    def from_vector(cls, theta, gamma=GAMMA):
        alpha, p_m, p_h, xi, delta = (float(x) for x in theta)
        return cls(alpha, p_m, p_h, xi, delta, gamma)


@dataclass(frozen=True)
class AggregateRates:
    a_m: float
    a_h: float

    def __post_init__(self):
        _check_nonneg(a_m=self.a_m, a_h=self.a_h)

    def __iter__(self):
        yield self.a_m
        yield self.a_h


# Reference calibration: fitted values and the optimizer start point.
REFERENCE_ESTIMATE = ModelParams(alpha=0.36, p_m=0.2128, p_h=0.1990, xi=1.0087, delta=0.0333)
REFERENCE_INITIAL = ModelParams(alpha=1.0, p_m=0.5, p_h=0.5, xi=1.0, delta=0.035)


def aggregate(params: ModelParams) -> AggregateRates:
    """Collapse the parameters into the two rates that drive the dynamics."""
    return AggregateRates(a_m=params.alpha * params.p_m, a_h=params.alpha * params.p_h * params.xi)


def _field(m, h, u, a_m, a_h, gamma):
    return a_m * h * (1.0 - m) - u * m, a_h * m * (1.0 - h) - gamma * h


def rhs(state, u, rates, gamma=GAMMA):
    """Vector field (dm/ds, dh/ds) of the controlled model."""
    m, h = state
    a_m, a_h = rates
    _check_unit(m=m, h=h)
    _check_nonneg(u=u, a_m=a_m, a_h=a_h, gamma=gamma)
    dm, dh = _field(float(m), float(h), float(u), float(a_m), float(a_h), float(gamma))
    return dm, dh


def integrate_day(m, h, u, a_m, a_h, gamma=GAMMA, substeps=DEFAULT_SUBSTEPS):
    """Classical RK4 over one unit of time, vectorized by broadcasting.

    No validation and no clamping; returns the raw end point arrays.
    """
    if int(substeps) < 1:
        raise DomainError(f"substeps must be >= 1, got {substeps}")
    substeps = int(substeps)
    dt = 1.0 / substeps
    m = np.asarray(m, dtype=float)
    h = np.asarray(h, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_loop(m, h, u, a_m, a_h, gamma, substeps, dt)


def _rk4_loop(m, h, u, a_m, a_h, gamma, substeps, dt):
    for k in range(substeps):
        k1m, k1h = _field(m, h, u, a_m, a_h, gamma)
        k2m, k2h = _field(m + 0.5 * dt * k1m, h + 0.5 * dt * k1h, u, a_m, a_h, gamma)
        k3m, k3h = _field(m + 0.5 * dt * k2m, h + 0.5 * dt * k2h, u, a_m, a_h, gamma)
        k4m, k4h = _field(m + dt * k3m, h + dt * k3h, u, a_m, a_h, gamma)
        m = m + dt / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        h = h + dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(h))):
            raise IntegrationError("non-finite state during integration", substep=k + 1)
    return m, h


def _enforce_box(m, h):
    for name, x in (("m", m), ("h", h)):
        if np.any(x < -CLAMP_TOL) or np.any(x > 1.0 + CLAMP_TOL):
            worst = float(np.max(np.maximum(-x, x - 1.0)))
            raise IntegrationError(f"{name} left [0, 1] by {worst:.3e}")
    return np.clip(m, 0.0, 1.0), np.clip(h, 0.0, 1.0)


def phi_batch(m, h, u, a_m, a_h, gamma=GAMMA, substeps=DEFAULT_SUBSTEPS):
    """Flow map on arrays of states/controls/rates (broadcast together).

    Drift outside [0, 1] up to ``CLAMP_TOL`` is clipped; larger drift raises
    :class:`IntegrationError`.
    """
    _check_unit(m=m, h=h)
    _check_nonneg(u=u, a_m=a_m, a_h=a_h, gamma=gamma)
    m1, h1 = integrate_day(m, h, u, a_m, a_h, gamma, substeps)
    return _enforce_box(m1, h1)


def flow_map_phi(state, u, rates, gamma=GAMMA, substeps=DEFAULT_SUBSTEPS) -> State:
    """State after one day with constant control and transmission rates."""
    m, h = state
    a_m, a_h = rates
    m1, h1 = phi_batch(float(m), float(h), float(u), float(a_m), float(a_h), float(gamma), substeps)
    return State(float(m1), float(h1))
