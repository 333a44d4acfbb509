"""Calibration of the uncontrolled model against daily prevalence data.

Daily incidence is turned into prevalence with a sliding infectious window,
then (alpha, p_m, p_h, xi, delta) are fitted by bounded nonlinear least
squares with the human recovery rate held fixed. Only the aggregates
``alpha*p_m`` and ``alpha*p_h*xi`` (with ``delta``) are identifiable.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .dynamics import (DEFAULT_SUBSTEPS, GAMMA, AggregateRates, ModelParams, REFERENCE_INITIAL,
                       aggregate)
from .grid import UncertaintySet

PARAM_NAMES = ("alpha", "p_m", "p_h", "xi", "delta")
PARAM_LOWER = np.array([0.0, 0.0, 0.0, 1.0, 0.033])
PARAM_UPPER = np.array([5.0, 1.0, 1.0, 5.0, 0.066])


class FitError(RuntimeError):
    pass


class CsvFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass
class IncidenceSeries:
    days: np.ndarray
    new_cases: np.ndarray
    population: float

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=int)
        self.new_cases = np.asarray(self.new_cases, dtype=float)
        if self.days.size == 0:
            raise ValueError("empty incidence series")
        if self.days.shape != self.new_cases.shape:
            raise ValueError("days and new_cases differ in length")
        if np.any(np.diff(self.days) != 1):
            raise ValueError("incidence days must be contiguous and increasing")
        if np.any(self.new_cases < 0):
            raise ValueError("case counts must be nonnegative")
        if not self.population > 0:
            raise ValueError(f"population must be positive, got {self.population}")


@dataclass
class PrevalenceSeries:
    days: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.days.shape != self.values.shape:
            raise ValueError("days and values differ in length")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("prevalence must lie in [0, 1]")

    def __len__(self):
        return len(self.days)


def incidence_to_prevalence(inc: IncidenceSeries, infectious_days=10) -> PrevalenceSeries:
    """Count of cases reported within the last ``infectious_days`` days, per capita."""
    if infectious_days < 1:
        raise ValueError("infectious_days must be >= 1")
    counts = np.convolve(inc.new_cases, np.ones(infectious_days))[: len(inc.new_cases)]
    prev = counts / inc.population
    if np.any(prev > 1):
        warnings.warn("prevalence exceeded 1 and was capped", RuntimeWarning, stacklevel=2)
        prev = np.minimum(prev, 1.0)
    return PrevalenceSeries(inc.days.copy(), prev)


def _simulate_h(theta, h0, days, substeps, m0_ratio, gamma):
    # scalar RK4 in plain floats; same scheme as dynamics.integrate_day
    alpha, p_m, p_h, xi, delta = (float(x) for x in theta)
    a_m, a_h = alpha * p_m, alpha * p_h * xi
    m, h = m0_ratio * h0, h0
    dt = 1.0 / substeps
    out = np.empty(days + 1)
    out[0] = h
    for r in range(days):
        for _ in range(substeps):
            k1m, k1h = a_m * h * (1 - m) - delta * m, a_h * m * (1 - h) - gamma * h
            m2, h2 = m + 0.5 * dt * k1m, h + 0.5 * dt * k1h
            k2m, k2h = a_m * h2 * (1 - m2) - delta * m2, a_h * m2 * (1 - h2) - gamma * h2
            m3, h3 = m + 0.5 * dt * k2m, h + 0.5 * dt * k2h
            k3m, k3h = a_m * h3 * (1 - m3) - delta * m3, a_h * m3 * (1 - h3) - gamma * h3
            m4, h4 = m + dt * k3m, h + dt * k3h
            k4m, k4h = a_m * h4 * (1 - m4) - delta * m4, a_h * m4 * (1 - h4) - gamma * h4
            m = m + dt / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
            h = h + dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
        if not (np.isfinite(m) and np.isfinite(h)):
            raise FitError(f"non-finite state on day {r + 1} for theta={list(theta)}")
        out[r + 1] = h
    return out


def simulate_prevalence(theta: ModelParams, h0, days, substeps=DEFAULT_SUBSTEPS, m0_ratio=3.0,
                        r0=0) -> PrevalenceSeries:
    """Infected-human share at days r0..r0+days, starting from m = m0_ratio*h0."""
    if not 0 <= h0 <= 1 or not 0 <= m0_ratio * h0 <= 1:
        raise ValueError(f"initial state (m0={m0_ratio * h0}, h0={h0}) outside [0, 1]^2")
    h = _simulate_h(theta.as_vector(), float(h0), int(days), substeps, m0_ratio, theta.gamma)
    return PrevalenceSeries(np.arange(r0, r0 + days + 1), np.clip(h, 0.0, 1.0))


def _sensitivities(theta, h0, days, substeps, m0_ratio, gamma):
    """d h(r) / d theta from the forward sensitivity equations (RK4)."""
    alpha, p_m, p_h, xi, delta = theta
    a_m, a_h = alpha * p_m, alpha * p_h * xi

    def f(y):
        m, h, smam, smah, smd, sham, shah, shd = y
        # rows of the state Jacobian
        jmm, jmh = -a_m * h - delta, a_m * (1 - m)
        jhm, jhh = a_h * (1 - h), -a_h * m - gamma
        return (a_m * h * (1 - m) - delta * m,
                a_h * m * (1 - h) - gamma * h,
                jmm * smam + jmh * sham + h * (1 - m),
                jmm * smah + jmh * shah,
                jmm * smd + jmh * shd - m,
                jhm * smam + jhh * sham,
                jhm * smah + jhh * shah + m * (1 - h),
                jhm * smd + jhh * shd)

    def axpy(y, k, c):
        return tuple(a + c * b for a, b in zip(y, k))

    y = (m0_ratio * h0, h0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    dt = 1.0 / substeps
    sens = np.zeros((days + 1, 3))
    for r in range(days):
        for _ in range(substeps):
            k1 = f(y)
            k2 = f(axpy(y, k1, 0.5 * dt))
            k3 = f(axpy(y, k2, 0.5 * dt))
            k4 = f(axpy(y, k3, dt))
            y = tuple(v + dt / 6.0 * (a + 2 * b + 2 * c + d)
                      for v, a, b, c, d in zip(y, k1, k2, k3, k4))
        sens[r + 1] = y[5:8]
    # chain rule from (a_m, a_h, delta) to (alpha, p_m, p_h, xi, delta)
    chain = np.array([[p_m, p_h * xi, 0.0],
                      [alpha, 0.0, 0.0],
                      [0.0, alpha * xi, 0.0],
                      [0.0, alpha * p_h, 0.0],
                      [0.0, 0.0, 1.0]])
    return sens @ chain.T


@dataclass
class FitProblem:
    data: PrevalenceSeries
    theta0: ModelParams = REFERENCE_INITIAL
    lower: np.ndarray = field(default_factory=lambda: PARAM_LOWER.copy())
    upper: np.ndarray = field(default_factory=lambda: PARAM_UPPER.copy())
    m0_ratio: float = 3.0
    gamma: float = GAMMA
    substeps: int = DEFAULT_SUBSTEPS
    xtol: float = 1e-10
    ftol: float = 1e-12
    max_iter: int = 500

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if len(self.data) < 2:
            raise ValueError("need at least two observations")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        x0 = self.theta0.as_vector()
        if np.any(x0 < self.lower) or np.any(x0 > self.upper):
            raise ValueError(f"theta0 {x0} outside the admissible box")

    @property
    def h0(self):
        return float(self.data.values[0])

    @property
    def days(self):
        return len(self.data) - 1

    def residuals(self, theta):
        theta = np.asarray(theta, dtype=float)
        return _simulate_h(theta, self.h0, self.days, self.substeps, self.m0_ratio,
                           self.gamma) - self.data.values

    def jacobian(self, theta):
        return _sensitivities(np.asarray(theta, dtype=float), self.h0, self.days,
                              self.substeps, self.m0_ratio, self.gamma)

    def objective(self, theta):
        r = self.residuals(theta)
        return float(r @ r)


@dataclass
class FitResult:
    theta_hat: ModelParams
    objective: float
    objective0: float
    trace: list
    aggregates: AggregateRates
    nfev: int = 0
    method: str = "trf"
    message: str = ""
    start: ModelParams | None = None

    def report(self):
        return {
            "theta_hat": dict(zip(PARAM_NAMES, self.theta_hat.as_vector().tolist())),
            "gamma": self.theta_hat.gamma,
            "aggregates": {"a_m": self.aggregates.a_m, "a_h": self.aggregates.a_h},
            "objective": self.objective,
            "objective_at_start": self.objective0,
            "iterations": len(self.trace),
            "evaluations": self.nfev,
            "method": self.method,
            "message": self.message,
            "start": dict(zip(PARAM_NAMES, self.start.as_vector().tolist())) if self.start else None,
        }


def fit(problem: FitProblem) -> FitResult:
    """Bounded least-squares fit of the parameter vector.

    Trust-region reflective is tried first; if it fails to terminate
    successfully, Levenberg-Marquardt runs on the box-clipped residual and
    the best admissible point of either run is kept. ``trace`` lists the
    evaluated points that improved the objective, in order.
    """
    lo, hi = problem.lower, problem.upper
    x0 = problem.theta0.as_vector()
    f0 = problem.objective(x0)
    if not np.isfinite(f0):
        raise FitError("objective is not finite at theta0")
    trace = [(x0.copy(), f0)]
    best = [x0.copy(), f0]
    nfev = [0]

    def resid(x):
        x = np.clip(x, lo, hi)
        r = problem.residuals(x)
        c = float(r @ r)
        nfev[0] += 1
        if not np.isfinite(c):
            raise FitError(f"non-finite objective at {x}")
        if c < best[1]:
            best[0], best[1] = x.copy(), c
            trace.append((x.copy(), c))
        return r

    def jac(x):
        return problem.jacobian(np.clip(x, lo, hi))

    method, message = "trf", "already optimal"
    if f0 > 0.0:
        res = least_squares(resid, x0, jac=jac, bounds=(lo, hi), method="trf",
                            xtol=problem.xtol, ftol=problem.ftol, gtol=1e-15,
                            x_scale="jac", max_nfev=problem.max_iter)
        message = res.message
        if res.status <= 0:
            method = "trf+lm"
            x1 = np.clip(res.x, lo, hi)
            res_lm = least_squares(resid, x1, jac=jac, method="lm", xtol=problem.xtol,
                                   ftol=problem.ftol, x_scale="jac", max_nfev=problem.max_iter)
            message += "; lm: " + res_lm.message
    theta_hat = ModelParams.from_vector(best[0], problem.gamma)
    return FitResult(theta_hat, best[1], f0, trace, aggregate(theta_hat), nfev[0], method,
                     message, problem.theta0)


def multistart_starts(problem: FitProblem, n_starts, seed):
    rng = np.random.default_rng(seed)
    starts = [problem.theta0]
    for _ in range(max(n_starts - 1, 0)):
        starts.append(ModelParams.from_vector(rng.uniform(problem.lower, problem.upper), problem.gamma))
    return starts


def fit_multistart(problem: FitProblem, n_starts=8, seed=0, threads=1) -> FitResult:
    """Best of several fits from theta0 and uniform random admissible starts."""
    problems = [FitProblem(**{**problem.__dict__, "theta0": s})
                for s in multistart_starts(problem, n_starts, seed)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fit, problems))
    else:
        results = [fit(p) for p in problems]
    return min(results, key=lambda r: r.objective)


def aggregate_ranges(lower, upper, n_am=70, n_ah=70) -> UncertaintySet:
    """Rectangle of (a_m, a_h) reachable from the parameter box (interval products)."""
    alpha, p_m, p_h, xi, _ = np.asarray(lower, dtype=float)
    alpha_u, p_m_u, p_h_u, xi_u, _ = np.asarray(upper, dtype=float)
    return UncertaintySet(alpha * p_m, alpha_u * p_m_u, alpha * p_h * xi,
                          alpha_u * p_h_u * xi_u, n_am, n_ah)


def synthetic_incidence(theta: ModelParams, h0, days, population, infectious_days=10,
                        substeps=DEFAULT_SUBSTEPS, m0_ratio=3.0, seed=None, noise=0.0):
    """Integer daily case counts whose windowed prevalence follows the model.

    The model curve is turned into cumulative counts by inverting the
    sliding-window sum; with ``noise > 0`` a multiplicative lognormal
    perturbation (seeded) is applied to the daily counts.
    """
    prev = simulate_prevalence(theta, h0, days, substeps, m0_ratio).values * population
    cum = np.zeros(days + 1)
    for r in range(days + 1):
        cum[r] = prev[r] + (cum[r - infectious_days] if r >= infectious_days else 0.0)
    cases = np.diff(np.rint(cum), prepend=0.0)
    if noise > 0:
        rng = np.random.default_rng(seed)
        cases = np.rint(cases * rng.lognormal(0.0, noise, cases.shape))
    if np.any(cases < 0):
        warnings.warn("negative synthetic counts clipped to zero", RuntimeWarning, stacklevel=2)
        cases = np.maximum(cases, 0.0)
    return IncidenceSeries(np.arange(days + 1), cases.astype(int), population)


def read_incidence_csv(path, population) -> IncidenceSeries:
    """Parse ``day,new_cases`` rows; bad rows raise :class:`CsvFormatError`."""
    days, cases = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["day", "new_cases"]:
            raise CsvFormatError(path, 1, "expected header 'day,new_cases'")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CsvFormatError(path, line, f"expected 2 fields, got {len(row)}")
            try:
                d, c = int(row[0]), int(row[1])
            except ValueError:
                raise CsvFormatError(path, line, f"non-integer field in {row}") from None
            if c < 0:
                raise CsvFormatError(path, line, f"negative case count {c}")
            if days and d != days[-1] + 1:
                raise CsvFormatError(path, line, f"day {d} does not follow day {days[-1]}")
            days.append(d)
            cases.append(c)
    if not days:
        raise CsvFormatError(path, 2, "no data rows")
    return IncidenceSeries(np.array(days), np.array(cases), population)


def write_incidence_csv(path, inc: IncidenceSeries):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["day", "new_cases"])
        for d, c in zip(inc.days, inc.new_cases):
            w.writerow([int(d), int(c)])
