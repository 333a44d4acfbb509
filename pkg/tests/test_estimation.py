from pathlib import Path

import numpy as np
import pytest

from dengue_viability.dynamics import REFERENCE_ESTIMATE, REFERENCE_INITIAL, ModelParams, aggregate
from dengue_viability.estimation import (PARAM_LOWER, PARAM_UPPER, CsvFormatError, FitProblem,
                                         IncidenceSeries, PrevalenceSeries, aggregate_ranges, fit,
                                         fit_multistart, incidence_to_prevalence,
                                         read_incidence_csv, simulate_prevalence,
                                         synthetic_incidence, write_incidence_csv)

DATA = Path(__file__).parent / "data" / "synthetic_incidence.csv"
POPULATION = 2_400_000


@pytest.fixture(scope="module")
def synthetic():
    return simulate_prevalence(REFERENCE_ESTIMATE, 2e-4, 60)


def test_single_case_window():
    inc = IncidenceSeries(np.arange(15), [1] + [0] * 14, 100)
    prev = incidence_to_prevalence(inc, 10)
    assert np.allclose(prev.values[:10], 0.01) and np.all(prev.values[10:] == 0)


def test_zero_and_constant_incidence():
    assert np.all(incidence_to_prevalence(IncidenceSeries(np.arange(5), np.zeros(5), 10)).values == 0)
    prev = incidence_to_prevalence(IncidenceSeries(np.arange(40), np.full(40, 3), 1000), 10)
    assert np.allclose(prev.values[9:], 30 / 1000)
    assert prev.values[0] == pytest.approx(3 / 1000)


def test_incidence_validation():
    with pytest.raises(ValueError):
        IncidenceSeries([], [], 10)
    with pytest.raises(ValueError):
        IncidenceSeries([0, 1], [1, 1], 0)
    with pytest.raises(ValueError):
        IncidenceSeries([0, 2], [1, 1], 10)
    with pytest.warns(RuntimeWarning):
        prev = incidence_to_prevalence(IncidenceSeries([0, 1], [8, 8], 10))
    assert prev.values.max() == 1.0


def test_simulate_zero_initial_state():
    assert np.all(simulate_prevalence(REFERENCE_ESTIMATE, 0.0, 30).values == 0)


def test_simulate_without_biting_is_pure_recovery():
    theta = ModelParams(0.0, 0.3, 0.3, 2.0, 0.04)
    prev = simulate_prevalence(theta, 0.01, 40)
    assert np.allclose(prev.values, 0.01 * np.exp(-0.1 * np.arange(41)), atol=1e-12, rtol=0)


def test_fitted_curve_rises(synthetic):
    assert len(synthetic) == 61
    assert np.all(np.diff(synthetic.values) > 0)
    assert synthetic.values[-1] > 3 * synthetic.values[0]


def test_identifiability_of_aggregates():
    a = ModelParams(0.36, 0.2128, 0.199, 1.0087, 0.0333)
    agg = aggregate(a)
    b = ModelParams(0.72, agg.a_m / 0.72, 0.25, agg.a_h / (0.72 * 0.25), 0.0333)
    assert np.allclose(simulate_prevalence(a, 1e-3, 60).values,
                       simulate_prevalence(b, 1e-3, 60).values, atol=1e-15, rtol=1e-12)


def test_fit_from_optimum_stays(synthetic):
    res = fit(FitProblem(synthetic, REFERENCE_ESTIMATE))
    assert res.objective <= 1e-10
    assert np.allclose(res.theta_hat.as_vector(), REFERENCE_ESTIMATE.as_vector(), atol=1e-6, rtol=0)


def test_fit_recovers_aggregates(synthetic):
    problem = FitProblem(synthetic, REFERENCE_INITIAL)
    res = fit(problem)
    assert res.aggregates.a_m == pytest.approx(0.076608, rel=0.02)
    assert res.aggregates.a_h == pytest.approx(0.0722633, rel=0.02)
    assert res.objective <= res.objective0
    x = res.theta_hat.as_vector()
    assert np.all(x >= PARAM_LOWER) and np.all(x <= PARAM_UPPER)
    # residual identity against an independent re-simulation
    again = simulate_prevalence(res.theta_hat, synthetic.values[0], 60).values - synthetic.values
    assert abs(float(again @ again) - res.objective) <= 1e-12
    costs = [c for _, c in res.trace]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    report = res.report()
    assert set(report["theta_hat"]) == {"alpha", "p_m", "p_h", "xi", "delta"}


def test_degenerate_zero_data():
    data = PrevalenceSeries(np.arange(20), np.zeros(20))
    res = fit(FitProblem(data, REFERENCE_INITIAL))
    assert res.objective == 0.0
    assert res.theta_hat == REFERENCE_INITIAL


def test_sensitivity_jacobian_matches_central_differences(synthetic, rng):
    problem = FitProblem(synthetic)
    for _ in range(5):
        theta = rng.uniform(PARAM_LOWER, PARAM_UPPER)
        theta[3] = max(theta[3], 1.0)
        jac = problem.jacobian(theta)
        fd = np.empty_like(jac)
        for k in range(5):
            step = 1e-6 * max(1.0, abs(theta[k]))
            e = np.zeros(5)
            e[k] = step
            fd[:, k] = (problem.residuals(theta + e) - problem.residuals(theta - e)) / (2 * step)
        scale = np.abs(fd).max(axis=0)
        scale[scale == 0] = 1.0
        assert np.all(np.abs(jac - fd).max(axis=0) <= 1e-4 * scale)


def test_problem_validation(synthetic):
    with pytest.raises(ValueError):
        FitProblem(PrevalenceSeries([0], [0.1]))
    with pytest.raises(ValueError):
        FitProblem(synthetic, ModelParams(6.0, 0.5, 0.5, 1.0, 0.04))


def test_aggregate_ranges():
    base = aggregate_ranges(PARAM_LOWER, PARAM_UPPER)
    assert base.bounds == (0.0, 5.0, 0.0, 25.0)
    doubled = PARAM_UPPER.copy()
    doubled[0] *= 2  # doubling alpha doubles both right ends
    assert aggregate_ranges(PARAM_LOWER, doubled).bounds == (0.0, 10.0, 0.0, 50.0)
    point = REFERENCE_ESTIMATE.as_vector()
    agg = aggregate(REFERENCE_ESTIMATE)
    assert aggregate_ranges(point, point).bounds == (agg.a_m, agg.a_m, agg.a_h, agg.a_h)


def test_synthetic_incidence_reproduces_model_prevalence():
    inc = synthetic_incidence(REFERENCE_ESTIMATE, 2e-4, 60, POPULATION)
    prev = incidence_to_prevalence(inc, 10)
    model = simulate_prevalence(REFERENCE_ESTIMATE, 2e-4, 60)
    assert np.all(inc.new_cases >= 0)
    assert np.max(np.abs(prev.values - model.values)) <= 1.0 / POPULATION


def test_frozen_csv_matches_generator(tmp_path):
    inc = synthetic_incidence(REFERENCE_ESTIMATE, 2e-4, 60, POPULATION)
    write_incidence_csv(tmp_path / "s.csv", inc)
    assert (tmp_path / "s.csv").read_text() == DATA.read_text()
    back = read_incidence_csv(DATA, POPULATION)
    assert np.array_equal(back.new_cases, inc.new_cases)


@pytest.mark.parametrize("body, line", [
    ("day,new_cases\n0,3\n1,-2\n", 3),
    ("day,new_cases\n0,3\n1,x\n", 3),
    ("day,new_cases\n0,3,4\n", 2),
    ("day,new_cases\n0,3\n5,1\n", 3),
    ("date,cases\n0,3\n", 1),
])
def test_csv_errors_carry_line_numbers(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(CsvFormatError) as info:
        read_incidence_csv(path, 100)
    assert info.value.line == line


def test_multistart_keeps_best(synthetic):
    problem = FitProblem(synthetic, REFERENCE_INITIAL)
    res = fit_multistart(problem, n_starts=2, seed=3)
    assert res.objective <= fit(problem).objective + 1e-30
