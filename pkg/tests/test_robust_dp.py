import numpy as np
import pytest

from conftest import random_config, toy_problem
from dengue_viability.grid import (ControlGrid, UncertaintySet, conservative_membership_batch,
                                   make_state_grid, uncertainty_points)
from dengue_viability.robust_dp import (Horizon, Kernel, backward_sweep, compare_kernels,
                                        extract_kernel, is_lower_set, kernel_boundary,
                                        load_solution, save_solution, verify_corners_mode)
from oracles import game_tree_kernel


def test_horizon_validation():
    with pytest.raises(ValueError):
        Horizon(3, 3)
    assert Horizon(0, 1).steps == 1


def test_zero_transmission_one_day_keeps_whole_grid():
    sg = make_state_grid(12, 12, 1e-5)
    sol = backward_sweep(sg, ControlGrid(5, 0.0333, 0.05), UncertaintySet.singleton(0, 0),
                         Horizon(0, 1), "full")
    assert extract_kernel(sol).mask.all()
    assert np.all(sol.policy_at(0) == 0)  # least effort suffices everywhere


@pytest.mark.parametrize("mode", ["full", "corners"])
def test_matches_game_tree_oracle(mode):
    sg, cg, us, hz = toy_problem(n=8, n_u=3, lattice=2, steps=3)
    sol = backward_sweep(sg, cg, us, hz, mode, substeps=20)
    oracle = game_tree_kernel(sg, tuple(cg.levels), tuple(map(tuple, uncertainty_points(us, "full"))),
                              hz.steps, 20)
    assert 0 < oracle.sum() < oracle.size
    assert np.array_equal(extract_kernel(sol).mask, oracle)


@pytest.mark.parametrize("seed", range(3))
def test_random_instances_match_oracle(seed):
    cfg = random_config(np.random.default_rng(100 + seed))
    sg = make_state_grid(6, 6, cfg["sg"].h_cap)
    us = UncertaintySet(cfg["us"].a_m_lo, cfg["us"].a_m_hi, cfg["us"].a_h_lo, cfg["us"].a_h_hi, 2, 2)
    hz = Horizon(0, min(cfg["hz"].steps, 3))
    sol = backward_sweep(sg, cfg["cg"], us, hz, "full", substeps=20)
    oracle = game_tree_kernel(sg, tuple(cfg["cg"].levels), tuple(map(tuple, uncertainty_points(us))),
                              hz.steps, 20)
    assert np.array_equal(extract_kernel(sol).mask, oracle)


def test_origin_always_viable():
    sg = make_state_grid(10, 10, 1e-5)
    for us in (UncertaintySet.singleton(0.076608, 0.0722633), UncertaintySet(0, 10, 0, 50, 3, 3)):
        sol = backward_sweep(sg, ControlGrid(3, 0.0333, 0.05), us, Horizon(0, 7), "full")
        assert all(v.values[0, 0] for v in sol.value_stack)


def test_value_stack_structure(toy_solution):
    sol = toy_solution
    assert len(sol.value_stack) == sol.horizon.steps + 1
    assert sol.value_stack[-1].values.all()
    assert [v.time_index for v in sol.value_stack] == list(range(sol.horizon.t0, sol.horizon.t_final + 1))
    for a, b in zip(sol.value_stack, sol.value_stack[1:]):
        assert np.all(a.values <= b.values)
    for t in range(sol.horizon.t0, sol.horizon.t_final):
        pol = sol.policy_at(t)
        assert np.array_equal(pol >= 0, sol.value_at(t).values)


def test_policy_is_least_effort(toy_solution):
    sol = toy_solution
    sg = sol.state_grid
    mm, hh = sg.mesh()
    pts = uncertainty_points(sol.uncertainty, sol.mode)
    t = sol.horizon.t0
    nxt = sol.value_at(t + 1).values
    from dengue_viability.dynamics import phi_batch
    for (i, j), c in np.ndenumerate(sol.policy_at(t)):
        if c <= 0:
            continue
        lower = sol.control_grid.levels[c - 1]
        m1, h1 = phi_batch(mm[i, j], hh[i, j], lower, pts[:, 0], pts[:, 1], substeps=sol.substeps)
        assert not conservative_membership_batch(m1, h1, nxt, sg).all()


@pytest.mark.parametrize("seed", range(5))
def test_monotonicity_properties(seed):
    cfg = random_config(np.random.default_rng(seed))
    sg, hz = cfg["sg"], cfg["hz"]
    base = backward_sweep(sg, cfg["cg"], cfg["us"], hz, "full", substeps=20)
    for a, b in zip(base.value_stack, base.value_stack[1:]):
        assert np.all(a.values <= b.values)
    assert all(is_lower_set(v.values) for v in base.value_stack)
    k = extract_kernel(base)
    wide_u = extract_kernel(backward_sweep(sg, cfg["cg"], cfg["us_wide"], hz, "full", substeps=20))
    assert compare_kernels(wide_u, k).relation in ("subset", "equal")
    wide_c = extract_kernel(backward_sweep(sg, cfg["cg_wide"], cfg["us"], hz, "full", substeps=20))
    assert compare_kernels(k, wide_c).relation in ("subset", "equal")


def test_cap_monotonicity():
    sg1, cg, us, hz = toy_problem(n=8, steps=4, cap=0.2)
    sg2 = make_state_grid(8, 15, 0.4)  # same H spacing, sg1 nodes are sg2 nodes
    k1 = extract_kernel(backward_sweep(sg1, cg, us, hz, "full", substeps=20))
    sol2 = backward_sweep(sg2, cg, us, hz, "full", substeps=20)
    mm, hh = sg1.mesh()
    hit = conservative_membership_batch(mm, hh, sol2.value_stack[0].values, sg2)
    assert np.all(hit[k1.mask])
    assert k1.mask.any()


def test_corners_mode_verified_on_toy():
    sg, cg, us, hz = toy_problem(n=10, n_u=5, lattice=4, steps=4)
    assert verify_corners_mode(sg, cg, us, hz, substeps=20)


def test_streaming_and_threads_are_bitwise_identical():
    sg, cg, us, hz = toy_problem(n=9, n_u=4, lattice=3, steps=3)
    a = backward_sweep(sg, cg, us, hz, "full", substeps=10)
    b = backward_sweep(sg, cg, us, hz, "full", substeps=10, max_table_entries=0)
    c = backward_sweep(sg, cg, us, hz, "full", substeps=10, threads=3)
    for x in (b, c):
        assert all(np.array_equal(p.values, q.values) for p, q in zip(a.value_stack, x.value_stack))
        assert np.array_equal(a.policy_stack, x.policy_stack)


def test_extract_kernel_trivial_grids():
    sg = make_state_grid(4, 4, 0.1)
    full = Kernel(np.ones(sg.shape, bool), sg)
    empty = Kernel(np.zeros(sg.shape, bool), sg)
    assert len(full.members) == 16 and len(empty.members) == 0


def test_kernel_boundary_cases(toy_solution):
    sg = make_state_grid(5, 5, 0.1)
    full = Kernel(np.ones(sg.shape, bool), sg)
    assert np.allclose(kernel_boundary(full)[:, 1], 0.1)
    row = np.zeros(sg.shape, bool)
    row[:, 0] = True
    b = kernel_boundary(Kernel(row, sg))
    assert np.all(b[:, 1] == 0) and np.all(np.diff(b[:, 0]) > 0)
    with pytest.raises(ValueError):
        kernel_boundary(Kernel(np.zeros(sg.shape, bool), sg))
    tb = kernel_boundary(extract_kernel(toy_solution))
    assert np.all(np.diff(tb[:, 1]) <= 0)


def test_compare_kernels():
    sg = make_state_grid(4, 4, 0.1)
    a = np.zeros(sg.shape, bool)
    a[0, :2] = True
    b = a.copy()
    b[1, 0] = True
    c = np.zeros(sg.shape, bool)
    c[3, 3] = True
    ka, kb, kc = (Kernel(x, sg) for x in (a, b, c))
    assert compare_kernels(ka, ka) == ("equal", 0)
    assert compare_kernels(ka, kb) == ("subset", 1)
    assert compare_kernels(kb, ka) == ("superset", 1)
    assert compare_kernels(ka, kc).relation == "incomparable"
    with pytest.raises(ValueError):
        compare_kernels(ka, Kernel(np.zeros((5, 5), bool), make_state_grid(5, 5, 0.1)))


def test_is_lower_set():
    m = np.zeros((4, 4), bool)
    m[:2, :3] = True
    assert is_lower_set(m)
    m[3, 3] = True
    assert not is_lower_set(m)


def test_solution_roundtrip(tmp_path, toy_solution):
    save_solution(tmp_path / "dp.npz", toy_solution)
    back = load_solution(tmp_path / "dp.npz")
    assert back.state_grid == toy_solution.state_grid
    assert back.uncertainty == toy_solution.uncertainty
    assert np.array_equal(back.policy_stack, toy_solution.policy_stack)
    assert all(np.array_equal(a.values, b.values)
               for a, b in zip(back.value_stack, toy_solution.value_stack))
