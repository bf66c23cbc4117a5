import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergimp.chain import StateGrid, build_custom_kernel
from ergimp.potentials import RewardSpec, delta_eff, resolvent
from ergimp.qvi_discounted import (
    CostSpec,
    apply_M,
    apply_M_truncated,
    constant_cost,
    qvi_residual,
    solve_discounted_qvi,
    solve_discounted_qvi_truncated,
    solve_optimal_stopping,
    verify_discounted_bounds,
)
from ergimp.chain import expected_hitting_time

from oracles import best_discounted, random_instance, stopping_bruteforce

TS1 = build_custom_kernel([[0.5, 0.5], [0.5, 0.5]], 1.0)
TS1_GRID = StateGrid(np.array([0.0, 1.0]), np.array([0]), 0)
ALPHA_09 = -math.log(0.9)


def test_cost_invariants():
    with pytest.raises(ValueError, match="c_max"):
        CostSpec(np.array([[0.1], [-0.2]]), np.array([0]), 0)
    # c(0,0) = -3 is worse than the detour 0 -> 1 -> 0 costing -0.2
    bad = np.array([[-3.0, -0.1], [-0.1, -0.1], [-0.1, -0.1]])
    with pytest.raises(ValueError, match="triangle"):
        CostSpec(bad, np.array([0, 1]), 0)


def test_apply_M_examples():
    grid = StateGrid(np.arange(3.0), np.array([0, 1]), 0)
    cost = CostSpec(np.array([[-0.3, -0.5], [-0.4, -0.2], [-0.6, -0.7]]), grid.u_indices, 0)
    Mv, arg = apply_M(cost, np.zeros(3))
    assert np.allclose(Mv, cost.c.max(axis=1))
    assert list(arg) == [0, 1, 0]
    cost1 = constant_cost(TS1_GRID, 0.2)
    Mv, _ = apply_M(cost1, np.array([3.0, 7.0]))
    assert np.allclose(Mv, [2.8, 2.8])


def test_apply_M_ties_lowest_index():
    grid = StateGrid(np.arange(2.0), np.array([0, 1]), 0)
    cost = constant_cost(grid, 0.5)
    _, arg = apply_M(cost, np.array([1.0, 1.0]))
    assert list(arg) == [0, 0]


def test_apply_M_separated(instances):
    inst = instances["ou_separated"]
    v = np.sin(inst.grid.points)
    Mv, arg = apply_M(inst.cost, v)
    best = np.max(inst.cost.e + v[inst.cost.u_indices])
    assert np.allclose(Mv, inst.cost.d + best, atol=1e-14)
    assert len(set(arg.tolist())) == 1


def test_apply_M_truncated():
    cost = constant_cost(TS1_GRID, 0.2)
    v = np.array([1.0, 2.0])
    assert np.allclose(apply_M_truncated(cost, v, 0.5), apply_M(cost, v)[0])
    assert np.allclose(apply_M_truncated(cost, v, 1e-3), v[0] - 1e-3)
    assert np.all(apply_M_truncated(cost, v, 0.05) >= apply_M_truncated(cost, v, 0.1))
    with pytest.raises(ValueError):
        apply_M_truncated(cost, v, 0.0)


def test_stopping_examples():
    run = np.array([1.0, 0.0])
    big = np.full(2, 100.0)
    u, stop = solve_optimal_stopping(TS1, run, big, ALPHA_09)
    assert np.allclose(u, big) and stop.all()
    u, stop = solve_optimal_stopping(TS1, run, np.full(2, -1e15), ALPHA_09)
    assert np.allclose(u, resolvent(TS1, run, ALPHA_09), atol=1e-10) and not stop.any()
    deff = delta_eff(ALPHA_09, 1.0)
    obstacle = np.full(2, 0.5 * deff)
    u, _ = solve_optimal_stopping(TS1, run, obstacle, ALPHA_09)
    assert np.allclose(u, stopping_bruteforce(TS1.rows, 1.0, run, obstacle, ALPHA_09), atol=1e-10)


@pytest.mark.parametrize("method", ["howard", "iterate"])
def test_stopping_matches_bruteforce(method):
    rng = np.random.default_rng(7)
    for _ in range(20):
        _, P, f, _ = random_instance(rng)
        obstacle = rng.uniform(-1, 6, P.n)
        a = float(rng.uniform(0.05, 1.0))
        u, _ = solve_optimal_stopping(P, f.values, obstacle, a, method=method)
        assert np.allclose(u, stopping_bruteforce(P.rows, P.dt, f.values, obstacle, a), atol=1e-9)


def test_discounted_constant_reward():
    grid = StateGrid(np.arange(3.0), np.array([1]), 1)
    P = build_custom_kernel([[0.2, 0.5, 0.3], [0.3, 0.3, 0.4], [0.1, 0.1, 0.8]], 0.5)
    sol = solve_discounted_qvi(P, RewardSpec([2.0] * 3), constant_cost(grid, 0.1), 0.3)
    assert np.allclose(sol.v, 2 / 0.3, rtol=1e-10)
    assert not sol.impulse_mask.any()


@pytest.mark.parametrize("method", ["howard", "operator"])
def test_discounted_ts1_oracle(method):
    f = RewardSpec([1.0, 0.0])
    cost = constant_cost(TS1_GRID, 0.2)
    sol = solve_discounted_qvi(TS1, f, cost, ALPHA_09, method=method)
    ref = best_discounted(TS1.rows, 1.0, f.values, cost.c, cost.u_indices, ALPHA_09)
    assert np.max(np.abs(sol.v - ref)) < 1e-8
    assert list(sol.impulse_mask) == [False, True]


def test_discounted_operator_iterates_nondecreasing():
    rng = np.random.default_rng(3)
    for _ in range(10):
        _, P, f, cost = random_instance(rng)
        sol = solve_discounted_qvi(P, f, cost, 0.2, method="operator")
        assert min(sol.increments) >= -1e-12


def test_discounted_random_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        _, P, f, cost = random_instance(rng)
        a = float(rng.uniform(0.02, 1.0))
        sol = solve_discounted_qvi(P, f, cost, a)
        ref = best_discounted(P.rows, P.dt, f.values, cost.c, cost.u_indices, a)
        assert np.max(np.abs(sol.v - ref)) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(-3, 3))
def test_discounted_properties(seed, alpha, k):
    _, P, f, cost = random_instance(np.random.default_rng(seed))
    sol = solve_discounted_qvi(P, f, cost, alpha)
    assert np.max(np.abs(sol.v)) <= f.sup_norm / alpha * (1 + 1e-10)
    assert np.all(sol.v >= sol.Mv - 1e-10)
    assert qvi_residual(P, f, cost, sol.v, alpha) < 1e-9
    shifted = solve_discounted_qvi(P, f.shifted(k), cost, alpha)
    assert np.max(np.abs(shifted.v - sol.v - k / alpha)) < 1e-10 * (1 + abs(k) / alpha)
    assert np.array_equal(shifted.impulse_mask, sol.impulse_mask)


def test_truncated_examples():
    f = RewardSpec([1.0, 0.0])
    cost = constant_cost(TS1_GRID, 0.2)
    base = solve_discounted_qvi(TS1, f, cost, ALPHA_09)
    same = solve_discounted_qvi_truncated(TS1, f, cost, ALPHA_09, 0.2)
    assert np.allclose(same.v, base.v, atol=1e-12)
    vals = [solve_discounted_qvi_truncated(TS1, f, cost, ALPHA_09, L).v for L in (0.05, 0.1, 0.2)]
    assert np.all(vals[0] >= vals[1] - 1e-12) and np.all(vals[1] >= vals[2] - 1e-12)
    assert np.all(vals[2] >= base.v - 1e-12)


def test_truncated_ou_agrees_for_large_L(instances):
    inst = instances["ou_default"]
    a = 0.2
    base = solve_discounted_qvi(inst.P, inst.f, inst.cost, a)
    L = 2 * float(np.max(-inst.cost.c))
    trunc = solve_discounted_qvi_truncated(inst.P, inst.f, inst.cost, a, L)
    n = inst.grid.n
    inner = slice(n // 4, 3 * n // 4)
    assert np.max(np.abs(trunc.v - base.v)[inner]) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_truncated_monotone_in_L(seed):
    _, P, f, cost = random_instance(np.random.default_rng(seed))
    base = solve_discounted_qvi(P, f, cost, 0.3).v
    prev = None
    for L in (0.05, 0.2, 0.8, 5.0):
        v = solve_discounted_qvi_truncated(P, f, cost, 0.3, L).v
        assert np.all(v >= base - 1e-10)
        if prev is not None:
            assert np.all(v <= prev + 1e-10)
        prev = v


def test_discounted_requires_positive_alpha():
    with pytest.raises(ValueError):
        solve_discounted_qvi(TS1, RewardSpec([1, 0]), constant_cost(TS1_GRID, 0.2), 0.0)


def test_bounds_ts1_and_constant():
    f = RewardSpec([1.0, 0.0])
    cost = constant_cost(TS1_GRID, 0.2)
    sol = solve_discounted_qvi(TS1, f, cost, ALPHA_09)
    rep = verify_discounted_bounds(sol, cost, TS1_GRID, TS1, f)
    assert rep.ok and np.isfinite(rep["eq10"].slack)
    flat = solve_discounted_qvi(TS1, RewardSpec([1.0, 1.0]), cost, ALPHA_09)
    assert np.allclose(flat.w, 0, atol=1e-10)
    assert verify_discounted_bounds(flat, cost, TS1_GRID, TS1, RewardSpec([1.0, 1.0])).ok


def test_bounds_ou(instances):
    inst = instances["ou_default"]
    t = expected_hitting_time(inst.P, inst.cost.u_indices)
    for a in (1.0, 0.05):
        sol = solve_discounted_qvi(inst.P, inst.f, inst.cost, a)
        rep = verify_discounted_bounds(sol, inst.cost, inst.grid, inst.P, inst.f, hitting=t)
        assert rep.ok, rep.lines()
        assert rep["eq13"].slack >= -1e-8


def test_bounds_detect_corruption():
    f = RewardSpec([1.0, 0.0])
    cost = constant_cost(TS1_GRID, 0.2)
    sol = solve_discounted_qvi(TS1, f, cost, ALPHA_09)
    sol.v = sol.v + np.array([0.0, -5.0])
    rep = verify_discounted_bounds(sol, cost, TS1_GRID, TS1, f)
    assert not rep.ok
