import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergimp.chain import build_custom_kernel, stationary_distribution
from ergimp.errors import SingularSystemError
from ergimp.potentials import (
    RewardSpec,
    check_dynkin,
    default_alpha_schedule,
    delta_eff,
    mean_under_mu,
    potential_table,
    q_alpha,
    q_negative_part_sup,
    resolvent,
)

from oracles import random_kernel

TS1 = build_custom_kernel([[0.5, 0.5], [0.5, 0.5]], 1.0)
ALPHA_09 = -math.log(0.9)


def test_mean_under_mu_examples():
    assert mean_under_mu([0.5, 0.5], RewardSpec([1, 0])) == 0.5
    assert mean_under_mu([0.2, 0.8], RewardSpec([3, 3])) == pytest.approx(3)
    P = build_custom_kernel([[0.9, 0.1], [0.2, 0.8]], 1.0)
    assert mean_under_mu(stationary_distribution(P), RewardSpec([1, 0])) == pytest.approx(2 / 3, abs=1e-13)


def test_resolvent_ts1():
    r = resolvent(TS1, RewardSpec([1.0, 0.0]), ALPHA_09)
    deff = 0.1 / ALPHA_09
    # symmetric kernel: r0 - r1 = deff and r0 + r1 = deff / (1 - 0.9)
    s = deff / 0.1
    assert np.allclose(r, [(s + deff) / 2, (s - deff) / 2], atol=1e-12)
    assert np.allclose(r, [5.2202, 4.2710], atol=1e-4)


def test_resolvent_constant():
    assert np.allclose(resolvent(TS1, RewardSpec([2.0, 2.0]), 0.3), 2 / 0.3, rtol=1e-13)


def test_resolvent_rejects_zero_alpha():
    with pytest.raises(ValueError):
        resolvent(TS1, RewardSpec([1.0, 0.0]), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1), st.floats(1e-3, 5.0))
def test_resolvent_bound_and_equation(n, seed, alpha):
    rng = np.random.default_rng(seed)
    P = build_custom_kernel(random_kernel(rng, n), float(rng.uniform(0.05, 1.0)))
    f = RewardSpec(rng.normal(size=n))
    r = resolvent(P, f, alpha)
    assert np.max(np.abs(r)) <= f.sup_norm / alpha * (1 + 1e-12)
    res = r - (f.values * delta_eff(alpha, P.dt) + math.exp(-alpha * P.dt) * P.rows @ r)
    assert np.max(np.abs(res)) < 1e-12 * max(1.0, np.max(np.abs(r)))


def test_q_ts1():
    mu = np.array([0.5, 0.5])
    assert np.allclose(q_alpha(TS1, RewardSpec([1, 0]), mu, 0.0), [0.5, -0.5], atol=1e-14)
    for a in (1.0, 0.1, 0.01):
        assert np.allclose(q_alpha(TS1, RewardSpec([1, 0]), mu, a), delta_eff(a, 1.0) * np.array([0.5, -0.5]))


def test_q_constant_reward_vanishes():
    mu = np.array([0.5, 0.5])
    for a in (0.0, 0.5):
        assert np.allclose(q_alpha(TS1, RewardSpec([4, 4]), mu, a), 0, atol=1e-14)


def test_q_ill_conditioned_poisson():
    P = build_custom_kernel([[1 - 1e-14, 1e-14], [1e-14, 1 - 1e-14]], 1.0)
    with pytest.raises(SingularSystemError):
        q_alpha(P, RewardSpec([1, 0]), np.array([0.5, 0.5]), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_q_centred_and_poisson(n, seed):
    rng = np.random.default_rng(seed)
    P = build_custom_kernel(random_kernel(rng, n), 0.2)
    mu = stationary_distribution(P)
    f = RewardSpec(rng.normal(size=n))
    table = potential_table(P, f, mu, [1.0, 0.1, 0.0])
    for q in table.q_alpha.values():
        assert abs(mu @ q) < 1e-10
    q = table.q
    assert np.max(np.abs(q - ((f.values - table.mu_f) * P.dt + P.rows @ q))) < 1e-10


def test_q_alpha_converges_linearly_on_default_schedule(instances):
    for name in ("ts1", "ou_default"):
        inst = instances[name]
        mu = stationary_distribution(inst.P)
        alphas = default_alpha_schedule(inst.P.dt)
        table = potential_table(inst.P, inst.f, mu, alphas)
        err = np.array([np.max(np.abs(table.q_alpha[a] - table.q)) for a in alphas])
        assert np.all(np.diff(err) <= 1e-15)
        # O(alpha) decay: halving alpha roughly halves the gap
        assert np.all(err[-4:] / np.asarray(alphas[-4:]) < 2 * err[-1] / alphas[-1])


def test_q_alpha_small_alpha_limit(instances):
    for name in ("ts1", "ou_default"):
        inst = instances[name]
        mu = stationary_distribution(inst.P)
        alphas = default_alpha_schedule(inst.P.dt, n_terms=30)
        table = potential_table(inst.P, inst.f, mu, alphas)
        assert np.max(np.abs(table.q_alpha[alphas[-1]] - table.q)) < 1e-6


def test_dynkin():
    mu = np.array([0.5, 0.5])
    f = RewardSpec([1, 0])
    q = q_alpha(TS1, f, mu, 0.0)
    assert check_dynkin(q, TS1, f, 0.5, 0) == 0.0
    assert check_dynkin(q, TS1, f, 0.5, 3) < 1e-12


def test_dynkin_ou(instances):
    inst = instances["ou_default"]
    mu = stationary_distribution(inst.P)
    mu_f = mean_under_mu(mu, inst.f)
    q = q_alpha(inst.P, inst.f, mu, 0.0)
    for k in (1, 50, 100):
        assert check_dynkin(q, inst.P, inst.f, mu_f, k) < 1e-9


def test_q_negative_part():
    mu = np.array([0.5, 0.5])
    assert q_negative_part_sup(potential_table(TS1, RewardSpec([2, 2]), mu, [0.1])) == 0.0
    assert q_negative_part_sup(potential_table(TS1, RewardSpec([1, 0]), mu, [0.5, 0.01])) == pytest.approx(0.5)


def test_q_negative_part_stable_on_ou(instances):
    inst = instances["ou_default"]
    mu = stationary_distribution(inst.P)
    coarse = q_negative_part_sup(potential_table(inst.P, inst.f, mu, default_alpha_schedule(0.1, 6)))
    fine = q_negative_part_sup(potential_table(inst.P, inst.f, mu, default_alpha_schedule(0.1, 14)))
    assert np.isfinite(fine) and abs(fine - coarse) < 1e-2 * (1 + coarse)
