import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mph_lab.bounds_lab import (PolicyTable, PreconditionError, drift_bound, env_level_kernel,
                                kl_projected_perturbation, level_kernels, live_check,
                                marginalize_kernel, policy_kl, random_instance, random_policy,
                                run_campaign, timescale_kernel, verify_drift_bound)
from mph_lab.envs.tabular import random_tabular


def test_two_level_bound_value():
    assert drift_bound([0.001], 2) == pytest.approx(0.0223607, abs=5e-8)
    assert drift_bound([0.001, 0.001], 3) == pytest.approx(2 * math.sqrt(0.0005))
    assert drift_bound([], 1) == 0.0


def test_marginalization_matches_loops():
    rng = np.random.default_rng(0)
    S, A1, A2, A3 = 3, 2, 3, 2
    env = random_tabular(S, A1, rng).kernel
    U1 = A2 * A3
    p1 = env_level_kernel(env, U1)
    pi1 = random_policy(rng, S, U1, A1)
    p2 = marginalize_kernel(p1, pi1, A2).table
    for s, a2, a3, s2 in itertools.product(range(S), range(A2), range(A3), range(S)):
        u1 = a2 * A3 + a3
        want = sum(env[s, b, s2] * pi1.table[s, u1, b] for b in range(A1))
        assert p2[s, a3, a2, s2] == pytest.approx(want, abs=1e-14)


def test_timescale_kernel_matches_repeated_steps():
    rng = np.random.default_rng(1)
    env = random_tabular(4, 3, rng).kernel
    p = env_level_kernel(env, 2)
    pi = random_policy(rng, 4, 2, 3)
    k3 = timescale_kernel(p, pi, 3).table
    M = np.einsum("suay,sua->usy", p.table, pi.table)
    for u in range(2):
        for a in range(3):
            row = p.table[:, u, a, :] @ M[u] @ M[u]
            np.testing.assert_allclose(k3[:, u, a, :], row, atol=1e-14)
    np.testing.assert_allclose(k3.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(timescale_kernel(p, pi, 1).table, p.table)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), delta=st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_projection_lands_in_window(seed, delta):
    rng = np.random.default_rng(seed)
    pi = random_policy(rng, 3, 2, 4)
    new = kl_projected_perturbation(pi, delta, rng)
    worst = policy_kl(pi, new).max()
    assert 0.9 * delta <= worst <= delta


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_random_instances_satisfy_bound(seed):
    inst = random_instance(seed)
    res = verify_drift_bound(inst["kernel"], inst["policies"], inst["perturbed"],
                             inst["action_counts"], inst["deltas"])
    assert res["ok"]
    # first link of the chain of inequalities bounds the level-2 drift too
    assert res["levels"][0]["drift"] <= res["holder_level2"] + 1e-15


def test_identical_policies_have_zero_drift():
    inst = random_instance(3, levels=3)
    res = verify_drift_bound(inst["kernel"], inst["policies"], inst["policies"],
                             inst["action_counts"], inst["deltas"])
    assert all(lv["drift"] == 0.0 for lv in res["levels"])


def test_precondition_violation_raises():
    inst = random_instance(4, levels=2)
    pi = inst["policies"][0]
    far = PolicyTable(np.roll(pi.table, 1, axis=-1))
    with pytest.raises(PreconditionError):
        verify_drift_bound(inst["kernel"], [pi], [far], inst["action_counts"], inst["deltas"])


def test_level_kernels_are_stochastic():
    inst = random_instance(5, levels=3)
    for k in level_kernels(inst["kernel"], inst["policies"], inst["action_counts"]):
        np.testing.assert_allclose(k.table.sum(-1), 1.0, atol=1e-12)


def test_invalid_policy_table():
    with pytest.raises(ValueError):
        PolicyTable(np.full((2, 1, 3), 0.5))


def test_campaign_and_live_check():
    res = run_campaign(50, seed=0)
    assert res["violations"] == 0 and res["instances"] == 50
    out = live_check([0.0, 0.0015, 0.003], seed=0, instances_per_round=2)
    assert [r["ok"] for r in out] == [True, True, True]
    assert out[0]["bound"] == 0.0
