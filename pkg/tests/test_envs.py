import numpy as np
import pytest

from mph_lab.distributions import DomainError
from mph_lab.envs import (KeyDoorEnv, PointPushEnv, UsageError, make_env, random_tabular,
                          scripted_push_action, shortest_solution, stationary_distribution)
from mph_lab.envs.keydoor import DOWN, INTERACT, LEFT, RIGHT, UP


def test_treasure_step_is_terminal_success():
    env = KeyDoorEnv(seed=0)
    env.reset(layout=[(0, 0), (3, 3), (5, 5), (1, 0)])
    env.has_key = env.door_open = True
    res = env.step(RIGHT)
    assert res.reward == 1.0 and res.done and res.success
    with pytest.raises(UsageError):
        env.step(UP)


def test_random_walk_without_key_earns_nothing():
    env = KeyDoorEnv(seed=1)
    rng = np.random.default_rng(0)
    env.reset()
    total = 0.0
    while not env.done:
        # movement only: the key can never be picked up
        total += env.step(int(rng.integers(4))).reward
    assert total == 0.0
    assert env.t == env.spec.horizon


@pytest.mark.parametrize("seed", range(10))
def test_bfs_solution_is_optimal(seed):
    env = KeyDoorEnv(seed=seed)
    env.reset()
    layout = [env.agent, env.key, env.door, env.treasure]
    plan = shortest_solution(env.size, layout)
    rewards = [env.step(a).reward for a in plan]
    assert sum(rewards) == pytest.approx(1.2)
    assert env.done and env.t == len(plan)
    # manhattan legs plus two interactions is a lower bound the BFS must meet
    d = lambda a, b: abs(a[0] - b[0]) + abs(a[1] - b[1])
    assert len(plan) == d(layout[0], layout[1]) + d(layout[1], layout[2]) + d(layout[2], layout[3]) + 2


def test_keydoor_observation_layout():
    env = KeyDoorEnv(seed=0)
    obs = env.reset(layout=[(0, 6), (6, 0), (3, 3), (1, 1)])
    assert obs.shape == (10,)
    np.testing.assert_allclose(obs, [0, 1, 1, 0, 0.5, 0.5, 1 / 6, 1 / 6, 0, 0])


def test_keydoor_determinism():
    def trace(seed):
        env = KeyDoorEnv(seed=seed)
        rng = np.random.default_rng(5)
        out = [env.reset()]
        while not env.done:
            out.append(env.step(int(rng.integers(5))).observation)
        return np.array(out)
    assert np.array_equal(trace(3), trace(3))


def test_keydoor_sparse_reward_audit():
    rng = np.random.default_rng(0)
    env = KeyDoorEnv(seed=2)
    for _ in range(10_000):
        env.reset()
        seen = []
        while not env.done:
            had_key, had_door = env.has_key, env.door_open
            r = env.step(int(rng.integers(5)))
            if r.reward:
                seen.append(r.reward)
                event = (not had_key and env.has_key) or (not had_door and env.door_open) or r.success
                assert event
        assert seen in ([], [0.1], [0.1, 0.1], [0.1, 0.1, 1.0])


def test_pointpush_rejects_satisfied_starts():
    env = PointPushEnv(seed=0)
    for _ in range(500):
        env.reset()
        assert np.linalg.norm(env.box - env.target) >= 0.3
    assert env.rejected_starts > 0
    with pytest.raises(ValueError):
        env.reset(layout=[(0.1, 0.1), (0.5, 0.5), (0.55, 0.5)])


def test_pointpush_zero_actions():
    env = PointPushEnv(seed=1)
    env.reset()
    total = 0.0
    while not env.done:
        total += env.step([0.0, 0.0]).reward
    assert total == 0.0 and env.t == 50


def test_pointpush_scripted_push_succeeds():
    env = PointPushEnv(seed=2)
    wins = 0
    for _ in range(20):
        obs = env.reset()
        while not env.done:
            res = env.step(scripted_push_action(obs))
            obs = res.observation
        wins += res.success
    assert wins >= 18


def test_pointpush_box_needs_contact():
    env = PointPushEnv(seed=3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        env.reset()
        while not env.done:
            box = env.box.copy()
            old = env.agent.copy()
            env.step(rng.uniform(-1, 1, 2))
            if not np.array_equal(box, env.box):
                assert np.linalg.norm(old - box) <= 0.1
                np.testing.assert_allclose(env.box - box, np.clip(box + env.agent - old, 0, 1) - box)


def test_pointpush_nonfinite_action():
    env = PointPushEnv(seed=0)
    env.reset()
    with pytest.raises(DomainError):
        env.step([np.nan, 0.0])


def test_random_tabular_rows():
    m = random_tabular(2, 2, seed=0)
    np.testing.assert_allclose(m.kernel.sum(-1), 1.0, atol=1e-12, rtol=0)
    m = random_tabular(5, 3, seed=1, eps_erg=0.01)
    assert m.kernel.min() >= 0.01 and m.ergodic
    with pytest.raises(ValueError):
        random_tabular(5, 3, seed=1, eps_erg=0.2)


def test_stationary_distribution_unique():
    m = random_tabular(5, 3, seed=4, eps_erg=0.02)
    chain = m.chain(np.full((5, 3), 1 / 3))
    v = np.full(5, 0.2)
    w = np.eye(5)[0]
    for _ in range(500):
        v, w = v @ chain, w @ chain
    np.testing.assert_allclose(v, w, atol=1e-12)
    np.testing.assert_allclose(stationary_distribution(chain), v, atol=1e-10)


def test_make_env():
    assert make_env("keydoor").spec.horizon == 200
    assert make_env("pointpush").spec.horizon == 50
    with pytest.raises(ValueError):
        make_env("kuka")
