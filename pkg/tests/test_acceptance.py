"""Acceptance suite. One line per criterion is printed in the terminal summary.

The learning comparisons (criteria 7 and 8) train 15 KeyDoor runs and take
most of the suite's wall time.
"""
import math
import time

import numpy as np
import pytest

from mph_lab.baselines import build_agent
from mph_lab.bounds_lab import drift_bound, run_campaign
from mph_lab.curiosity import (CuriosityConfig, CuriosityLearner, CuriosityModels, curiosity_loss,
                               forward_error, intrinsic_reward, update_curiosity)
from mph_lab.distributions import BernoulliVector, Categorical, DiagGaussian, kl, total_variation
from mph_lab.envs import KeyDoorEnv
from mph_lab.hierarchy import build_spec, run_episodes, slice_rollouts
from mph_lab.ppo import PolicyNet, ValueNet
from mph_lab.trainer import (ABLATION_ARMS, default_config, eval_policy,
                             export_modulation_histogram, modulation_histogram, run_training)
from oracles import central_diff, grad_close

criterion = pytest.mark.criterion

# Desk-scale learning protocol shared by criteria 7 and 8.
LEARN_SEEDS = (0, 1, 2, 3, 4)
LEARN_ROUNDS = 30
LEARN_ROLLOUTS = 50


# -- 1 ---------------------------------------------------------------------

def _fd_policy(rng, kind):
    obs_dim, width = int(rng.integers(2, 8)), int(rng.integers(2, 5))
    pol = PolicyNet(obs_dim, kind, width, seed=rng)
    if kind == "gaussian":
        pol.log_std = rng.normal(0, 0.3, width)
    obs = rng.normal(size=(4, obs_dim))
    actions, _ = pol.sample(obs, rng)
    coef = rng.normal(size=4)
    analytic = pol.log_prob_grads(obs, actions, coef)
    params = pol.params()

    def f():
        pol.set_params(params)
        return float(np.sum(coef * pol.log_prob(obs, actions)))

    return analytic, params, f


def _fd_value(rng):
    obs_dim = int(rng.integers(2, 8))
    v = ValueNet(obs_dim, seed=rng)
    obs, targets = rng.normal(size=(4, obs_dim)), rng.normal(size=4)
    _, grads = v.loss_and_grads(obs, targets)
    return grads.arrays(), v.mlp.arrays(), lambda: v.loss_and_grads(obs, targets)[0]


def _fd_curiosity(rng):
    obs_dim, act_dim = int(rng.integers(2, 8)), int(rng.integers(1, 4))
    m = CuriosityModels(obs_dim, act_dim, embed_dim=16, seed=rng)
    obs, nxt = rng.normal(size=(4, obs_dim)), rng.normal(size=(4, obs_dim))
    act = rng.normal(size=(4, act_dim))
    beta = float(rng.uniform(0.05, 0.95))
    _, grads = curiosity_loss(m, obs, act, nxt, beta, 1e-3)
    params = m.params()

    def f():
        m.set_params(params)
        return curiosity_loss(m, obs, act, nxt, beta, 1e-3)[0]

    return grads, params, f


@criterion(1, "finite-difference gradients, every network, >=100 instances, rel 1e-6, < 1 min")
def test_gradient_correctness():
    t0 = time.perf_counter()
    makers = {"categorical": lambda r: _fd_policy(r, "categorical"),
              "bernoulli": lambda r: _fd_policy(r, "bernoulli"),
              "gaussian": lambda r: _fd_policy(r, "gaussian"),
              "value": _fd_value, "curiosity": _fd_curiosity}
    failures = []
    for name, make in makers.items():
        for i in range(100):
            rng = np.random.default_rng([i, len(name)])
            analytic, params, f = make(rng)
            for ai, j, num in central_diff(f, params, coords=3, rng=rng):
                a = analytic[ai].reshape(-1)[j]
                if not grad_close(a, num):
                    failures.append((name, i, ai, j, a, num))
    elapsed = time.perf_counter() - t0
    assert not failures, failures[:5]
    assert elapsed < 60, elapsed


# -- 2 ---------------------------------------------------------------------

def _gauss_1d_checks(rng, n):
    """Normalization, entropy, KL and Pinsker for 1-D Gaussians by quadrature on a grid."""
    bad = 0
    x = np.linspace(-40, 40, 200001)
    for _ in range(n):
        mp, mq = rng.normal(0, 1, 2)
        sp, sq = rng.uniform(-1.5, 1.0, 2)
        p, q = DiagGaussian([mp], [sp]), DiagGaussian([mq], [sq])
        lp = -0.5 * ((x - mp) / np.exp(sp)) ** 2 - sp - 0.5 * math.log(2 * math.pi)
        lq = -0.5 * ((x - mq) / np.exp(sq)) ** 2 - sq - 0.5 * math.log(2 * math.pi)
        dp, dq = np.exp(lp), np.exp(lq)
        mass = np.trapezoid(dp, x)
        ent = -np.trapezoid(dp * lp, x)
        k_num = np.trapezoid(dp * (lp - lq), x)
        tv = 0.5 * np.trapezoid(np.abs(dp - dq), x)
        k = float(kl(p, q))
        ok = (abs(mass - 1) < 1e-8 and abs(ent - float(p.entropy())) < 1e-8
              and abs(k - k_num) < 1e-7 and k >= 0 and tv <= math.sqrt(k / 2) + 1e-9)
        # library log-density agrees with the grid formula
        ok = ok and abs(float(p.log_prob([0.3])) - (-0.5 * ((0.3 - mp) / np.exp(sp)) ** 2 - sp
                                                     - 0.5 * math.log(2 * math.pi))) < 1e-12
        bad += not ok
    return bad


@criterion(2, "distribution laws on 10^4 random pairs, zero violations")
def test_distribution_laws():
    rng = np.random.default_rng(2024)
    bad = 0
    pairs = 0
    for _ in range(4500):
        m = int(rng.integers(1, 5))
        p = BernoulliVector(logits=rng.normal(0, 3, m))
        q = BernoulliVector(logits=rng.normal(0, 3, m))
        outcomes, probs = p.outcome_probs()
        logp = p.log_prob(outcomes)
        k = float(kl(p, q))
        ok = (abs(np.exp(logp).sum() - 1) < 1e-12
              and abs(float(p.entropy()) + np.sum(probs * logp)) < 1e-12
              and k >= 0 and float(total_variation(p, q)) <= math.sqrt(k / 2) + 1e-12)
        bad += not ok
        pairs += 1
    for _ in range(4500):
        n = int(rng.integers(2, 7))
        a, b = rng.normal(0, 3, n), rng.normal(0, 3, n)
        p, q = Categorical(a), Categorical(b)
        logp = Categorical(np.tile(a, (n, 1))).log_prob(np.arange(n))
        k = float(kl(p, q))
        ok = (abs(np.exp(logp).sum() - 1) < 1e-12
              and abs(float(p.entropy()) + np.sum(np.exp(logp) * logp)) < 1e-12
              and k >= 0 and float(total_variation(p, q)) <= math.sqrt(k / 2) + 1e-12)
        bad += not ok
        pairs += 1
    bad += _gauss_1d_checks(rng, 1000)
    pairs += 1000
    assert pairs >= 10_000
    assert bad == 0


# -- 3 ---------------------------------------------------------------------

@criterion(3, "per-level per-round mean KL <= 1.5 delta on every logged row")
@pytest.mark.parametrize("agent", ["mph", "options", "onehot", "flat"])
def test_kl_contract(agent):
    cfg = default_config("keydoor", agent, rounds=4, rollouts=8, eval_every=4, eval_episodes=4)
    res = run_training(cfg)
    for row in res.rows[1:]:
        assert row["worker_kl"] <= 1.5 * 0.002
        if agent != "flat":
            assert row["master_kl"] <= 1.5 * 0.001


@criterion(3, "per-level per-round mean KL <= 1.5 delta on every logged row")
def test_kl_contract_learning_runs():
    """Every row of the criterion 7/8 runs is checked as they are produced."""
    for res in _learning_results().values():
        for row in res.rows[1:]:
            assert row["worker_kl"] <= 1.5 * 0.002
            if "master_kl" in row:
                assert row["master_kl"] <= 1.5 * 0.001


# -- 4 ---------------------------------------------------------------------

@criterion(4, "drift bound holds on 10^3 tabular instances; two-level value 0.0223607; < 10 min")
def test_bound_campaign():
    t0 = time.perf_counter()
    res = run_campaign(1000, seed=4)
    elapsed = time.perf_counter() - t0
    assert res["violations"] == 0
    assert {len(r["action_counts"]) for r in res["records"]} == {2, 3}
    assert max(r["states"] for r in res["records"]) <= 6
    assert max(max(r["action_counts"]) for r in res["records"]) <= 4
    assert round(drift_bound([0.001], 2), 7) == 0.0223607
    assert elapsed < 600


# -- 5 ---------------------------------------------------------------------

@criterion(5, "hold-over and ceil(H/T) master records on 10^3 random episodes")
def test_time_scale_semantics():
    rng = np.random.default_rng(5)
    agents = {}
    episodes = 0
    while episodes < 1000:
        T = int(rng.choice([2, 3, 4, 5, 8]))
        H = int(rng.integers(1, 80))
        if T not in agents:
            agents[T] = build_agent("mph", KeyDoorEnv().spec, seed=T)
            agents[T].spec = build_spec(10, "categorical", 5, (1, T), (3,))
        agent = agents[T]
        envs = [KeyDoorEnv(seed=int(s), horizon=H) for s in rng.integers(2 ** 31, size=10)]
        trace = run_episodes(agent.spec, agent.policies(), envs, rng)
        ro = slice_rollouts(trace, agent.spec)
        for b in range(10):
            L = int(trace.lengths[b])
            assert np.sum(ro[2].episode == b) == math.ceil(L / T)
            bits = trace.level_obs[1][b, :L, 10:]
            for t in range(L):
                if t % T:
                    assert np.array_equal(bits[t], bits[t - 1])
                else:
                    assert np.array_equal(bits[t], trace.level_actions[2][b, t])
        episodes += 10


# -- 6 ---------------------------------------------------------------------

@criterion(6, "forward error halves within 500 updates; perfect models give zero reward")
def test_curiosity_behavior():
    rng = np.random.default_rng(6)
    obs = rng.normal(size=(128, 6))
    act = np.eye(3)[rng.integers(3, size=128)]
    W, U = rng.normal(size=(6, 6)), rng.normal(size=(3, 6))
    nxt = np.tanh(0.5 * obs @ W + act @ U)
    learner = CuriosityLearner(CuriosityModels(6, 3, seed=7), CuriosityConfig(minibatches=1))
    start = forward_error(learner.models, obs, act, nxt).mean()
    update_curiosity(learner, obs, act, nxt, epochs=500)
    assert forward_error(learner.models, obs, act, nxt).mean() <= 0.5 * start

    perfect = CuriosityModels(6, 3, seed=8)
    target = perfect.embedding(nxt)
    perfect.predict_next = lambda o, a: target
    assert np.all(intrinsic_reward(perfect, obs, act, nxt, 0.1) == 0.0)


# -- 7 / 8 -----------------------------------------------------------------

_CACHE = {}


def _learning_config(agent, seed, arm="both"):
    cfg = default_config("keydoor", agent, seed=seed, rounds=LEARN_ROUNDS,
                         rollouts=LEARN_ROLLOUTS, eval_every=LEARN_ROUNDS, eval_episodes=50)
    if agent != "flat":
        worker_on, master_on = ABLATION_ARMS[arm]
        cfg.levels[1].curiosity.enabled = worker_on
        cfg.levels[2].curiosity.enabled = master_on
    return cfg


def _learning_results():
    if not _CACHE:
        for seed in LEARN_SEEDS:
            for key, agent, arm in (("mph", "mph", "both"), ("flat", "flat", "both"),
                                    ("none", "mph", "none")):
                _CACHE[(key, seed)] = run_training(_learning_config(agent, seed, arm))
    return _CACHE


def _mean_final(key):
    return float(np.mean([_learning_results()[(key, s)].final_success for s in LEARN_SEEDS]))


@criterion(7, "MPH beats flat PPO by >= 15 points on KeyDoor, 5 seeds, equal steps")
def test_mph_beats_flat():
    res = _learning_results()
    for s in LEARN_SEEDS:
        assert res[("mph", s)].rows[-1]["env_steps"] > 0
    steps = {k: np.mean([res[(k, s)].rows[-1]["env_steps"] for s in LEARN_SEEDS]) for k in ("mph", "flat")}
    mph, flat = _mean_final("mph"), _mean_final("flat")
    print(f"MPH {mph:.3f} flat {flat:.3f} steps {steps}")
    assert mph - flat >= 0.15


@criterion(8, "both-curiosity MPH beats no-curiosity MPH by >= 10 points, 5 seeds")
def test_ablation_direction():
    both, none = _mean_final("mph"), _mean_final("none")
    print(f"both {both:.3f} none {none:.3f}")
    assert both - none >= 0.10


# -- 9 ---------------------------------------------------------------------

@criterion(9, "modulation histogram: window constancy and options row normalization")
@pytest.mark.parametrize("kind", ["mph", "options", "onehot"])
def test_histogram(kind):
    agent = build_agent(kind, KeyDoorEnv().spec, seed=9)
    trace = eval_policy(agent, "keydoor", 40, seed=9)["trace"]
    table = modulation_histogram(agent, trace)
    for t in range(len(table)):
        if t % 4:
            assert np.array_equal(table[t], table[t - 1])
    live = np.array([trace.activations[2][:, (t // 4) * 4].sum() for t in range(len(table))])
    counts = table * live[:, None]
    # frequencies are exact tallies over the episodes alive at the window start
    assert np.allclose(counts, np.round(counts), rtol=0, atol=1e-9)
    if kind != "mph":
        assert np.array_equal(np.round(counts).sum(axis=1), live)
        assert np.allclose(table.sum(axis=1), 1.0, rtol=0, atol=4 * np.finfo(float).eps)
    assert np.all((table >= 0) & (table <= 1))
    assert np.array_equal(export_modulation_histogram(agent, "keydoor", 40, seed=9), table)


# -- 10 --------------------------------------------------------------------

@criterion(10, "repeated runs give byte-identical metrics files")
@pytest.mark.parametrize("env,agent", [("keydoor", "mph"), ("keydoor", "options"),
                                       ("pointpush", "mph")])
def test_determinism(tmp_path, env, agent):
    cfg = default_config(env, agent, seed=10, rounds=3, rollouts=4, eval_every=2, eval_episodes=5)
    run_training(cfg, tmp_path / "a")
    run_training(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a.count(b"\n") == 5
