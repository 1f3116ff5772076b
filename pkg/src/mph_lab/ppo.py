"""Per-level PPO: policy/value networks, GAE, and KL-capped clipped-surrogate updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import BernoulliVector, Categorical, DiagGaussian
from .tensor_core import (HIDDEN, AdamState, MLPParams, adam_step, all_finite, init_params,
                          mlp_backward, mlp_dims, mlp_forward)

log = logging.getLogger(__name__)

HEAD_KINDS = ("categorical", "bernoulli", "gaussian")
KL_SLACK = 1.5


class PolicyNet:
    """MLP policy with a categorical, Bernoulli-vector or diagonal-Gaussian head.

    ``width`` is the number of choices, bits, or action dimensions.
    """

    def __init__(self, obs_dim: int, kind: str, width: int, seed, hidden=HIDDEN):
        if kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {kind!r}")
        if width < 1 or (kind == "categorical" and width < 2):
            raise ValueError(f"invalid width {width} for {kind} head")
        self.kind = kind
        self.width = width
        self.obs_dim = obs_dim
        self.mlp = init_params(mlp_dims(obs_dim, width, hidden), seed)
        self.log_std = np.zeros(width) if kind == "gaussian" else None

    @property
    def action_width(self) -> int:
        """Columns used to store one action (an index takes one column)."""
        return 1 if self.kind == "categorical" else self.width

    def params(self) -> list[np.ndarray]:
        arrays = self.mlp.arrays()
        return arrays + [self.log_std] if self.log_std is not None else arrays

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        if self.log_std is not None:
            self.log_std = arrays.pop()
        self.mlp = MLPParams.from_arrays(arrays)

    def copy(self) -> "PolicyNet":
        new = object.__new__(PolicyNet)
        new.__dict__.update(self.__dict__)
        new.mlp = self.mlp.copy()
        new.log_std = None if self.log_std is None else self.log_std.copy()
        return new

    def dist(self, obs):
        out = mlp_forward(self.mlp, obs)
        if self.kind == "categorical":
            return Categorical(out)
        if self.kind == "bernoulli":
            return BernoulliVector(logits=out)
        return DiagGaussian(out, self.log_std)

    def _unpack(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        return actions[..., 0].astype(np.int64) if self.kind == "categorical" else actions

    def sample(self, obs, rng):
        """Returns (actions as float [batch x action_width], log-probs)."""
        d = self.dist(obs)
        a = d.sample(rng)
        lp = d.log_prob(a)
        if self.kind == "categorical":
            a = a[:, None].astype(np.float64)
        return a, lp

    def log_prob(self, obs, actions):
        return self.dist(obs).log_prob(self._unpack(actions))

    def log_prob_grads(self, obs, actions, coef) -> list[np.ndarray]:
        """Gradient of ``sum(coef * log_prob(actions | obs))`` w.r.t. ``params()``."""
        d = self.dist(obs)
        coef = np.asarray(coef, dtype=np.float64)[:, None]
        if self.kind == "gaussian":
            g_mean, g_log_std = d.log_prob_grad(self._unpack(actions))
            grads, _ = mlp_backward(self.mlp, obs, coef * g_mean)
            return grads.arrays() + [(coef * g_log_std).sum(axis=0)]
        grads, _ = mlp_backward(self.mlp, obs, coef * d.log_prob_grad(self._unpack(actions)))
        return grads.arrays()


class ValueNet:
    def __init__(self, obs_dim: int, seed, hidden=HIDDEN):
        self.mlp = init_params(mlp_dims(obs_dim, 1, hidden), seed)

    def __call__(self, obs) -> np.ndarray:
        return mlp_forward(self.mlp, obs)[:, 0]

    def loss_and_grads(self, obs, targets):
        """Mean squared error and its gradient."""
        pred = self(obs)
        err = pred - targets
        grads, _ = mlp_backward(self.mlp, obs, (2.0 * err / len(err))[:, None])
        return float(np.mean(err ** 2)), grads


@dataclass
class PPOConfig:
    gamma: float = 0.985
    gae_lambda: float = 0.95
    delta: float = 0.002
    epochs: int = 40
    minibatches: int = 4
    clip: float = 0.2
    lr_policy: float = 1e-4
    lr_value: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be >= 1")


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates for one episode segment on one level's clock.

    ``dones[-1]`` marks a terminal final step (bootstrap 0); otherwise the
    segment is treated as truncated and ``last_value`` is bootstrapped.
    Returns (advantages, return targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros_like(rewards)
    running = 0.0
    next_value = last_value
    for t in reversed(range(len(rewards))):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class AdvantageBatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def normalized(self) -> "AdvantageBatch":
        adv = self.advantages - self.advantages.mean()
        adv = adv / max(adv.std(), 1e-8)
        return AdvantageBatch(self.obs, self.actions, self.old_log_probs, adv, self.returns)

    def subset(self, idx) -> "AdvantageBatch":
        return AdvantageBatch(self.obs[idx], self.actions[idx], self.old_log_probs[idx],
                              self.advantages[idx], self.returns[idx])


def mean_kl(old: PolicyNet, new: PolicyNet, obs) -> float:
    """Batch mean of KL(old(.|s) || new(.|s))."""
    if len(obs) == 0:
        return 0.0
    return float(np.mean(old.dist(obs).kl(new.dist(obs))))


def surrogate_grads(policy: PolicyNet, batch: AdvantageBatch, clip: float):
    """Clipped surrogate loss (to minimize) and its parameter gradients."""
    logp = policy.log_prob(batch.obs, batch.actions)
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip, 1 + clip) * adv
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    # the unclipped branch is the active one unless clipping binds
    live = unclipped <= clipped
    coef = np.where(live, -ratio * adv / len(adv), 0.0)
    grads = policy.log_prob_grads(batch.obs, batch.actions, coef)
    clip_frac = float(np.mean(np.abs(ratio - 1) > clip))
    return loss, grads, clip_frac


class PPOLearner:
    """Owns one policy/value pair and their optimizer state."""

    def __init__(self, policy: PolicyNet, value: ValueNet, config: PPOConfig):
        self.policy = policy
        self.value = value
        self.config = config
        self.policy_opt = AdamState.create(policy.params(), config.lr_policy)
        self.value_opt = AdamState.create(value.mlp, config.lr_value)

    def update(self, batch: AdvantageBatch, rng: np.random.Generator) -> dict:
        return ppo_update(self, batch, rng)


def _minibatches(n: int, count: int, rng):
    perm = rng.permutation(n)
    return [c for c in np.array_split(perm, min(count, n)) if len(c)]


def ppo_update(learner: PPOLearner, batch: AdvantageBatch, rng: np.random.Generator) -> dict:
    """KL-capped PPO round on ``learner``; returns stats.

    Each minibatch step is followed by a full-batch KL(old || new) check. The
    round stops the first time the KL exceeds ``delta``; a step that pushes
    it beyond ``1.5 * delta`` is rolled back, so the accepted policy always
    satisfies ``mean_kl <= 1.5 * delta``.
    """
    cfg = learner.config
    if len(batch) == 0:
        raise ValueError("empty PPO batch")
    policy, value = learner.policy, learner.value
    snapshot = (policy.copy(), learner.policy_opt, value.mlp.copy(), learner.value_opt)
    old = policy.copy()
    old_dist = old.dist(batch.obs)
    norm = batch.normalized()
    stats = {"policy_loss": 0.0, "clip_frac": 0.0, "policy_steps": 0, "aborted": False,
             "entropy": float(np.mean(old_dist.entropy()))}

    def restore(reason):
        policy.set_params(snapshot[0].params())
        learner.policy_opt = snapshot[1]
        value.mlp = snapshot[2]
        learner.value_opt = snapshot[3]
        log.warning("PPO round aborted: %s", reason)
        stats.update(aborted=True, mean_kl=0.0, value_loss=float("nan"))
        return stats

    stop = cfg.delta <= 0
    for _ in range(cfg.epochs):
        if stop:
            break
        for idx in _minibatches(len(batch), cfg.minibatches, rng):
            loss, grads, clip_frac = surrogate_grads(policy, norm.subset(idx), cfg.clip)
            if not np.isfinite(loss) or not all_finite(grads):
                return restore("non-finite policy loss")
            prev_params, prev_opt = policy.params(), learner.policy_opt
            new_params, learner.policy_opt = adam_step(prev_params, grads, learner.policy_opt)
            policy.set_params(new_params)
            kl = float(np.mean(old_dist.kl(policy.dist(batch.obs))))
            if not np.isfinite(kl) or kl > KL_SLACK * cfg.delta:
                policy.set_params(prev_params)
                learner.policy_opt = prev_opt
                stop = True
                break
            stats["policy_loss"], stats["clip_frac"] = loss, clip_frac
            stats["policy_steps"] += 1
            if kl > cfg.delta:
                stop = True
                break

    value_loss = float("nan")
    for _ in range(cfg.epochs):
        for idx in _minibatches(len(batch), cfg.minibatches, rng):
            value_loss, grads = value.loss_and_grads(batch.obs[idx], batch.returns[idx])
            if not np.isfinite(value_loss) or not all_finite(grads):
                return restore("non-finite value loss")
            value.mlp, learner.value_opt = adam_step(value.mlp, grads, learner.value_opt)
    stats["value_loss"] = float(np.mean((value(batch.obs) - batch.returns) ** 2))
    stats["mean_kl"] = mean_kl(old, policy, batch.obs)
    return stats
