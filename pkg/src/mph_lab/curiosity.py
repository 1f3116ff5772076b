"""Per-level curiosity: embedding, forward and reverse models.

The exploration bonus is the forward model's prediction error in embedding
space. The models are trained jointly on a weighted sum of forward and
reverse prediction errors minus an L1 term on the embeddings that keeps
them from collapsing; embedding outputs pass through tanh so that term is
bounded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import (HIDDEN, AdamState, MLPParams, adam_step, init_params, mlp_backward,
                          mlp_dims, mlp_forward)


@dataclass
class CuriosityConfig:
    beta: float = 0.2
    lam: float = 1e-3
    eta: float = 0.1
    embed_dim: int = 16
    lr: float = 5e-3
    epochs: int = 4
    minibatches: int = 4
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def scale(self) -> float:
        return self.eta if self.enabled else 0.0


class CuriosityModels:
    def __init__(self, obs_dim: int, action_dim: int, embed_dim: int = 16, seed=0,
                 hidden=HIDDEN):
        rng = np.random.default_rng(seed)
        self.obs_dim, self.action_dim, self.embed_dim = obs_dim, action_dim, embed_dim
        self.embed = init_params(mlp_dims(obs_dim, embed_dim, hidden), rng)
        self.forward = init_params(mlp_dims(embed_dim + action_dim, embed_dim, hidden), rng)
        self.reverse = init_params(mlp_dims(embed_dim + action_dim, embed_dim, hidden), rng)

    def params(self) -> list[np.ndarray]:
        return self.embed.arrays() + self.forward.arrays() + self.reverse.arrays()

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        n_e, n_f = len(self.embed.arrays()), len(self.forward.arrays())
        self.embed = MLPParams.from_arrays(arrays[:n_e])
        self.forward = MLPParams.from_arrays(arrays[n_e:n_e + n_f])
        self.reverse = MLPParams.from_arrays(arrays[n_e + n_f:])

    def embedding(self, obs) -> np.ndarray:
        return np.tanh(mlp_forward(self.embed, obs))

    def predict_next(self, obs, actions) -> np.ndarray:
        return mlp_forward(self.forward, np.hstack([self.embedding(obs), actions]))

    def predict_prev(self, next_obs, actions) -> np.ndarray:
        return mlp_forward(self.reverse, np.hstack([self.embedding(next_obs), actions]))


def forward_error(models: CuriosityModels, obs, actions, next_obs) -> np.ndarray:
    """Per-sample L2 norm of the forward prediction error in embedding space."""
    diff = models.predict_next(obs, actions) - models.embedding(next_obs)
    return np.linalg.norm(diff, axis=-1)


def intrinsic_reward(models: CuriosityModels, obs, actions, next_obs, eta: float) -> np.ndarray:
    if eta == 0.0:
        return np.zeros(len(obs))
    return eta * forward_error(models, obs, actions, next_obs)


def _unit(diff):
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0), norm[:, 0]


def curiosity_loss(models: CuriosityModels, obs, actions, next_obs, beta: float, lam: float):
    """Batch-mean joint loss and its gradients (a list matching ``models.params()``)."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    n = len(obs)
    if n == 0:
        raise ValueError("empty curiosity batch")
    d = models.embed_dim
    e_now, e_next = models.embedding(obs), models.embedding(next_obs)
    f_in = np.hstack([e_now, actions])
    r_in = np.hstack([e_next, actions])
    f_err, f_norm = _unit(mlp_forward(models.forward, f_in) - e_next)
    r_err, r_norm = _unit(mlp_forward(models.reverse, r_in) - e_now)
    l1 = np.abs(e_now).sum(axis=1) + np.abs(e_next).sum(axis=1)
    loss = float(np.mean(beta * f_norm + (1 - beta) * r_norm - lam * l1))

    g_f = beta * f_err / n
    g_r = (1 - beta) * r_err / n
    grads_f, g_f_in = mlp_backward(models.forward, f_in, g_f)
    grads_r, g_r_in = mlp_backward(models.reverse, r_in, g_r)
    g_now = g_f_in[:, :d] - g_r - lam * np.sign(e_now) / n
    g_next = g_r_in[:, :d] - g_f - lam * np.sign(e_next) / n
    grads_e1, _ = mlp_backward(models.embed, obs, g_now * (1 - e_now ** 2))
    grads_e2, _ = mlp_backward(models.embed, next_obs, g_next * (1 - e_next ** 2))
    grads_e = [a + b for a, b in zip(grads_e1.arrays(), grads_e2.arrays())]
    return loss, grads_e + grads_f.arrays() + grads_r.arrays()


class CuriosityLearner:
    def __init__(self, models: CuriosityModels, config: CuriosityConfig):
        self.models = models
        self.config = config
        self.opt = AdamState.create(models.params(), config.lr)

    def update(self, obs, actions, next_obs, rng) -> float:
        return update_curiosity(self, obs, actions, next_obs, rng)


def update_curiosity(learner: CuriosityLearner, obs, actions, next_obs, rng=None,
                     epochs: int | None = None) -> float:
    """Adam passes over the batch; returns the full-batch loss after the update."""
    cfg = learner.config
    epochs = cfg.epochs if epochs is None else epochs
    n = len(obs)
    for _ in range(epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for idx in np.array_split(order, min(cfg.minibatches, n)):
            _, grads = curiosity_loss(learner.models, obs[idx], actions[idx], next_obs[idx],
                                      cfg.beta, cfg.lam)
            new, learner.opt = adam_step(learner.models.params(), grads, learner.opt)
            learner.models.set_params(new)
    loss, _ = curiosity_loss(learner.models, obs, actions, next_obs, cfg.beta, cfg.lam)
    return loss
