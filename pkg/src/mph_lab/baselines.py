"""Agents: flat PPO, options, one-hot modulation and MPH behind one interface.

Every agent is a :class:`HierarchicalAgent`; the kinds differ only in the
hierarchy spec (levels, signal type, number of worker networks). The flat
agent is a one-level hierarchy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curiosity import CuriosityConfig, CuriosityLearner, CuriosityModels, intrinsic_reward
from .curiosity import update_curiosity
from .envs.base import EnvSpec
from .hierarchy import HierarchySpec, LevelRollout, build_spec, encode_action
from .ppo import AdvantageBatch, PolicyNet, PPOConfig, PPOLearner, ValueNet, gae
from .tensor_core import MLPParams, load_arrays, save_arrays

AGENT_KINDS = ("flat", "options", "onehot", "mph")


@dataclass
class HierarchyConfig:
    master_time_scale: int = 4
    signal_width: int = 3  # bits for MPH, skills for options / one-hot
    levels: int = 2
    time_scales: tuple = ()  # explicit T_1..T_n for n > 2 (MPH only)

    def scales(self) -> tuple:
        if self.time_scales:
            return tuple(int(t) for t in self.time_scales)
        if self.levels != 2:
            raise ValueError("give explicit time_scales for hierarchies deeper than 2")
        return (1, int(self.master_time_scale))


@dataclass
class LevelConfig:
    ppo: PPOConfig = field(default_factory=PPOConfig)
    curiosity: CuriosityConfig = field(default_factory=CuriosityConfig)


def hierarchy_spec_for(kind: str, env_spec: EnvSpec, hcfg: HierarchyConfig) -> HierarchySpec:
    worker_kind = "categorical" if env_spec.action_kind == "discrete" else "gaussian"
    d, w = env_spec.observation_dim, env_spec.action_dim
    if kind == "flat":
        return build_spec(d, worker_kind, w, time_scales=(1,), widths=())
    scales = hcfg.scales()
    if kind == "mph":
        return build_spec(d, worker_kind, w, scales, (hcfg.signal_width,) * (len(scales) - 1), "bits")
    if len(scales) != 2:
        raise ValueError(f"{kind} agents have exactly two levels")
    signal = {"options": "select", "onehot": "onehot"}[kind]
    return build_spec(d, worker_kind, w, scales, (hcfg.signal_width,), signal)


class LevelLearners:
    """PPO learners (one per worker skill for options) plus curiosity for one level."""

    def __init__(self, spec: HierarchySpec, k: int, cfg: LevelConfig, n_nets: int, rng):
        lvl = spec.level(k)
        self.level = lvl
        self.cfg = cfg
        self.learners = [
            PPOLearner(PolicyNet(lvl.obs_dim, lvl.kind, lvl.width, rng),
                       ValueNet(lvl.obs_dim, rng), cfg.ppo)
            for _ in range(n_nets)
        ]
        models = CuriosityModels(lvl.obs_dim, lvl.encoded_width, cfg.curiosity.embed_dim,
                                 seed=int(rng.integers(2 ** 31)))
        self.curiosity = CuriosityLearner(models, cfg.curiosity)

    @property
    def policies(self) -> list[PolicyNet]:
        return [ln.policy for ln in self.learners]

    def intrinsic(self, ro: LevelRollout) -> np.ndarray:
        enc = encode_action(self.level, ro.actions)
        return intrinsic_reward(self.curiosity.models, ro.obs, enc, ro.next_obs,
                                self.cfg.curiosity.scale)

    def values(self, obs, skills=None) -> np.ndarray:
        if len(self.learners) == 1:
            return self.learners[0].value(obs)
        v = np.zeros(len(obs))
        for i, ln in enumerate(self.learners):
            rows = np.flatnonzero(skills == i)
            if len(rows):
                v[rows] = ln.value(obs[rows])
        return v

    def advantages(self, ro: LevelRollout):
        """GAE along each episode on this level's clock.

        For options each entry is valued by the value net of the skill that
        produced it, so the estimate runs across skill switches.
        """
        v = self.values(ro.obs, ro.skills)
        v_next = self.values(ro.next_obs, ro.skills)
        adv = np.zeros(len(ro))
        ret = np.zeros(len(ro))
        rewards = ro.rewards
        cfg = self.cfg.ppo
        for ep in np.unique(ro.episode):
            idx = np.flatnonzero(ro.episode == ep)
            last = idx[-1]
            bootstrap = 0.0 if ro.dones[last] else v_next[last]
            a, r = gae(rewards[idx], v[idx], ro.dones[idx], cfg.gamma, cfg.gae_lambda, bootstrap)
            adv[idx], ret[idx] = a, r
        return adv, ret

    def update(self, ro: LevelRollout, rng) -> dict:
        stats = {"mean_kl": 0.0, "policy_loss": 0.0, "value_loss": 0.0, "clip_frac": 0.0,
                 "entropy": 0.0}
        if len(self.learners) == 1:
            groups = [np.arange(len(ro))]
        else:
            groups = [np.flatnonzero(ro.skills == i) for i in range(len(self.learners))]
        adv, ret = self.advantages(ro)
        total = 0
        skill_sizes = []
        for i, rows in enumerate(groups):
            skill_sizes.append(len(rows))
            if len(rows) == 0:
                continue
            batch = AdvantageBatch(ro.obs[rows], ro.actions[rows], ro.log_probs[rows],
                                   adv[rows], ret[rows])
            s = self.learners[i].update(batch, rng)
            for key in stats:
                stats[key] += s[key] * len(rows)
            total += len(rows)
        for key in stats:
            stats[key] /= max(total, 1)
        stats["skill_sizes"] = skill_sizes
        stats["samples"] = total
        enc = encode_action(self.level, ro.actions)
        if self.cfg.curiosity.enabled:
            stats["curiosity_loss"] = update_curiosity(self.curiosity, ro.obs, enc, ro.next_obs, rng)
        else:
            stats["curiosity_loss"] = 0.0
        return stats


class HierarchicalAgent:
    def __init__(self, kind: str, spec: HierarchySpec, level_cfgs: dict[int, LevelConfig], seed: int):
        self.kind = kind
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.levels = {}
        for k in range(1, spec.n + 1):
            n_nets = spec.n_skills if (k == 1 and spec.signal == "select") else 1
            self.levels[k] = LevelLearners(spec, k, level_cfgs[k], n_nets, rng)

    def policies(self) -> dict[int, list[PolicyNet]]:
        return {k: lv.policies for k, lv in self.levels.items()}

    def add_intrinsic(self, rollouts: dict[int, LevelRollout]) -> None:
        for k, ro in rollouts.items():
            ro.intrinsic = self.levels[k].intrinsic(ro)

    def update(self, rollouts: dict[int, LevelRollout], rng) -> dict[int, dict]:
        """Update every level in one phase: PPO first, then curiosity."""
        return {k: self.levels[k].update(rollouts[k], rng) for k in sorted(self.levels)}

    # -- checkpoints --------------------------------------------------------
    def state_groups(self) -> dict[str, list[np.ndarray]]:
        groups = {}
        for k, lv in self.levels.items():
            for i, ln in enumerate(lv.learners):
                groups[f"L{k}.policy{i}"] = ln.policy.params()
                groups[f"L{k}.value{i}"] = ln.value.mlp.arrays()
            groups[f"L{k}.curiosity"] = lv.curiosity.models.params()
        return groups

    def load_groups(self, groups: dict[str, list[np.ndarray]]) -> None:
        for k, lv in self.levels.items():
            for i, ln in enumerate(lv.learners):
                ln.policy.set_params(groups[f"L{k}.policy{i}"])
                ln.value.mlp = MLPParams.from_arrays(groups[f"L{k}.value{i}"])
            lv.curiosity.models.set_params(groups[f"L{k}.curiosity"])

    def save(self, path) -> None:
        save_arrays(path, self.state_groups())

    def load(self, path) -> None:
        self.load_groups(load_arrays(path))


def build_agent(kind: str, env_spec: EnvSpec, hcfg: HierarchyConfig | None = None,
                level_cfgs: dict[int, LevelConfig] | None = None, seed: int = 0) -> HierarchicalAgent:
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")
    spec = hierarchy_spec_for(kind, env_spec, hcfg or HierarchyConfig())
    if level_cfgs is None:
        level_cfgs = {}
    cfgs = {k: level_cfgs.get(k, LevelConfig()) for k in range(1, spec.n + 1)}
    return HierarchicalAgent(kind, spec, cfgs, seed)
