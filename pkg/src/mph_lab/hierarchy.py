"""Level routing for modulated policy hierarchies.

Level 1 is the worker and acts on the environment every step. Each level
``k >= 2`` acts only when ``t % T_k == 0`` and otherwise holds its last
choice. Lower levels see the environment observation concatenated with the
held signals of every level above them. How a choice is turned into a
signal depends on ``HierarchySpec.signal``:

``bits``   Bernoulli bit vector appended as 0/1 floats (MPH).
``onehot`` categorical choice appended as a one-hot vector.
``select`` categorical choice selects one of several worker networks and is
           not appended (options).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGNALS = ("bits", "onehot", "select")


@dataclass(frozen=True)
class LevelSpec:
    index: int
    time_scale: int
    kind: str  # policy head: "bernoulli", "categorical" or "gaussian"
    width: int  # bits, choices, or action dims
    obs_dim: int

    @property
    def action_width(self) -> int:
        return 1 if self.kind == "categorical" else self.width

    @property
    def encoded_width(self) -> int:
        """Width of the action as fed to curiosity models or lower levels."""
        return self.width


@dataclass(frozen=True)
class HierarchySpec:
    env_obs_dim: int
    levels: tuple[LevelSpec, ...]  # worker first
    signal: str = "bits"
    n_skills: int = 1

    def __post_init__(self):
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if not self.levels or self.levels[0].time_scale != 1:
            raise ValueError("the worker must act every step (T_1 = 1)")
        for lo, hi in zip(self.levels, self.levels[1:]):
            if hi.time_scale <= lo.time_scale:
                raise ValueError("time scales must strictly increase up the hierarchy")
        for k, lvl in enumerate(self.levels, start=1):
            if lvl.index != k:
                raise ValueError("level indices must run 1..n from the worker up")
            if k >= 2:
                if lvl.width < 1:
                    raise ValueError(f"level {k} signal width must be >= 1")
                expect = "bernoulli" if self.signal == "bits" else "categorical"
                if lvl.kind != expect:
                    raise ValueError(f"level {k} must use a {expect} head for signal {self.signal!r}")
            if lvl.obs_dim != self.obs_dim(k):
                raise ValueError(f"level {k} obs_dim {lvl.obs_dim} != {self.obs_dim(k)}")
        if self.signal == "select" and self.n < 2:
            raise ValueError("select signal needs a level above the worker")

    @property
    def n(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> LevelSpec:
        return self.levels[k - 1]

    def appended_width(self, k: int) -> int:
        if self.signal == "select":
            return 0
        return sum(lvl.width for lvl in self.levels[k:])

    def obs_dim(self, k: int) -> int:
        return self.env_obs_dim + self.appended_width(k)


def build_spec(env_obs_dim: int, worker_kind: str, worker_width: int,
               time_scales=(1, 4), widths=(3,), signal: str = "bits") -> HierarchySpec:
    """Convenience constructor; ``widths`` lists signal widths for levels 2..n."""
    if len(time_scales) != len(widths) + 1:
        raise ValueError("need one time scale per level and one width per upper level")
    upper_kind = "bernoulli" if signal == "bits" else "categorical"
    kinds = [worker_kind] + [upper_kind] * len(widths)
    all_widths = [worker_width, *widths]
    n_skills = widths[0] if signal == "select" and widths else 1
    levels = []
    for k in range(1, len(all_widths) + 1):
        appended = 0 if signal == "select" else sum(all_widths[k:])
        levels.append(LevelSpec(k, int(time_scales[k - 1]), kinds[k - 1], int(all_widths[k - 1]),
                                env_obs_dim + appended))
    return HierarchySpec(env_obs_dim, tuple(levels), signal, n_skills)


def encode_action(level: LevelSpec, actions) -> np.ndarray:
    """Float encoding of level actions: one-hot for categorical, as-is otherwise."""
    actions = np.asarray(actions, dtype=np.float64)
    if level.kind == "categorical":
        return np.eye(level.width)[actions[..., 0].astype(np.int64)]
    if level.kind == "gaussian":
        return np.clip(actions, -1.0, 1.0)
    return actions


@dataclass
class ModulationState:
    """Held choices of levels 2..n for a batch of environments."""

    actions: dict = field(default_factory=dict)  # k -> [B, action_width]
    signals: dict = field(default_factory=dict)  # k -> [B, encoded width]
    last_activation: dict = field(default_factory=dict)  # k -> int

    def skill(self) -> np.ndarray:
        return self.actions[2][:, 0].astype(np.int64)


def assemble_obs(spec: HierarchySpec, k: int, env_obs, mod: ModulationState) -> np.ndarray:
    env_obs = np.atleast_2d(np.asarray(env_obs, dtype=np.float64))
    if spec.signal == "select" or k == spec.n:
        return env_obs
    parts = [env_obs] + [mod.signals[j] for j in range(k + 1, spec.n + 1)]
    return np.hstack(parts)


@dataclass
class StepRecord:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray


def hierarchy_step(t: int, env_obs, spec: HierarchySpec, policies: dict, mod: ModulationState,
                   rng: np.random.Generator):
    """Advance the hierarchy by one environment step for a batch of environments.

    ``policies[k]`` is a list of :class:`~mph_lab.ppo.PolicyNet` (several only
    for the options worker). Returns (worker actions, {level: StepRecord}) where
    upper levels appear only on steps where they activated.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    env_obs = np.atleast_2d(env_obs)
    records = {}
    for k in range(spec.n, 1, -1):
        lvl = spec.level(k)
        if t % lvl.time_scale == 0 or k not in mod.actions:
            obs = assemble_obs(spec, k, env_obs, mod)
            a, lp = policies[k][0].sample(obs, rng)
            mod.actions[k] = a
            mod.signals[k] = encode_action(lvl, a)
            mod.last_activation[k] = t
            records[k] = StepRecord(obs, a, lp)
    obs = assemble_obs(spec, 1, env_obs, mod)
    worker = spec.level(1)
    if spec.signal == "select":
        skill = mod.skill()
        a = np.zeros((len(obs), worker.action_width))
        lp = np.zeros(len(obs))
        for i, pol in enumerate(policies[1]):
            rows = np.flatnonzero(skill == i)
            if len(rows):
                a[rows], lp[rows] = pol.sample(obs[rows], rng)
    else:
        a, lp = policies[1][0].sample(obs, rng)
    records[1] = StepRecord(obs, a, lp)
    return a, records


def aggregate_master_reward(rewards) -> float:
    """Undiscounted sum of the environment rewards earned while a choice was held."""
    return float(np.sum(rewards))


@dataclass
class EpisodeTrace:
    """A lockstep batch of episodes. Arrays are padded to the horizon ``H``."""

    env_obs: np.ndarray  # [B, H+1, d]
    rewards: np.ndarray  # [B, H]
    lengths: np.ndarray  # [B]
    success: np.ndarray  # [B] bool; success is the only terminal event
    level_obs: dict  # k -> [B, H+1, obs_k]
    level_actions: dict  # k -> [B, H, action_width]
    level_log_probs: dict  # k -> [B, H]
    activations: dict  # k -> [B, H] bool
    skills: np.ndarray | None = None  # [B, H] (options only)

    @property
    def batch(self) -> int:
        return len(self.lengths)

    @property
    def env_steps(self) -> int:
        return int(self.lengths.sum())

    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def run_episodes(spec: HierarchySpec, policies: dict, envs, rng: np.random.Generator,
                 layouts=None) -> EpisodeTrace:
    """Roll out one episode in each env, all starting at t=0 and stepping in lockstep."""
    B = len(envs)
    H = envs[0].spec.horizon
    obs0 = np.stack([env.reset(None if layouts is None else layouts[i])
                     for i, env in enumerate(envs)])
    d = obs0.shape[1]
    env_obs = np.zeros((B, H + 1, d))
    env_obs[:, 0] = obs0
    rewards = np.zeros((B, H))
    lengths = np.zeros(B, dtype=np.int64)
    success = np.zeros(B, dtype=bool)
    level_obs = {k: np.zeros((B, H + 1, spec.obs_dim(k))) for k in range(1, spec.n + 1)}
    level_actions = {k: np.zeros((B, H, spec.level(k).action_width)) for k in range(1, spec.n + 1)}
    level_lp = {k: np.zeros((B, H)) for k in range(1, spec.n + 1)}
    activations = {k: np.zeros((B, H), dtype=bool) for k in range(1, spec.n + 1)}
    skills = np.zeros((B, H), dtype=np.int64) if spec.signal == "select" else None
    mod = ModulationState()
    running = np.ones(B, dtype=bool)
    current = obs0.copy()
    for t in range(H):
        if not running.any():
            break
        actions, records = hierarchy_step(t, current, spec, policies, mod, rng)
        for k, rec in records.items():
            level_obs[k][running, t] = rec.obs[running]
            level_actions[k][running, t] = rec.actions[running]
            level_lp[k][running, t] = rec.log_probs[running]
            activations[k][running, t] = True
        if skills is not None:
            skills[running, t] = mod.skill()[running]
        for b in np.flatnonzero(running):
            res = envs[b].step(actions[b] if actions.shape[1] > 1 else actions[b, 0])
            rewards[b, t] = res.reward
            current[b] = res.observation
            env_obs[b, t + 1] = res.observation
            lengths[b] = t + 1
            if res.done:
                running[b] = False
                success[b] = res.success
        # level observations at the following step, before any re-activation
        for k in range(1, spec.n + 1):
            nxt = assemble_obs(spec, k, env_obs[:, t + 1], mod)
            level_obs[k][:, t + 1] = nxt
    return EpisodeTrace(env_obs, rewards, lengths, success, level_obs, level_actions, level_lp,
                        activations, skills)


@dataclass
class LevelRollout:
    """Experience of one level on its own clock, flattened over episodes."""

    level: int
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    env_rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray  # terminal (no bootstrap) at this entry
    ends: np.ndarray  # last entry of its episode
    episode: np.ndarray
    times: np.ndarray
    skills: np.ndarray | None = None
    intrinsic: np.ndarray | None = None

    def __len__(self):
        return len(self.obs)

    @property
    def rewards(self) -> np.ndarray:
        if self.intrinsic is None:
            return self.env_rewards
        return self.env_rewards + self.intrinsic


def slice_rollouts(trace: EpisodeTrace, spec: HierarchySpec) -> dict[int, LevelRollout]:
    """Split a trace into per-level rollouts recorded only at activation steps."""
    H = trace.rewards.shape[1]
    if np.any(trace.lengths < 1) or np.any(trace.lengths > H):
        raise ValueError("inconsistent episode lengths in trace")
    out = {}
    for k in range(1, spec.n + 1):
        act = trace.activations[k]
        rows = {name: [] for name in ("b", "t", "t_next", "reward", "done", "end")}
        for b in range(trace.batch):
            L = int(trace.lengths[b])
            if act[b, L:].any():
                raise ValueError(f"level {k} activation recorded past episode end")
            times = np.flatnonzero(act[b, :L])
            if len(times) == 0 or times[0] != 0:
                raise ValueError(f"level {k} must activate at t=0")
            bounds = np.append(times, L)
            for j, t in enumerate(times):
                last = j == len(times) - 1
                rows["b"].append(b)
                rows["t"].append(t)
                rows["t_next"].append(bounds[j + 1])
                rows["reward"].append(aggregate_master_reward(trace.rewards[b, t:bounds[j + 1]]))
                rows["done"].append(last and bool(trace.success[b]))
                rows["end"].append(last)
        b_idx, t_idx, tn_idx = (np.array(rows[n], dtype=np.int64) for n in ("b", "t", "t_next"))
        out[k] = LevelRollout(
            level=k,
            obs=trace.level_obs[k][b_idx, t_idx],
            actions=trace.level_actions[k][b_idx, t_idx],
            log_probs=trace.level_log_probs[k][b_idx, t_idx],
            env_rewards=np.array(rows["reward"]),
            next_obs=trace.level_obs[k][b_idx, tn_idx],
            dones=np.array(rows["done"], dtype=bool),
            ends=np.array(rows["end"], dtype=bool),
            episode=b_idx,
            times=t_idx,
            skills=None if (k != 1 or trace.skills is None) else trace.skills[b_idx, t_idx],
        )
    return out
