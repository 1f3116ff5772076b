"""PointPush: push a box into a target ball on the unit square."""
from __future__ import annotations

import numpy as np

from .base import EnvSpec, StepResult, UsageError
from ..distributions import DomainError

STEP_SCALE = 0.05
CONTACT_RADIUS = 0.1
GOAL_EPS = 0.15


class PointPushEnv:
    def __init__(self, horizon: int = 50, seed=None):
        self.spec = EnvSpec("pointpush", 10, "continuous", 2, horizon)
        self.rng = np.random.default_rng(seed)
        self.done = True
        self.rejected_starts = 0

    def reset(self, layout=None) -> np.ndarray:
        if layout is not None:
            agent, box, target = (np.asarray(p, dtype=np.float64) for p in layout)
            if np.linalg.norm(box - target) <= GOAL_EPS:
                raise ValueError("goal already satisfied in the given layout")
        else:
            # start states with the goal already (nearly) satisfied are discarded
            while True:
                agent, box, target = self.rng.uniform(0.0, 1.0, size=(3, 2))
                if np.linalg.norm(box - target) >= 2 * GOAL_EPS:
                    break
                self.rejected_starts += 1
        self.agent, self.box, self.target = agent.copy(), box.copy(), target.copy()
        self.t = 0
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.agent, self.box, self.target,
                               self.box - self.agent, self.box - self.target])

    def step(self, action) -> StepResult:
        if self.done:
            raise UsageError("episode is done; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(action)):
            raise DomainError("non-finite action")
        old = self.agent
        touching = np.linalg.norm(old - self.box) <= CONTACT_RADIUS
        self.agent = np.clip(old + STEP_SCALE * np.clip(action, -1.0, 1.0), 0.0, 1.0)
        if touching:
            self.box = np.clip(self.box + (self.agent - old), 0.0, 1.0)
        self.t += 1
        success = bool(np.linalg.norm(self.box - self.target) <= GOAL_EPS)
        self.done = success or self.t >= self.spec.horizon
        return StepResult(self.observation(), 1.0 if success else 0.0, self.done, success)


def scripted_push_action(obs) -> np.ndarray:
    """Approach the box, then drag it straight at the target."""
    agent, box, target = obs[0:2], obs[2:4], obs[4:6]
    if np.linalg.norm(agent - box) > CONTACT_RADIUS:
        d = box - agent
    else:
        d = target - box
    return np.clip(d / STEP_SCALE, -1.0, 1.0)
