"""KeyDoorTreasure: a gridworld with subtask-gated sparse rewards.

The agent must pick up the key (interact on its cell), open the door
(interact on the door cell while holding the key) and then walk onto the
treasure. Each of the three events is rewarded once; nothing else is.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .base import EnvSpec, StepResult, UsageError

UP, DOWN, LEFT, RIGHT, INTERACT = range(5)
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}

KEY_REWARD = 0.1
DOOR_REWARD = 0.1
TREASURE_REWARD = 1.0


class KeyDoorEnv:
    def __init__(self, size: int = 7, horizon: int = 200, seed=None):
        if size < 2:
            raise ValueError("grid size must be >= 2")
        self.size = size
        self.spec = EnvSpec("keydoor", 10, "discrete", 5, horizon)
        self.rng = np.random.default_rng(seed)
        self.done = True

    def reset(self, layout=None) -> np.ndarray:
        """Start an episode. ``layout`` optionally fixes (agent, key, door, treasure) cells."""
        if layout is None:
            cells = self.rng.choice(self.size * self.size, size=4, replace=False)
            layout = [(int(c) % self.size, int(c) // self.size) for c in cells]
        self.agent, self.key, self.door, self.treasure = (tuple(p) for p in layout)
        self.has_key = False
        self.door_open = False
        self.t = 0
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        scale = 1.0 / (self.size - 1)
        pos = np.array([*self.agent, *self.key, *self.door, *self.treasure], dtype=np.float64)
        return np.concatenate([pos * scale, [float(self.has_key), float(self.door_open)]])

    def step(self, action) -> StepResult:
        if self.done:
            raise UsageError("episode is done; call reset()")
        action = int(action)
        if action not in range(5):
            raise ValueError(f"invalid action {action}")
        reward, success = 0.0, False
        if action == INTERACT:
            if not self.has_key and self.agent == self.key:
                self.has_key = True
                reward = KEY_REWARD
            elif self.has_key and not self.door_open and self.agent == self.door:
                self.door_open = True
                reward = DOOR_REWARD
        else:
            dx, dy = MOVES[action]
            x = min(max(self.agent[0] + dx, 0), self.size - 1)
            y = min(max(self.agent[1] + dy, 0), self.size - 1)
            self.agent = (x, y)
            if self.door_open and self.agent == self.treasure:
                reward, success = TREASURE_REWARD, True
        self.t += 1
        self.done = success or self.t >= self.spec.horizon
        return StepResult(self.observation(), reward, self.done, success)


def shortest_solution(size: int, layout) -> list[int]:
    """Breadth-first search over (position, has_key, door_open); returns an optimal action list."""
    agent, key, door, treasure = (tuple(p) for p in layout)
    start = (agent, False, False)
    parent = {start: None}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        pos, has_key, door_open = state
        for a in range(5):
            nk, nd, goal = has_key, door_open, False
            if a == INTERACT:
                npos = pos
                if not has_key and pos == key:
                    nk = True
                elif has_key and not door_open and pos == door:
                    nd = True
            else:
                dx, dy = MOVES[a]
                npos = (min(max(pos[0] + dx, 0), size - 1), min(max(pos[1] + dy, 0), size - 1))
                goal = door_open and npos == treasure
            nxt = (npos, nk, nd) if not goal else ("goal",)
            if nxt in parent:
                continue
            parent[nxt] = (state, a)
            if goal:
                actions = []
                node = nxt
                while parent[node] is not None:
                    node, act = parent[node]
                    actions.append(act)
                return actions[::-1]
            queue.append(nxt)
    raise RuntimeError("treasure unreachable")
