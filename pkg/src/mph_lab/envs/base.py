from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UsageError(RuntimeError):
    """Environment used out of order, e.g. stepped after ``done``."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_kind: str  # "discrete" or "continuous"
    action_dim: int  # number of choices, or vector width
    horizon: int
    reward_kind: str = "sparse"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.action_kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {self.action_kind!r}")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    success: bool
