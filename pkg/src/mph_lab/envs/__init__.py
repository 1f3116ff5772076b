from .base import EnvSpec, StepResult, UsageError
from .keydoor import KeyDoorEnv, shortest_solution
from .pointpush import PointPushEnv, scripted_push_action
from .tabular import TabularMDP, random_tabular, stationary_distribution

ENVS = {"keydoor": KeyDoorEnv, "pointpush": PointPushEnv}


def make_env(name: str, seed=None, **kwargs):
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None
    return cls(seed=seed, **kwargs)


__all__ = ["EnvSpec", "StepResult", "UsageError", "KeyDoorEnv", "PointPushEnv",
           "TabularMDP", "random_tabular", "stationary_distribution", "shortest_solution",
           "scripted_push_action", "make_env", "ENVS"]
