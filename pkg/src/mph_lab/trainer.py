"""Training orchestration: configs, rollouts, updates, evaluation and exports."""
from __future__ import annotations

import configparser
import copy
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import AGENT_KINDS, HierarchicalAgent, HierarchyConfig, LevelConfig, build_agent
from .curiosity import CuriosityConfig
from .envs import ENVS, make_env
from .hierarchy import run_episodes, slice_rollouts
from .ppo import KL_SLACK, PPOConfig
from .tensor_core import all_finite

log = logging.getLogger(__name__)

LEVEL_NAMES = {1: "worker", 2: "master"}
ABLATION_ARMS = {
    "both": (True, True),
    "worker_only": (True, False),
    "master_only": (False, True),
    "none": (False, False),
}

# Per-environment defaults: stacking-analog and pushing-analog hyperparameters.
ENV_DEFAULTS = {
    "keydoor": dict(rollouts=50, gamma=0.985, epochs=40, lr_policy=1e-4, lr_value=1e-2),
    "pointpush": dict(rollouts=32, gamma=0.98, epochs=32, lr_policy=1e-4, lr_value=3e-4),
}
DELTAS = {1: 0.002, 2: 0.001}
# the options master switches skills more slowly than the modulating masters
MASTER_TIME_SCALES = {"options": 8}


def level_name(k: int) -> str:
    return LEVEL_NAMES.get(k, f"level{k}")


@dataclass
class RunConfig:
    env: str = "keydoor"
    agent: str = "mph"
    seed: int = 0
    rounds: int = 30
    rollouts: int = 50
    eval_episodes: int = 50
    eval_every: int = 5
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    levels: dict = field(default_factory=dict)  # k -> LevelConfig

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.env not in ENVS:
            raise ValueError(f"unknown env {self.env!r}")
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.rounds < 0 or self.rollouts < 1 or self.eval_every < 1:
            raise ValueError("rounds >= 0, rollouts >= 1 and eval_every >= 1 required")

    def level_config(self, k: int) -> LevelConfig:
        return self.levels.get(k) or default_level_config(self.env, self.agent, k)


def default_level_config(env: str, agent: str, k: int) -> LevelConfig:
    d = ENV_DEFAULTS[env]
    ppo = PPOConfig(gamma=d["gamma"], delta=DELTAS.get(k, DELTAS[2]), epochs=d["epochs"],
                    lr_policy=d["lr_policy"], lr_value=d["lr_value"])
    # the flat baseline is plain PPO without an exploration bonus
    cur = CuriosityConfig(enabled=agent != "flat")
    return LevelConfig(ppo, cur)


def default_config(env: str = "keydoor", agent: str = "mph", **overrides) -> RunConfig:
    cfg = RunConfig(env=env, agent=agent, rollouts=ENV_DEFAULTS[env]["rollouts"],
                    hierarchy=HierarchyConfig(master_time_scale=MASTER_TIME_SCALES.get(agent, 4)))
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    cfg.levels = {k: default_level_config(env, agent, k) for k in (1, 2, 3)}
    return cfg


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


def _apply(obj, items, section):
    known = {f.name: f for f in fields(obj)}
    for key, raw in items:
        if key not in known:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _coerce(raw, getattr(obj, key)))
    if hasattr(obj, "__post_init__"):
        obj.__post_init__()


def _level_index(name: str) -> int:
    for k, n in LEVEL_NAMES.items():
        if n == name:
            return k
    if name.startswith("level") and name[5:].isdigit():
        return int(name[5:])
    raise ValueError(f"unknown level {name!r}")


def load_config(path=None, text: str | None = None, **overrides) -> RunConfig:
    """Read an INI-style config with dotted sections.

    ``[run]`` and ``[hierarchy]`` hold top-level and hierarchy keys;
    ``[ppo.worker]``, ``[ppo.master]``, ``[curiosity.worker]`` ... override
    per-level settings. Unset values take the per-environment defaults.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    elif text is not None:
        parser.read_string(text)
    run = dict(parser.items("run")) if parser.has_section("run") else {}
    run.update({k: str(v) for k, v in overrides.items() if v is not None})
    env = run.get("env", "keydoor")
    agent = run.get("agent", "mph")
    cfg = default_config(env, agent)
    for key, raw in run.items():
        if key in ("env", "agent"):
            continue
        if key not in {f.name for f in fields(RunConfig)} or key in ("hierarchy", "levels"):
            raise ValueError(f"unknown key {key!r} in [run]")
        setattr(cfg, key, _coerce(raw, getattr(cfg, key)))
    if parser.has_section("hierarchy"):
        _apply(cfg.hierarchy, parser.items("hierarchy"), "hierarchy")
    for section in parser.sections():
        if "." not in section:
            if section not in ("run", "hierarchy"):
                raise ValueError(f"unknown section [{section}]")
            continue
        group, level = section.split(".", 1)
        k = _level_index(level)
        lc = cfg.levels.setdefault(k, default_level_config(env, agent, k))
        if group == "ppo":
            _apply(lc.ppo, parser.items(section), section)
        elif group == "curiosity":
            _apply(lc.curiosity, parser.items(section), section)
        else:
            raise ValueError(f"unknown section [{section}]")
    cfg.validate()
    return cfg


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser["run"] = {k: str(getattr(cfg, k)) for k in
                     ("env", "agent", "seed", "rounds", "rollouts", "eval_episodes", "eval_every")}
    h = asdict(cfg.hierarchy)
    h["time_scales"] = " ".join(str(t) for t in h["time_scales"])
    parser["hierarchy"] = {k: str(v) for k, v in h.items()}
    for k in sorted(cfg.levels):
        parser[f"ppo.{level_name(k)}"] = {a: str(b) for a, b in asdict(cfg.levels[k].ppo).items()}
        parser[f"curiosity.{level_name(k)}"] = {a: str(b) for a, b in
                                                asdict(cfg.levels[k].curiosity).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def make_agent(cfg: RunConfig, seed: int | None = None) -> HierarchicalAgent:
    env = make_env(cfg.env)
    level_cfgs = {k: cfg.level_config(k) for k in range(1, 4)}
    return build_agent(cfg.agent, env.spec, cfg.hierarchy, level_cfgs,
                       seed=cfg.seed if seed is None else seed)


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    names = ("init", "envs", "collect", "update", "eval")
    return dict(zip(names, ss.spawn(len(names))))


# -- evaluation -----------------------------------------------------------

def eval_policy(agent, env_name: str, episodes: int, seed: int, layouts=None) -> dict:
    """Success rate and mean return of stochastic policies on a fixed RNG stream.

    ``agent`` needs ``spec`` and ``policies()``; it is not modified.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    ss = np.random.SeedSequence([seed, 7])
    env_seq, act_seq = ss.spawn(2)
    env_seeds = env_seq.generate_state(episodes)
    envs = [make_env(env_name, seed=int(s)) for s in env_seeds]
    trace = run_episodes(agent.spec, agent.policies(), envs, np.random.default_rng(act_seq),
                         layouts=layouts)
    return {"success": float(trace.success.mean()), "return": float(trace.returns().mean()),
            "trace": trace}


# -- training -------------------------------------------------------------

def metrics_columns(n_levels: int) -> list[str]:
    cols = ["round", "env_steps"]
    for k in range(1, n_levels + 1):
        name = level_name(k)
        cols += [f"{name}_kl", f"{name}_policy_loss", f"{name}_value_loss",
                 f"{name}_curiosity_loss", f"{name}_intrinsic"]
    return cols + ["eval_success", "eval_return"]


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class TrainResult:
    agent: HierarchicalAgent
    rows: list
    columns: list
    final_success: float
    final_return: float
    aborted: bool = False

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in self.columns])
        return buf.getvalue()


def run_training(cfg: RunConfig, out_dir=None, progress=None) -> TrainResult:
    """Collect, slice, reward, update every level, evaluate; one metrics row per round."""
    cfg.validate()
    streams = _streams(cfg.seed)
    agent = make_agent(cfg, seed=int(streams["init"].generate_state(1)[0]))
    env_seeds = streams["envs"].generate_state(cfg.rollouts)
    envs = [make_env(cfg.env, seed=int(s)) for s in env_seeds]
    collect_rng = np.random.default_rng(streams["collect"])
    update_rng = np.random.default_rng(streams["update"])
    eval_seed = int(streams["eval"].generate_state(1)[0])
    columns = metrics_columns(agent.spec.n)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(config_to_text(cfg))

    ev = eval_policy(agent, cfg.env, cfg.eval_episodes, eval_seed)
    rows = [{"round": 0, "env_steps": 0, "eval_success": ev["success"], "eval_return": ev["return"]}]
    steps = 0
    aborted = False
    last_good = agent.state_groups()
    for rnd in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        trace = run_episodes(agent.spec, agent.policies(), envs, collect_rng)
        steps += trace.env_steps
        rollouts = slice_rollouts(trace, agent.spec)
        agent.add_intrinsic(rollouts)
        stats = agent.update(rollouts, update_rng)
        row = {"round": rnd, "env_steps": steps}
        for k, s in stats.items():
            name = level_name(k)
            row[f"{name}_kl"] = s["mean_kl"]
            row[f"{name}_policy_loss"] = s["policy_loss"]
            row[f"{name}_value_loss"] = s["value_loss"]
            row[f"{name}_curiosity_loss"] = s["curiosity_loss"]
            row[f"{name}_intrinsic"] = float(np.mean(rollouts[k].intrinsic))
            limit = KL_SLACK * agent.levels[k].cfg.ppo.delta
            if s["mean_kl"] > limit + 1e-12:
                raise AssertionError(f"level {k} KL {s['mean_kl']} above {limit}")
        groups = agent.state_groups()
        if not all(all_finite(a) for a in groups.values()):
            log.error("non-finite parameters at round %d; restoring last good state", rnd)
            agent.load_groups(last_good)
            aborted = True
            rows.append(row)
            break
        last_good = copy.deepcopy(groups)
        if rnd % cfg.eval_every == 0 or rnd == cfg.rounds:
            ev = eval_policy(agent, cfg.env, cfg.eval_episodes, eval_seed)
            row["eval_success"], row["eval_return"] = ev["success"], ev["return"]
        rows.append(row)
        if progress is not None:
            progress(row, time.perf_counter() - t0)
    result = TrainResult(agent, rows, columns, rows[-1].get("eval_success", ev["success"]),
                         rows[-1].get("eval_return", ev["return"]), aborted)
    if out is not None:
        (out / "metrics.csv").write_text(result.csv_text())
        agent.save(out / "checkpoint.npz")
    return result


# -- exports --------------------------------------------------------------

def modulation_histogram(agent, trace, level: int = 2) -> np.ndarray:
    """Per-timestep activation frequency of each bit (or each skill).

    Row ``t`` averages the choice held at ``t`` over the episodes that were
    running when that choice was made, so rows are constant within a window.
    """
    spec = agent.spec
    if spec.n < 2:
        raise ValueError("flat agents have no modulation signal")
    lvl = spec.level(level)
    T = lvl.time_scale
    horizon = int(trace.lengths.max())
    table = []
    for t in range(horizon):
        start = (t // T) * T
        live = trace.activations[level][:, start]
        chosen = trace.level_actions[level][live, start]
        if lvl.kind == "categorical":
            idx = chosen[:, 0].astype(np.int64)
            table.append(np.bincount(idx, minlength=lvl.width) / len(idx))
        else:
            table.append(chosen.mean(axis=0))
    return np.array(table)


def export_modulation_histogram(agent, env_name: str, episodes: int, seed: int = 0) -> np.ndarray:
    if agent.spec.n < 2:
        raise ValueError("modulation histogram needs a hierarchical agent, not a flat one")
    ev = eval_policy(agent, env_name, episodes, seed)
    return modulation_histogram(agent, ev["trace"])


def histogram_tsv(agent, table: np.ndarray) -> str:
    lvl = agent.spec.level(2)
    prefix = "skill" if lvl.kind == "categorical" else "bit"
    lines = ["\t".join(["t"] + [f"{prefix}{i}" for i in range(table.shape[1])])]
    for t, row in enumerate(table):
        lines.append("\t".join([str(t)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def run_ablation(cfg: RunConfig, arms=tuple(ABLATION_ARMS), seeds=None, out_dir=None,
                 progress=None) -> dict:
    """Train one run per curiosity arm (and seed); everything else is shared."""
    if cfg.agent == "flat":
        raise ValueError("ablation needs a two-level agent")
    seeds = [cfg.seed] if seeds is None else list(seeds)
    report = {}
    for arm in arms:
        worker_on, master_on = ABLATION_ARMS[arm]
        finals, results = [], []
        for seed in seeds:
            run = copy.deepcopy(cfg)
            run.seed = seed
            for k, on in ((1, worker_on), (2, master_on)):
                lc = run.levels.setdefault(k, default_level_config(run.env, run.agent, k))
                lc.curiosity.enabled = on
            sub = None if out_dir is None else Path(out_dir) / arm / f"seed{seed}"
            res = run_training(run, sub, progress)
            finals.append(res.final_success)
            results.append(res)
        report[arm] = {"seeds": seeds, "final_success": finals,
                       "mean_success": float(np.mean(finals)), "std_success": float(np.std(finals)),
                       "round0_success": [r.rows[0]["eval_success"] for r in results],
                       "intrinsic_max": max(
                           max(abs(row.get(f"{level_name(k)}_intrinsic", 0.0) or 0.0)
                               for row in r.rows for k in (1, 2)) for r in results)}
    order = sorted(report, key=lambda a: report[a]["mean_success"], reverse=True)
    summary = {"arms": report, "ranking": order}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
