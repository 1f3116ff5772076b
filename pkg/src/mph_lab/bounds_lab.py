"""Exact tabular check of how far upper-level transition kernels move when the
policies below them change by a bounded KL divergence.

Level ``k`` of an ``n``-level hierarchy sees states ``(s, a^{k+1}, ..., a^n)``:
an environment state plus the held choices of every level above. Tables are
stored with an explicit "upper tuple" axis:

* policy tables ``pi[s, u, a]``
* kernels ``p[s, u, a, s']`` over the next *environment* state (upper
  choices stay held across a step)

The tuple index ``u`` at level ``k-1`` is ``a^k * U_k + u_k``, i.e. the
choice of level ``k`` is the leading (slowest) factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs.tabular import random_tabular


class PreconditionError(ValueError):
    """A perturbed policy violates its per-state KL cap."""


class BisectionError(RuntimeError):
    pass


@dataclass
class PolicyTable:
    table: np.ndarray  # [S, U, A]

    def __post_init__(self):
        t = self.table
        if t.ndim != 3 or np.any(t < 0) or not np.allclose(t.sum(-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("policy table must be [S, U, A] with rows on the simplex")


@dataclass
class LevelKernel:
    table: np.ndarray  # [S, U, A, S']
    time_scale: int = 1

    def __post_init__(self):
        t = self.table
        if t.ndim != 4 or np.any(t < -1e-15) or not np.allclose(t.sum(-1), 1.0, atol=1e-10, rtol=0):
            raise ValueError("kernel must be [S, U, A, S'] with rows summing to 1")


def env_level_kernel(env_kernel: np.ndarray, n_upper: int) -> LevelKernel:
    """The worker's kernel: the environment's, repeated for every upper tuple."""
    S, A, _ = env_kernel.shape
    return LevelKernel(np.broadcast_to(env_kernel[:, None], (S, n_upper, A, S)).copy())


def marginalize_kernel(p_prev: LevelKernel, pi_prev: PolicyTable, n_actions: int) -> LevelKernel:
    """Kernel of level ``k`` from level ``k-1``'s kernel and policy.

    ``p_k(s' | (s, u), a) = sum_b p_{k-1}(s' | (s, (a, u)), b) * pi_{k-1}(b | s, (a, u))``
    where ``n_actions`` is the number of level-``k`` actions ``a``.
    """
    p, pi = p_prev.table, pi_prev.table
    S, U_prev, B, S2 = p.shape
    if pi.shape != (S, U_prev, B):
        raise ValueError(f"policy shape {pi.shape} does not match kernel {p.shape}")
    if U_prev % n_actions:
        raise ValueError(f"{n_actions} upper actions do not divide {U_prev} tuples")
    U = U_prev // n_actions
    p5 = p.reshape(S, n_actions, U, B, S2)
    pi4 = pi.reshape(S, n_actions, U, B)
    out = np.einsum("sauby,saub->suay", p5, pi4)
    return LevelKernel(out)


def induced_chain(p: LevelKernel, pi: PolicyTable) -> np.ndarray:
    """``M[u, s, s'] = sum_a pi(a | s, u) p(s' | s, u, a)``."""
    return np.einsum("suay,sua->usy", p.table, pi.table)


def timescale_kernel(p: LevelKernel, pi: PolicyTable, time_scale: int) -> LevelKernel:
    """Transition over ``T`` steps: the given action first, then ``T-1`` steps following ``pi``."""
    if time_scale < 1:
        raise ValueError("time scale must be >= 1")
    if time_scale == 1:
        return LevelKernel(p.table.copy(), 1)
    chain = induced_chain(p, pi)
    power = np.stack([np.linalg.matrix_power(m, time_scale - 1) for m in chain])
    out = np.einsum("suay,uyz->suaz", p.table, power)
    return LevelKernel(out, time_scale)


def policy_kl(pi: PolicyTable, pi_new: PolicyTable) -> np.ndarray:
    """Per-state KL(pi || pi_new), shape [S, U]."""
    p, q = pi.table, pi_new.table
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(-1)


def _softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def kl_projected_perturbation(pi: PolicyTable, delta: float, seed, max_iter: int = 100) -> PolicyTable:
    """Random logit-space perturbation scaled so the largest per-state KL lies in [0.9 delta, delta]."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    logits = np.log(pi.table)
    noise = rng.standard_normal(pi.table.shape)

    def at(scale):
        return PolicyTable(_softmax(logits + scale * noise))

    def max_kl(scale):
        return float(policy_kl(pi, at(scale)).max())

    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if max_kl(hi) >= 0.9 * delta:
            break
        lo, hi = hi, 2 * hi
    else:
        raise BisectionError("could not bracket the KL target")
    if max_kl(hi) <= delta:
        return at(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        k = max_kl(mid)
        if 0.9 * delta <= k <= delta:
            return at(mid)
        if k > delta:
            hi = mid
        else:
            lo = mid
    raise BisectionError("bisection did not converge in %d iterations" % max_iter)


def level_kernels(env_kernel: np.ndarray, policies: list[PolicyTable],
                  action_counts: list[int]) -> list[LevelKernel]:
    """One-step kernels ``p_1 .. p_n``.

    ``action_counts[k-1]`` is ``|A_k|``; ``policies[k-1]`` is ``pi_k`` for
    ``k = 1 .. n-1`` (the top policy never enters a kernel).
    """
    n = len(action_counts)
    U1 = int(np.prod(action_counts[1:])) if n > 1 else 1
    kernels = [env_level_kernel(env_kernel, U1)]
    for k in range(2, n + 1):
        kernels.append(marginalize_kernel(kernels[-1], policies[k - 2], action_counts[k - 1]))
    return kernels


def drift_bound(deltas, k: int) -> float:
    """Cap on the level-``k`` kernel change: sum of sqrt(delta_i / 2) for i < k."""
    return float(sum(np.sqrt(d / 2.0) for d in list(deltas)[:k - 1]))


def verify_drift_bound(env_kernel, policies, new_policies, action_counts, deltas) -> dict:
    """Measure ``max |p_k - p'_k|`` for every level and compare it with the cap."""
    n = len(action_counts)
    for i, (pi, pi_new) in enumerate(zip(policies, new_policies), start=1):
        worst = float(policy_kl(pi, pi_new).max())
        if worst > deltas[i - 1] * (1 + 1e-9):
            raise PreconditionError(f"level {i}: per-state KL {worst} exceeds delta {deltas[i - 1]}")
    old = level_kernels(env_kernel, policies, action_counts)
    new = level_kernels(env_kernel, new_policies, action_counts)
    levels = []
    for k in range(2, n + 1):
        drift = float(np.abs(old[k - 1].table - new[k - 1].table).max())
        bound = drift_bound(deltas, k)
        levels.append({"level": k, "drift": drift, "bound": bound, "slack": bound - drift,
                       "ok": drift <= bound})
    # first inequality of the chain: ||p_1(s'|s, .)||_inf * ||pi_1 - pi_1'||_1
    p1 = old[0].table
    l1 = np.abs(policies[0].table - new_policies[0].table).sum(-1)
    holder = float((p1.max(axis=2) * l1[:, :, None]).max())
    return {"levels": levels, "holder_level2": holder,
            "ok": all(lv["ok"] for lv in levels)}


def random_policy(rng, S, U, A, concentration=1.0) -> PolicyTable:
    return PolicyTable(rng.dirichlet(np.full(A, concentration), size=(S, U)))


def random_instance(seed, max_states=6, max_actions=4, levels=None, max_levels=3, deltas=None):
    """Draw an ergodic tabular MDP, a hierarchy of policies and KL-capped perturbations."""
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, max_states + 1))
    n = int(levels) if levels is not None else int(rng.integers(2, max_levels + 1))
    counts = [int(rng.integers(2, max_actions + 1)) for _ in range(n)]
    eps = float(rng.uniform(0.1, 0.9)) / S
    mdp = random_tabular(S, counts[0], rng, eps_erg=eps)
    deltas = list(deltas) if deltas is not None else [0.001] * (n - 1)
    if len(deltas) < n - 1:
        deltas = deltas + [deltas[-1]] * (n - 1 - len(deltas))
    policies, perturbed = [], []
    for k in range(1, n):
        U = int(np.prod(counts[k:]))
        pi = random_policy(rng, S, U, counts[k - 1])
        policies.append(pi)
        perturbed.append(kl_projected_perturbation(pi, deltas[k - 1], rng))
    return {"seed": seed, "states": S, "action_counts": counts, "deltas": deltas[:n - 1],
            "kernel": mdp.kernel, "policies": policies, "perturbed": perturbed}


def run_campaign(instances: int, seed: int = 0, levels=None, deltas=None,
                 max_states=6, max_actions=4) -> dict:
    records = []
    seeds = np.random.SeedSequence(seed).generate_state(instances)
    for s in seeds:
        inst = random_instance(int(s), max_states, max_actions, levels=levels, deltas=deltas)
        res = verify_drift_bound(inst["kernel"], inst["policies"], inst["perturbed"],
                                 inst["action_counts"], inst["deltas"])
        records.append({"seed": int(s), "states": inst["states"],
                        "action_counts": inst["action_counts"], "deltas": inst["deltas"],
                        "levels": res["levels"], "holder_level2": res["holder_level2"],
                        "ok": res["ok"]})
    violations = sum(not r["ok"] for r in records)
    return {"instances": instances, "violations": violations, "records": records,
            "drift_ratio_by_level": _ratios(records)}


def _ratios(records) -> dict:
    by_level = {}
    for r in records:
        for lv in r["levels"]:
            by_level.setdefault(lv["level"], []).append(lv["drift"] / lv["bound"])
    return {str(k): {"mean": float(np.mean(v)), "max": float(np.max(v))}
            for k, v in sorted(by_level.items())}


def live_check(mean_kls, seed: int = 0, instances_per_round: int = 5) -> list[dict]:
    """Feed realized per-round worker KLs into the two-level cap on tabular surrogates."""
    out = []
    rng = np.random.default_rng(seed)
    for rnd, kl in enumerate(mean_kls, start=1):
        if kl <= 0:
            out.append({"round": rnd, "delta": 0.0, "bound": 0.0, "max_drift": 0.0, "ok": True})
            continue
        worst = 0.0
        for _ in range(instances_per_round):
            inst = random_instance(int(rng.integers(2 ** 31)), levels=2, deltas=[kl])
            res = verify_drift_bound(inst["kernel"], inst["policies"], inst["perturbed"],
                                     inst["action_counts"], inst["deltas"])
            worst = max(worst, res["levels"][0]["drift"])
        bound = drift_bound([kl], 2)
        out.append({"round": rnd, "delta": float(kl), "bound": bound, "max_drift": worst,
                    "ok": worst <= bound})
    return out
