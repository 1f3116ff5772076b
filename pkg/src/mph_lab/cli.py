"""``mph-lab`` command line: train, eval, histogram, ablate, bounds."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import bounds_lab
from .baselines import AGENT_KINDS
from .envs import ENVS
from .trainer import (ABLATION_ARMS, eval_policy, export_modulation_histogram, histogram_tsv,
                      load_config, make_agent, run_ablation, run_training)


def _config(args):
    return load_config(args.config, seed=args.seed, agent=args.agent, env=args.env,
                       rounds=getattr(args, "rounds", None))


def _load_run(args):
    """Rebuild an agent from a checkpoint plus the config saved next to it."""
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "checkpoint.npz"
    if not ckpt.exists():
        raise SystemExit(f"no checkpoint at {ckpt}")
    config = args.config or ckpt.parent / "config.ini"
    cfg = load_config(config if Path(config).exists() else None, seed=args.seed,
                      agent=args.agent, env=args.env)
    agent = make_agent(cfg)
    agent.load(ckpt)
    return cfg, agent


def cmd_train(args) -> int:
    cfg = _config(args)

    def progress(row, dt):
        ev = f" eval={row['eval_success']:.2f}" if "eval_success" in row else ""
        print(f"round {row['round']:4d} steps {row['env_steps']:8d} {dt:5.1f}s{ev}", flush=True)

    res = run_training(cfg, args.out, None if args.quiet else progress)
    print(json.dumps({"final_success": res.final_success, "final_return": res.final_return,
                      "aborted": res.aborted, "out": str(args.out)}))
    return 1 if res.aborted else 0


def cmd_eval(args) -> int:
    cfg, agent = _load_run(args)
    ev = eval_policy(agent, cfg.env, args.episodes, cfg.seed)
    report = {"env": cfg.env, "agent": cfg.agent, "episodes": args.episodes,
              "success": ev["success"], "return": ev["return"]}
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "eval.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report))
    return 0


def cmd_histogram(args) -> int:
    cfg, agent = _load_run(args)
    try:
        table = export_modulation_histogram(agent, cfg.env, args.episodes, cfg.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.out).mkdir(parents=True, exist_ok=True)
    path = Path(args.out) / "histogram.tsv"
    path.write_text(histogram_tsv(agent, table))
    print(path)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    summary = run_ablation(cfg, args.arms, seeds, args.out)
    for arm in summary["ranking"]:
        print(f"{arm:12s} {summary['arms'][arm]['mean_success']:.3f}")
    return 0


def _metric_kls(path):
    with open(path) as fh:
        return [float(r["worker_kl"]) for r in csv.DictReader(fh) if r.get("worker_kl")]


def cmd_bounds(args) -> int:
    seed = args.seed if args.seed is not None else 0
    deltas = [args.delta] * 2
    report = bounds_lab.run_campaign(args.instances, seed=seed, levels=args.levels, deltas=deltas)
    if not args.records:
        report.pop("records")
    report["bound_two_level"] = bounds_lab.drift_bound([args.delta], 2)
    if args.metrics:
        report["live"] = bounds_lab.live_check(_metric_kls(args.metrics), seed=seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    path = Path(args.out) / "bounds_report.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"{report['violations']} violations in {args.instances} instances -> {path}")
    live_ok = all(r["ok"] for r in report.get("live", []))
    return 0 if report["violations"] == 0 and live_ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--agent", choices=AGENT_KINDS)
    common.add_argument("--env", choices=sorted(ENVS))
    common.add_argument("--out", type=Path, default=Path("runs/latest"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mph-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", parents=[common], help="train an agent")
    tr.add_argument("--rounds", type=int)
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a checkpoint"),
                              ("histogram", cmd_histogram, "export the modulation histogram")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--checkpoint", type=Path, help="defaults to OUT/checkpoint.npz")
        sp.add_argument("--episodes", type=int, default=100)
        sp.set_defaults(func=func)

    ab = sub.add_parser("ablate", parents=[common], help="curiosity ablation")
    ab.add_argument("--rounds", type=int)
    ab.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    ab.add_argument("--arms", nargs="+", choices=list(ABLATION_ARMS), default=list(ABLATION_ARMS))
    ab.set_defaults(func=cmd_ablate)

    bd = sub.add_parser("bounds", parents=[common], help="tabular kernel-drift campaign")
    bd.add_argument("--instances", type=int, default=1000)
    bd.add_argument("--levels", type=int, choices=(2, 3))
    bd.add_argument("--delta", type=float, default=0.001)
    bd.add_argument("--metrics", type=Path, help="metrics.csv whose worker KLs feed a live check")
    bd.add_argument("--records", action="store_true", help="keep per-instance records")
    bd.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
