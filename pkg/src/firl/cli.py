"""Command-line entry points.

Training commands stream CSV stats to stdout; report commands (bench,
ablate, lifelong) write CSV files, a plain-text summary and PNG figures
into --out, and exit nonzero if any acceptance threshold check fails.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import artifacts
from . import controller as ctl
from . import demos as dm
from . import gridworld as gw
from . import harness
from . import nnet
from . import ppo
from .errors import FirlError
from .pool import load_pool, save_pool, PolicyPool, SkillEntry


def _load_task(path) -> gw.TaskConfig:
    return gw.TaskConfig.load(path) if path else gw.TaskConfig()


def _load_harness_config(path) -> harness.HarnessConfig:
    return harness.HarnessConfig.load(path) if path else harness.HarnessConfig()


def cmd_train_skill(args) -> int:
    task = _load_task(args.config)
    cfg = ppo.PpoConfig(**json.load(open(args.ppo_config))) if args.ppo_config \
        else ppo.PpoConfig()
    print("iteration,steps,mean_reward,success_rate,clip_frac")

    def log(row):
        print(f"{row['iteration']},{row['steps']},{row['mean_reward']:.4f},"
              f"{row['success_rate']:.4f},{row['clip_frac']:.4f}", flush=True)

    result = ppo.train_subskill(args.color, task, cfg, args.seed, log=log)
    result.checkpoint.save(args.out)
    print(f"# saved {args.out} success_rate={result.success_rate:.3f} "
          f"env_steps={result.env_steps}", file=sys.stderr)
    if not result.reached_threshold:
        print(f"# TRAINING FAILURE: success {result.success_rate:.1%} below "
              f"{cfg.success_threshold:.0%}", file=sys.stderr)
        return 1
    return 0


def _demo_set_from(path_str: str) -> dm.DemoSet:
    path = Path(path_str)
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise FirlError(f"no .jsonl demo files in {path}")
        trajectories = []
        for f in files:
            trajectories.extend(dm.ingest(f).trajectories)
        return dm.DemoSet(trajectories)
    return dm.ingest(path)


def cmd_train_controller(args) -> int:
    pool = load_pool(args.pool)
    demo_set = _demo_set_from(args.demos)
    config = ctl.ControllerConfig(mode=args.mode, base_weight=args.base_weight,
                                  seed=args.seed)
    task = demo_set.task
    eval_fn = None
    if args.eval_episodes > 0:
        def eval_fn(policy):
            report = harness.evaluate(ctl.FirlAgent(policy, pool), task,
                                      episodes=args.eval_episodes,
                                      seed=args.eval_seed)
            return report.success_rate

    result = ctl.train_controller(pool, demo_set, config, eval_fn=eval_fn,
                                  eval_every=args.eval_every)
    print("epoch,loss,eval_success_rate")
    for row in result.curve:
        if len(row) == 3:
            print(f"{row[0]},{row[1]:.6g},{row[2]:.4f}")
        else:
            print(f"{row[0]},{row[1]:.6g},")
    result.policy.to_checkpoint().save(args.out)
    print(f"# saved {args.out} final_loss={result.final_loss:.3g} "
          f"epochs_to_plateau={result.epochs_to_plateau} "
          f"env_steps={result.env_steps}", file=sys.stderr)
    return 0


def cmd_record_demo(args) -> int:
    task = _load_task(args.task)
    if args.mode != "scripted":
        print("only --mode scripted is supported headless; human demos are "
              "recorded through the studio", file=sys.stderr)
        return 2
    ds = dm.expert_demo_set(task, args.episodes, args.seed)
    dm.write_demos(ds, args.out)
    st = ds.stats()
    print(f"wrote {args.out}: {st['n_trajectories']} episode(s), "
          f"mean length {st['mean_length']:.1f}, rewards {st['total_reward']}")
    return 0


def cmd_validate_demo(args) -> int:
    try:
        ds = dm.ingest(args.file)
    except FirlError as e:
        print(f"INVALID: {e}", file=sys.stderr)
        return 1
    st = ds.stats()
    print(f"OK: {st['n_trajectories']} trajectories, mean length "
          f"{st['mean_length']:.1f}, rewards {st['total_reward']}")
    return 0


def cmd_train_pool(args) -> int:
    task = _load_task(args.config)
    hc = _load_harness_config(args.harness_config)
    pool, info = artifacts.ensure_pool(task, hc.subskill, hc.skill_seeds(task),
                                       hc.cache_dir, log=None)
    save_pool(pool, args.out)
    for color, meta in info.items():
        print(f"{color}: success_rate={meta['success_rate']:.3f} "
              f"env_steps={meta['env_steps']}")
    print(f"saved pool ({pool.k} skills) to {args.out}")
    return 0


def _finish_report(result: dict, out_dir) -> int:
    failed = [name for name, ok in result["checks"].items() if not ok]
    for name, ok in result["checks"].items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    if out_dir:
        print(f"reports written to {out_dir}")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    cfg = _load_harness_config(args.config)
    result = harness.run_benchmark(cfg, out_dir=args.out)
    return _finish_report(result, args.out)


def cmd_ablate(args) -> int:
    cfg = _load_harness_config(args.config)
    demo_counts = [int(x) for x in args.demo_counts.split(",")] if args.demo_counts else None
    modes = args.modes.split(",") if args.modes else harness.ABLATION_MODES
    result = harness.run_ablation(cfg, out_dir=args.out, modes=modes,
                                  demo_counts=demo_counts)
    return _finish_report(result, args.out)


def cmd_lifelong(args) -> int:
    cfg = _load_harness_config(args.config)
    result = harness.run_lifelong(cfg, out_dir=args.out)
    return _finish_report(result, args.out)


def cmd_serve(args) -> int:
    from . import gateway
    gateway.serve(port=args.port, pool_dir=args.pool, demos_dir=args.demos,
                  static_dir=args.static, out_dir=args.out, task_file=args.task)
    return 0


def cmd_default_config(args) -> int:
    cfg = harness.HarnessConfig()
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=list)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="firl",
                                description="few-shot imitation over a frozen skill pool")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-skill", help="PPO-train one sub-skill policy")
    s.add_argument("--color", required=True)
    s.add_argument("--config", help="task config JSON")
    s.add_argument("--ppo-config", help="PPO hyperparameter JSON")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_skill)

    s = sub.add_parser("train-pool", help="train/load all task skills into a pool dir")
    s.add_argument("--config", help="task config JSON")
    s.add_argument("--harness-config", help="harness config JSON (seeds, budgets)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_pool)

    s = sub.add_parser("train-controller", help="few-shot train the FIRL controller")
    s.add_argument("--pool", required=True)
    s.add_argument("--demos", required=True, help="demo file or directory")
    s.add_argument("--mode", default="O+R", choices=sorted(ctl.MODES))
    s.add_argument("--base-weight", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eval-every", type=int, default=10)
    s.add_argument("--eval-episodes", type=int, default=20,
                   help="0 disables the evaluation column")
    s.add_argument("--eval-seed", type=int, default=9000)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_controller)

    s = sub.add_parser("record-demo", help="record demonstrations")
    s.add_argument("--mode", default="scripted")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--episodes", type=int, default=1)
    s.add_argument("--task", help="task config JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_record_demo)

    s = sub.add_parser("validate-demo", help="validate a demo file (incl. replay)")
    s.add_argument("file")
    s.set_defaults(fn=cmd_validate_demo)

    for name, fn, hlp in (("bench", cmd_bench, "reproduce the benchmark table"),
                          ("lifelong", cmd_lifelong, "lifelong skill-addition scenario")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--config", help="harness config JSON")
        s.add_argument("--out", default=f"runs/{name}")
        s.set_defaults(fn=fn)

    s = sub.add_parser("ablate", help="run the ablation grid")
    s.add_argument("--config", help="harness config JSON")
    s.add_argument("--out", default="runs/ablate")
    s.add_argument("--demo-counts", help="comma list, e.g. 1,3,5")
    s.add_argument("--modes", help="comma list from null,R,O,O+R")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("serve", help="start the studio gateway")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--pool")
    s.add_argument("--demos", default="demos")
    s.add_argument("--static")
    s.add_argument("--out")
    s.add_argument("--task", help="task config JSON")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("default-config", help="print or write the default harness config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_default_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FirlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
