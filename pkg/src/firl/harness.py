"""Experiment orchestration: benchmark table, ablation grid, lifelong run.

Every public runner returns a plain dict (rows, per-seed details, threshold
checks, config fingerprint) and optionally writes CSV files, a text summary
and figures into an output directory. Episode seeds are derived from the
evaluation seed only, so different agents are always compared on identical
episode sets.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import artifacts
from . import controller as ctl
from . import demos as dm
from . import gridworld as gw
from . import ppo
from .pool import PolicyPool


@dataclasses.dataclass
class HarnessConfig:
    task: gw.TaskConfig = dataclasses.field(default_factory=gw.TaskConfig)
    subskill: ppo.PpoConfig = dataclasses.field(default_factory=ppo.PpoConfig)
    # flat baseline: the reported ~300k-step budget, exploration tuned the
    # same way but no curriculum (it trains on the target task only)
    flat: ppo.PpoConfig = dataclasses.field(
        default_factory=lambda: ppo.PpoConfig(entropy_coef=0.1, curriculum=(),
                                              eval_every=0, total_steps=300_000))
    controller: ctl.ControllerConfig = dataclasses.field(
        default_factory=ctl.ControllerConfig)
    skill_seed_base: int = 11
    firl_seeds: int = 5
    ppo_seeds: int = 2
    bc_seeds: int = 5
    firl_demos: int = 1
    bc_demos: int = 5
    bc_epochs: int = 400
    ablation_seeds: int = 5
    ablation_demo_counts: tuple[int, ...] = (1, 2, 3, 4, 5)
    eval_episodes: int = 100
    eval_seed: int = 5000
    demo_seed: int = 2000
    lifelong_min_success: float = 0.80
    cache_dir: Optional[str] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HarnessConfig":
        kwargs = dict(d)
        if "task" in kwargs:
            kwargs["task"] = gw.TaskConfig.from_dict(kwargs["task"])
        for key, klass in (("subskill", ppo.PpoConfig), ("flat", ppo.PpoConfig),
                           ("controller", ctl.ControllerConfig)):
            if key in kwargs and isinstance(kwargs[key], dict):
                sub = dict(kwargs[key])
                for tup in ("hidden_dims", "curriculum"):
                    if tup in sub and sub[tup] is not None:
                        sub[tup] = tuple(tuple(x) if isinstance(x, list) else x
                                         for x in sub[tup])
                kwargs[key] = klass(**sub)
        if "ablation_demo_counts" in kwargs:
            kwargs["ablation_demo_counts"] = tuple(kwargs["ablation_demo_counts"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "HarnessConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def fingerprint(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        ).hexdigest()[:16]

    def skill_seeds(self, task: Optional[gw.TaskConfig] = None) -> dict[str, int]:
        task = task or self.task
        return {c: self.skill_seed_base + i for i, c in enumerate(task.colors)}


# ---------------------------------------------------------------------------
# evaluation

@dataclasses.dataclass
class EvalReport:
    episodes: int
    mean_reward: float
    mean_reward_std: float
    success_rate: float          # fraction in [0, 1]
    success_rate_std: float
    per_episode: list
    fingerprint: str
    agent_label: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(agent, task: gw.TaskConfig, episodes: int = 100, seed: int = 0,
             folds: int = 5, label: str = "") -> EvalReport:
    """Greedy seeded evaluation; std is across seed-disjoint episode folds."""
    env = gw.GridWorld(task)
    ep_seeds = np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint64)
    records = []
    for i, ep_seed in enumerate(ep_seeds):
        r = env.reset(int(ep_seed))
        total, steps = 0, 0
        while not r.terminated:
            r = env.step(agent.act(env.state))
            total += r.reward
            steps += 1
        records.append({"episode": i, "seed": int(ep_seed), "reward": int(total),
                        "steps": steps, "success": bool(total == env.max_reward)})
    rewards = np.array([rec["reward"] for rec in records], dtype=float)
    succ = np.array([rec["success"] for rec in records], dtype=float)
    folds = max(1, min(folds, episodes))
    fold_rewards = [f.mean() for f in np.array_split(rewards, folds)]
    fold_succ = [f.mean() for f in np.array_split(succ, folds)]
    fp = hashlib.sha256(json.dumps(
        {"task": task.to_dict(), "episodes": episodes, "seed": seed, "label": label},
        sort_keys=True).encode()).hexdigest()[:16]
    return EvalReport(
        episodes=episodes,
        mean_reward=float(rewards.mean()),
        mean_reward_std=float(np.std(fold_rewards)),
        success_rate=float(succ.mean()),
        success_rate_std=float(np.std(fold_succ)),
        per_episode=records,
        fingerprint=fp,
        agent_label=label,
    )


class RandomAgent:
    """Uniform-random baseline."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, state) -> int:
        return int(self.rng.integers(0, gw.N_ACTIONS))


# ---------------------------------------------------------------------------
# benchmark (FIRL vs flat PPO vs BC)

def _aggregate(runs: Sequence[dict], env_steps, n_demos) -> dict:
    rewards = [r["mean_reward"] for r in runs]
    succ = [r["success_rate"] for r in runs]
    return {
        "mean_reward": float(np.mean(rewards)),
        "mean_reward_std": float(np.std(rewards)),
        "success_rate": float(np.mean(succ)),
        "success_rate_std": float(np.std(succ)),
        "env_steps": int(np.mean(env_steps)) if not isinstance(env_steps, int) else env_steps,
        "n_demos": n_demos,
        "seeds": len(runs),
    }


def run_benchmark(cfg: HarnessConfig, out_dir=None, log=print) -> dict:
    """FIRL (1 demo) vs flat PPO vs BC (5 demos), Table-2 style metrics."""
    task = cfg.task
    cache = cfg.cache_dir
    pool, skill_info = artifacts.ensure_pool(task, cfg.subskill,
                                             cfg.skill_seeds(), cache, log=None)
    pool_checksums = pool.checksums()
    if log:
        log(f"pool ready: {pool.labels} "
            f"({ {c: round(v['success_rate'], 2) for c, v in skill_info.items()} })")

    details = {"firl": [], "ppo": [], "bc": []}
    curves = {"firl": [], "ppo": [], "bc": []}

    for s in range(cfg.firl_seeds):
        demo_set = dm.expert_demo_set(task, cfg.firl_demos, cfg.demo_seed + 1000 * s)
        cc = dataclasses.replace(cfg.controller, seed=s)
        res = ctl.train_controller(pool, demo_set, cc)
        report = evaluate(ctl.FirlAgent(res.policy, pool, seed=cfg.eval_seed + s), task,
                          cfg.eval_episodes, cfg.eval_seed + s, label=f"firl-s{s}")
        details["firl"].append({
            "seed": s, "mean_reward": report.mean_reward,
            "success_rate": report.success_rate, "env_steps": res.env_steps,
            "epochs_to_plateau": res.epochs_to_plateau,
        })
        curves["firl"].append([(e, l) for e, l, *_ in res.curve])
        if log:
            log(f"firl seed {s}: reward {report.mean_reward:.2f} "
                f"success {report.success_rate:.0%} (env steps {res.env_steps})")

    for s in range(cfg.ppo_seeds):
        res = artifacts.ensure_flat_ppo(task, cfg.flat, cfg.skill_seed_base + 100 + s,
                                        cache)
        report = evaluate(ppo.PolicyAgent(res.checkpoint), task,
                          cfg.eval_episodes, cfg.eval_seed + s, label=f"ppo-s{s}")
        details["ppo"].append({
            "seed": s, "mean_reward": report.mean_reward,
            "success_rate": report.success_rate, "env_steps": res.env_steps,
        })
        curves["ppo"].append([(h["steps"], h["mean_reward"]) for h in res.history])
        if log:
            log(f"ppo seed {s}: reward {report.mean_reward:.2f} "
                f"success {report.success_rate:.0%} (env steps {res.env_steps})")

    for s in range(cfg.bc_seeds):
        demo_set = dm.expert_demo_set(task, cfg.bc_demos, cfg.demo_seed + 1000 * s)
        ckpt, curve = dm.train_bc(demo_set, dm.BcConfig(epochs=cfg.bc_epochs, seed=s))
        report = evaluate(dm.BcAgent(ckpt), task, cfg.eval_episodes,
                          cfg.eval_seed + s, label=f"bc-s{s}")
        details["bc"].append({
            "seed": s, "mean_reward": report.mean_reward,
            "success_rate": report.success_rate, "env_steps": 0,
            "train_accuracy": dm.bc_training_accuracy(ckpt, demo_set),
        })
        curves["bc"].append(curve)
        if log:
            log(f"bc seed {s}: reward {report.mean_reward:.2f} "
                f"success {report.success_rate:.0%}")

    rows = {
        "FIRL": _aggregate(details["firl"], 0, cfg.firl_demos),
        "PPO": _aggregate(details["ppo"],
                          [d["env_steps"] for d in details["ppo"]], 0),
        "BC": _aggregate(details["bc"], 0, cfg.bc_demos),
    }
    checks = {
        "firl_success_rate>=0.90": rows["FIRL"]["success_rate"] >= 0.90,
        "firl_mean_reward>=2.6": rows["FIRL"]["mean_reward"] >= 2.6,
        "firl_env_steps==0": rows["FIRL"]["env_steps"] == 0,
        "ppo_success_rate==0": rows["PPO"]["success_rate"] == 0.0,
        "ppo_mean_reward_in_[0.5,1.3]": 0.5 <= rows["PPO"]["mean_reward"] <= 1.3,
        "bc_success_rate<=0.02": rows["BC"]["success_rate"] <= 0.02,
        "bc_mean_reward<=0.2": rows["BC"]["mean_reward"] <= 0.2,
    }
    assert pool.checksums() == pool_checksums  # frozen-pool invariant
    result = {"rows": rows, "details": details, "curves": curves,
              "skills": skill_info, "checks": checks,
              "fingerprint": cfg.fingerprint()}
    if out_dir is not None:
        _write_benchmark(result, cfg, Path(out_dir))
    return result


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _write_benchmark(result: dict, cfg: HarnessConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for method, runs in result["details"].items():
        for r in runs:
            per_seed.append({"method": method, **r})
    _write_csv(out / "benchmark_runs.csv",
               ["method", "seed", "mean_reward", "success_rate", "env_steps",
                "epochs_to_plateau", "train_accuracy"], per_seed)
    summary_rows = [{"method": m, **row} for m, row in result["rows"].items()]
    _write_csv(out / "benchmark_summary.csv",
               ["method", "mean_reward", "mean_reward_std", "success_rate",
                "success_rate_std", "env_steps", "n_demos", "seeds"], summary_rows)
    lines = [f"config fingerprint: {result['fingerprint']}", ""]
    lines.append(f"{'method':8s} {'avg reward':>16s} {'success %':>14s} "
                 f"{'env steps':>10s} {'demos':>6s}")
    for m, row in result["rows"].items():
        lines.append(f"{m:8s} {row['mean_reward']:8.2f} ± {row['mean_reward_std']:<5.2f} "
                     f"{100 * row['success_rate']:7.1f} ± {100 * row['success_rate_std']:<4.1f} "
                     f"{row['env_steps']:>10d} {row['n_demos']:>6d}")
    lines.append("")
    for name, ok in result["checks"].items():
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    with open(out / "benchmark.json", "w") as f:
        json.dump({k: v for k, v in result.items() if k != "curves"}, f, indent=2)
    from . import plots
    plots.render_benchmark(result, out)


# ---------------------------------------------------------------------------
# ablation grid

ABLATION_MODES = ("null", "R", "O", "O+R")


def run_ablation(cfg: HarnessConfig, out_dir=None,
                 modes: Sequence[str] = ABLATION_MODES,
                 demo_counts: Optional[Sequence[int]] = None, log=print) -> dict:
    """Train and evaluate every (mode, demo count) cell over several seeds."""
    task = cfg.task
    demo_counts = tuple(demo_counts or cfg.ablation_demo_counts)
    pool, _ = artifacts.ensure_pool(task, cfg.subskill, cfg.skill_seeds(),
                                    cfg.cache_dir, log=None)
    pool_checksums = pool.checksums()
    cells = {}
    runs_rows = []
    curves = {}
    for mode in modes:
        for n in demo_counts:
            runs = []
            for s in range(cfg.ablation_seeds):
                demo_set = dm.expert_demo_set(task, n, cfg.demo_seed + 1000 * s)
                cc = dataclasses.replace(cfg.controller, mode=mode, seed=s)
                res = ctl.train_controller(pool, demo_set, cc)
                report = evaluate(ctl.FirlAgent(res.policy, pool, seed=cfg.eval_seed + s), task,
                                  cfg.eval_episodes, cfg.eval_seed + s,
                                  label=f"{mode}-n{n}-s{s}")
                run = {"mode": mode, "n_demos": n, "seed": s,
                       "mean_reward": report.mean_reward,
                       "success_rate": report.success_rate,
                       "epochs_to_plateau": res.epochs_to_plateau,
                       "final_loss": res.final_loss,
                       "env_steps": res.env_steps}
                runs.append(run)
                runs_rows.append(run)
                if s == 0:
                    curves[(mode, n)] = [(e, l) for e, l, *_ in res.curve]
            agg = _aggregate(runs, 0, n)
            agg["epochs_to_plateau"] = float(np.mean([r["epochs_to_plateau"] for r in runs]))
            cells[(mode, n)] = agg
            if log:
                log(f"ablation {mode:4s} n={n}: reward {agg['mean_reward']:.2f} "
                    f"success {agg['success_rate']:.0%} "
                    f"epochs {agg['epochs_to_plateau']:.0f}")

    checks = {}
    if 1 in demo_counts:
        r = {m: cells[(m, 1)]["mean_reward"] for m in modes if (m, 1) in cells}
        if {"O+R", "O", "R", "null"} <= set(r):
            checks["reward_order_O+R>O"] = r["O+R"] > r["O"]
            checks["reward_order_O>R"] = r["O"] > r["R"]
            checks["reward_order_O>null"] = r["O"] > r["null"]
            checks["null_success<0.50"] = cells[("null", 1)]["success_rate"] < 0.50
            checks["epochs_O+R<O"] = (cells[("O+R", 1)]["epochs_to_plateau"]
                                      < cells[("O", 1)]["epochs_to_plateau"])
    if ("O+R", 1) in cells and ("O+R", 5) in cells:
        checks["demo_count_flatness<=0.3"] = abs(
            cells[("O+R", 1)]["mean_reward"] - cells[("O+R", 5)]["mean_reward"]) <= 0.3

    assert pool.checksums() == pool_checksums  # frozen-pool invariant
    result = {"cells": {f"{m}|{n}": v for (m, n), v in cells.items()},
              "runs": runs_rows, "checks": checks,
              "curves": {f"{m}|{n}": v for (m, n), v in curves.items()},
              "modes": list(modes), "demo_counts": list(demo_counts),
              "fingerprint": cfg.fingerprint()}
    if out_dir is not None:
        _write_ablation(result, Path(out_dir))
    return result


def _write_ablation(result: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "ablation_runs.csv",
               ["mode", "n_demos", "seed", "mean_reward", "success_rate",
                "epochs_to_plateau", "final_loss", "env_steps"], result["runs"])
    cell_rows = []
    for key, v in result["cells"].items():
        mode, n = key.split("|")
        cell_rows.append({"mode": mode, "n_demos": int(n), **v})
    _write_csv(out / "ablation_cells.csv",
               ["mode", "n_demos", "mean_reward", "mean_reward_std", "success_rate",
                "success_rate_std", "epochs_to_plateau", "seeds"], cell_rows)
    lines = [f"config fingerprint: {result['fingerprint']}", ""]
    for name, ok in result["checks"].items():
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    with open(out / "ablation.json", "w") as f:
        json.dump(result, f, indent=2)
    from . import plots
    plots.render_ablation(result, out)


# ---------------------------------------------------------------------------
# lifelong scenario

def run_lifelong(cfg: HarnessConfig, out_dir=None, new_color: str = "yellow",
                 log=print) -> dict:
    """Add a fourth skill, extend the task by one stage, retrain only the
    controller on one new demo; original checkpoints must stay byte-identical."""
    task = cfg.task
    pool3, _ = artifacts.ensure_pool(task, cfg.subskill, cfg.skill_seeds(),
                                     cfg.cache_dir, log=None)
    checksums_before = pool3.checksums()

    demo3 = dm.expert_demo_set(task, 1, cfg.demo_seed)
    res3 = ctl.train_controller(pool3, demo3, dataclasses.replace(cfg.controller, seed=0))
    before = evaluate(ctl.FirlAgent(res3.policy, pool3, seed=cfg.eval_seed), task,
                      cfg.eval_episodes, cfg.eval_seed, label="lifelong-before")
    if log:
        log(f"before (3 doors): reward {before.mean_reward:.2f} "
            f"success {before.success_rate:.0%}")

    ext_task = dataclasses.replace(
        task, colors=task.colors + (new_color,),
        target_sequence=task.target_sequence + (new_color,))
    new_skill = artifacts.ensure_subskill(
        ext_task, new_color, cfg.subskill,
        cfg.skill_seed_base + len(task.colors), cfg.cache_dir)
    pool4 = pool3.add_skill(new_skill.checkpoint, f"open-{new_color}")

    demo4 = dm.expert_demo_set(ext_task, 1, cfg.demo_seed + 50_000)
    res4 = ctl.train_controller(pool4, demo4, dataclasses.replace(cfg.controller, seed=0))
    after = evaluate(ctl.FirlAgent(res4.policy, pool4, seed=cfg.eval_seed + 50), ext_task,
                     cfg.eval_episodes, cfg.eval_seed + 50, label="lifelong-after")
    if log:
        log(f"after (4 doors): reward {after.mean_reward:.2f} "
            f"success {after.success_rate:.0%}")

    checks = {
        "original_checksums_unchanged": pool3.checksums() == checksums_before
        and pool4.checksums()[:3] == checksums_before,
        "controller_env_steps==0": res4.env_steps == 0,
        f"after_success>={cfg.lifelong_min_success}": after.success_rate
        >= cfg.lifelong_min_success,
    }
    result = {
        "before": {"mean_reward": before.mean_reward,
                   "success_rate": before.success_rate, "stages": len(task.colors)},
        "after": {"mean_reward": after.mean_reward,
                  "success_rate": after.success_rate,
                  "stages": len(ext_task.colors),
                  "new_skill_success": new_skill.success_rate},
        "checks": checks,
        "fingerprint": cfg.fingerprint(),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "lifelong.csv",
                   ["phase", "stages", "mean_reward", "success_rate"],
                   [{"phase": "before", **result["before"]},
                    {"phase": "after", **result["after"]}])
        lines = [f"config fingerprint: {result['fingerprint']}", ""]
        for name, ok in checks.items():
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
        with open(out / "lifelong.json", "w") as f:
            json.dump(result, f, indent=2)
        from . import plots
        plots.render_lifelong(result, out)
    return result
