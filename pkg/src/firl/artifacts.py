"""Disk cache for expensive training artifacts (sub-skills, flat baseline).

Training is deterministic given (task, config, seed), so artifacts are keyed
by a fingerprint of exactly those inputs and reused across runs and test
sessions. The cache directory is FIRL_CACHE_DIR or ./.firl-cache.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from . import gridworld as gw
from . import nnet, ppo
from .errors import CheckpointError, TrainingError
from .pool import PolicyPool, SkillEntry


def default_cache_dir() -> Path:
    return Path(os.environ.get("FIRL_CACHE_DIR", ".firl-cache"))


def _fingerprint(kind: str, task: gw.TaskConfig, config: ppo.PpoConfig,
                 extra: dict) -> str:
    payload = {
        "kind": kind,
        "protocol": ppo.PROTOCOL_VERSION,
        "task": task.to_dict(),
        "config": dataclasses.asdict(config),
        **extra,
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=list).encode()).hexdigest()[:16]


def _train_and_store(path: Path, train_fn, label: str) -> ppo.TrainResult:
    path.parent.mkdir(parents=True, exist_ok=True)
    result = train_fn()
    result.checkpoint.save(path)
    history_path = path.with_suffix(".history.json")
    with open(history_path, "w") as f:
        json.dump({"label": label, "env_steps": result.env_steps,
                   "success_rate": result.success_rate,
                   "mean_reward": result.mean_reward,
                   "reached_threshold": result.reached_threshold,
                   "history": result.history}, f)
    return result


def _load_cached(path: Path) -> Optional[ppo.TrainResult]:
    if not path.exists():
        return None
    try:
        ckpt = nnet.PolicyCheckpoint.load(path)
        with open(path.with_suffix(".history.json")) as f:
            extra = json.load(f)
    except (CheckpointError, OSError, json.JSONDecodeError):
        return None
    return ppo.TrainResult(
        checkpoint=ckpt, history=extra["history"], env_steps=extra["env_steps"],
        success_rate=extra["success_rate"], mean_reward=extra["mean_reward"],
        reached_threshold=extra["reached_threshold"])


SELECT_SUCCESS = 0.96   # selection bar on min(held-out, hard-start) success


def _hard_start_success(task: gw.TaskConfig, color: str,
                        ckpt: nnet.PolicyCheckpoint, episodes: int = 100) -> float:
    """Sampled-action success when every episode starts next to an opened
    distractor: the distribution (and executor) a skill faces mid-task."""
    code = gw.color_code(color)
    env = ppo.SubskillTrainingEnv(task, code, relocate_prob=1.0, min_open=1)
    rng = np.random.default_rng(424243)
    seeds = np.random.SeedSequence(424242).generate_state(episodes, dtype=np.uint64)
    wins = 0
    for ep_seed in seeds:
        r = env.reset(int(ep_seed))
        total = 0
        while not r.terminated:
            probs = nnet.forward(ckpt.spec, ckpt.params, gw.featurize_raw(r.raw_obs))
            r = env.step(nnet.sample_categorical(probs, rng))
            total += r.reward
        wins += total == 1
    return wins / episodes


def ensure_subskill(task: gw.TaskConfig, color: str, config: ppo.PpoConfig,
                    seed: int, cache_dir: Optional[Path] = None,
                    log=None, require_threshold: bool = True,
                    select_seeds: int = 8) -> ppo.TrainResult:
    """Train (or load) one sub-skill; raises if it misses its threshold.

    Up to select_seeds candidate seeds (seed, seed+1000, ...) are trained
    until one clears SELECT_SUCCESS on both the held-out sub-skill episodes
    and the hard-start (mid-task style) distribution; otherwise the best
    candidate wins. Selection is deterministic and every candidate is cached.
    """
    cache = Path(cache_dir) if cache_dir else default_cache_dir()
    best: Optional[ppo.TrainResult] = None
    best_score = -1.0
    for attempt in range(max(1, select_seeds)):
        cand_seed = seed + 1000 * attempt
        key = _fingerprint("subskill", task, config, {"color": color, "seed": cand_seed})
        path = cache / "skills" / f"{color}-{cand_seed}-{key}.ckpt"
        result = _load_cached(path)
        if result is None:
            result = _train_and_store(
                path, lambda: ppo.train_subskill(color, task, config, cand_seed, log=log),
                f"open-{color}")
        hard = _sidecar_hard_success(path, task, color, result)
        score = min(result.success_rate, hard)
        if score > best_score:
            best, best_score = result, score
        if best_score >= SELECT_SUCCESS:
            break
    if require_threshold and not best.reached_threshold:
        raise TrainingError(
            f"sub-skill open-{color} reached only {best.success_rate:.0%} success "
            f"within {best.env_steps} steps across {select_seeds} seeds")
    return best


def _sidecar_hard_success(path: Path, task: gw.TaskConfig, color: str,
                          result: ppo.TrainResult) -> float:
    """Hard-start score, computed once and memoized in the history sidecar."""
    sidecar = path.with_suffix(".history.json")
    try:
        with open(sidecar) as f:
            extra = json.load(f)
    except (OSError, json.JSONDecodeError):
        extra = {}
    if "hard_success_sampled" not in extra:
        extra["hard_success_sampled"] = _hard_start_success(task, color, result.checkpoint)
        with open(sidecar, "w") as f:
            json.dump(extra, f)
    return float(extra["hard_success_sampled"])


def ensure_pool(task: gw.TaskConfig, config: ppo.PpoConfig, seeds: dict[str, int],
                cache_dir: Optional[Path] = None, log=None) -> tuple[PolicyPool, dict]:
    """Pool with one trained skill per task color, in task color order."""
    entries = []
    info = {}
    for i, color in enumerate(task.colors):
        result = ensure_subskill(task, color, config, seeds[color], cache_dir, log=log)
        entries.append(SkillEntry(skill_id=i, label=f"open-{color}",
                                  checkpoint=result.checkpoint))
        info[color] = {"env_steps": result.env_steps,
                       "success_rate": result.success_rate}
    return PolicyPool(tuple(entries)), info


def ensure_flat_ppo(task: gw.TaskConfig, config: ppo.PpoConfig, seed: int,
                    cache_dir: Optional[Path] = None, log=None) -> ppo.TrainResult:
    """Train (or load) the flat full-task PPO baseline."""
    cache = Path(cache_dir) if cache_dir else default_cache_dir()
    key = _fingerprint("flat", task, config, {"seed": seed})
    path = cache / "flat" / f"ppo-{seed}-{key}.ckpt"
    result = _load_cached(path)
    if result is None:
        result = _train_and_store(
            path, lambda: ppo.train_flat_ppo(task, config, seed, log=log), "flat-ppo")
    return result
