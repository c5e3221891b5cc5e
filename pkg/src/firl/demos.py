"""Demonstration data: scripted expert, demo files, ingestion, BC baseline.

A demonstration trajectory is the per-step record (raw_obs, min_obs, action,
reward) of one successful episode. Files are line-delimited JSON so they are
diff-able and replay-verifiable: ingestion re-simulates every trajectory from
its seed and rejects the file on any observation or reward mismatch, and on
any negative demo reward (expert demonstrations never trigger penalties).

The scripted expert navigates breadth-first to the next door in the target
sequence, bumps into it once to face it, then opens it. Human demos recorded
through the gateway use the same format and are interchangeable.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import gridworld as gw
from . import nnet
from .errors import DemoError, TrainingError

DEMO_FORMAT = "firl-demos"
DEMO_VERSION = 1

_DELTA_TO_MOVE = {
    (0, -1): gw.Action.MOVE_UP,
    (0, 1): gw.Action.MOVE_DOWN,
    (-1, 0): gw.Action.MOVE_LEFT,
    (1, 0): gw.Action.MOVE_RIGHT,
}


@dataclass
class DemoStep:
    raw_obs: np.ndarray
    min_obs: np.ndarray
    action: int
    reward: int
    t: int  # 1-based step index


@dataclass
class Trajectory:
    steps: list[DemoStep]
    seed: int
    task: gw.TaskConfig
    source: str = "scripted"

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def total_reward(self) -> int:
        return sum(s.reward for s in self.steps)


@dataclass
class DemoSet:
    trajectories: list[Trajectory]

    def __post_init__(self):
        if not self.trajectories:
            raise DemoError("a demo set needs at least one trajectory")
        tasks = {json.dumps(t.task.to_dict(), sort_keys=True) for t in self.trajectories}
        if len(tasks) != 1:
            raise DemoError("all trajectories in a demo set must share one task config")

    @property
    def N(self) -> int:
        return len(self.trajectories)

    @property
    def task(self) -> gw.TaskConfig:
        return self.trajectories[0].task

    def stats(self) -> dict:
        lengths = [t.T for t in self.trajectories]
        return {
            "n_trajectories": self.N,
            "mean_length": float(np.mean(lengths)),
            "total_reward": [t.total_reward for t in self.trajectories],
        }


# ---------------------------------------------------------------------------
# scripted expert

def _bfs_first_move(state: gw.GridState, goals: set) -> Optional[tuple[int, int]]:
    """First move of a shortest path from the agent to any goal cell,
    walking only empty cells. None if unreachable."""
    start = state.agent_pos
    if start in goals:
        return (0, 0)
    parent = {start: None}
    queue = deque([start])
    while queue:
        pos = queue.popleft()
        for delta in _DELTA_TO_MOVE:
            nxt = (pos[0] + delta[0], pos[1] + delta[1])
            if nxt in parent:
                continue
            x, y = nxt
            if not (0 <= x < state.width and 0 <= y < state.height):
                continue
            if state.cells[y, x] != gw.CELL_EMPTY:
                continue
            parent[nxt] = pos
            if nxt in goals:
                while parent[nxt] != start:
                    nxt = parent[nxt]
                return (nxt[0] - start[0], nxt[1] - start[1])
            queue.append(nxt)
    return None


def expert_action(state: gw.GridState) -> gw.Action:
    """Greedy next action of the scripted expert for any mid-episode state."""
    target_color = state.target_sequence[state.stage]
    door = next(d for d in state.doors if d.color == target_color)
    dx, dy = door.pos[0] - state.agent_pos[0], door.pos[1] - state.agent_pos[1]
    if abs(dx) + abs(dy) == 1:
        if state.last_move_dir == (dx, dy):
            return gw.Action.OPEN
        return _DELTA_TO_MOVE[(dx, dy)]  # bump to face the door first
    goals = set()
    for delta in _DELTA_TO_MOVE:
        x, y = door.pos[0] + delta[0], door.pos[1] + delta[1]
        if 0 <= x < state.width and 0 <= y < state.height and state.cells[y, x] == gw.CELL_EMPTY:
            goals.add((x, y))
    move = _bfs_first_move(state, goals)
    if move is None:
        raise DemoError(
            f"unsolvable layout: {gw.color_name(target_color)} door at {door.pos} unreachable")
    return _DELTA_TO_MOVE[move]


class ExpertAgent:
    """Oracle agent for evaluation; plans with expert_action each step."""

    def act(self, state: gw.GridState) -> int:
        return int(expert_action(state))


def scripted_expert(task: gw.TaskConfig, seed: int, source: str = "scripted") -> Trajectory:
    """Roll one expert episode; the result always earns the maximum reward."""
    env = gw.GridWorld(task)
    result = env.reset(seed)
    steps: list[DemoStep] = []
    while not result.terminated:
        if len(steps) >= task.horizon:
            raise DemoError("expert exceeded the episode horizon; layout pathological")
        obs_before = result
        action = expert_action(env.state)
        result = env.step(action)
        steps.append(DemoStep(
            raw_obs=obs_before.raw_obs.copy(),
            min_obs=obs_before.min_obs.copy(),
            action=int(action),
            reward=int(result.reward),
            t=len(steps) + 1,
        ))
    traj = Trajectory(steps=steps, seed=int(seed), task=task, source=source)
    if traj.total_reward != task.max_reward:
        raise DemoError(f"expert episode earned {traj.total_reward}, "
                        f"expected {task.max_reward}")
    return traj


def find_solvable_seed(task: gw.TaskConfig, start_seed: int) -> int:
    """First seed >= start_seed whose layout the expert can solve."""
    seed = int(start_seed)
    for _ in range(1000):
        try:
            scripted_expert(task, seed)
            return seed
        except DemoError:
            seed += 1
    raise DemoError("no solvable layout found in 1000 consecutive seeds")


# ---------------------------------------------------------------------------
# file format

def _canonical(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_demos(demos: DemoSet, path) -> None:
    lines = [_canonical({
        "kind": "header",
        "format": DEMO_FORMAT,
        "version": DEMO_VERSION,
        "task": demos.task.to_dict(),
    })]
    for i, traj in enumerate(demos.trajectories):
        lines.append(_canonical({
            "kind": "episode", "episode_id": i, "seed": traj.seed, "source": traj.source,
        }))
        for s in traj.steps:
            lines.append(_canonical({
                "kind": "step",
                "episode_id": i,
                "t": s.t,
                "raw_obs": s.raw_obs.tolist(),
                "min_obs": s.min_obs.tolist(),
                "action": s.action,
                "reward": s.reward,
            }))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _replay_verify(traj: Trajectory) -> None:
    env = gw.GridWorld(traj.task)
    result = env.reset(traj.seed)
    for s in traj.steps:
        if not np.array_equal(result.raw_obs, s.raw_obs) or \
           not np.array_equal(result.min_obs, s.min_obs):
            raise DemoError(f"replay mismatch at step t={s.t}: stored observation "
                            "disagrees with re-simulation")
        result = env.step(s.action)
        if result.reward != s.reward:
            raise DemoError(f"replay mismatch at step t={s.t}: stored reward {s.reward}, "
                            f"environment produced {result.reward}")
    if not result.terminated:
        raise DemoError("trajectory ends before the episode terminates")


def ingest(path, verify_replay: bool = True) -> DemoSet:
    """Parse and validate a demo file; rejects negative rewards, malformed
    records, and any trajectory the environment does not reproduce exactly."""
    try:
        with open(path) as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
    except OSError as e:
        raise DemoError(f"cannot read demo file {path}: {e}") from e
    if not lines:
        raise DemoError(f"{path}: empty demo file")
    records = []
    for n, ln in enumerate(lines, 1):
        try:
            records.append(json.loads(ln))
        except json.JSONDecodeError as e:
            raise DemoError(f"{path}:{n}: malformed record: {e}") from e
    header = records[0]
    if header.get("kind") != "header" or header.get("format") != DEMO_FORMAT:
        raise DemoError(f"{path}: missing or wrong demo header")
    if header.get("version") != DEMO_VERSION:
        raise DemoError(f"{path}: unsupported demo version {header.get('version')}")
    task = gw.TaskConfig.from_dict(header["task"])

    episodes: dict[int, dict] = {}
    order: list[int] = []
    for n, rec in enumerate(records[1:], 2):
        kind = rec.get("kind")
        if kind == "episode":
            eid = rec["episode_id"]
            if eid in episodes:
                raise DemoError(f"{path}:{n}: duplicate episode_id {eid}")
            episodes[eid] = {"seed": rec["seed"], "source": rec.get("source", "unknown"),
                             "steps": []}
            order.append(eid)
        elif kind == "step":
            eid = rec.get("episode_id")
            if eid not in episodes:
                raise DemoError(f"{path}:{n}: step before its episode record")
            reward = rec["reward"]
            if reward < 0:
                raise DemoError(f"{path}:{n}: episode {eid} step t={rec['t']} has a "
                                f"negative demo reward ({reward}); demos must be penalty-free")
            raw = np.asarray(rec["raw_obs"], dtype=np.int64)
            if raw.shape != (gw.RAW_OBS_DIM,):
                raise DemoError(f"{path}:{n}: raw_obs has {raw.size} entries, "
                                f"expected {gw.RAW_OBS_DIM}")
            episodes[eid]["steps"].append(DemoStep(
                raw_obs=raw,
                min_obs=np.asarray(rec["min_obs"], dtype=np.int8),
                action=int(rec["action"]),
                reward=int(reward),
                t=int(rec["t"]),
            ))
        else:
            raise DemoError(f"{path}:{n}: unknown record kind {kind!r}")

    trajectories = []
    for eid in order:
        ep = episodes[eid]
        steps = ep["steps"]
        if not steps:
            raise DemoError(f"{path}: episode {eid} has no steps")
        if [s.t for s in steps] != list(range(1, len(steps) + 1)):
            raise DemoError(f"{path}: episode {eid} step indices not contiguous from 1")
        traj = Trajectory(steps=steps, seed=int(ep["seed"]), task=task, source=ep["source"])
        if traj.total_reward > task.max_reward:
            raise DemoError(f"{path}: episode {eid} total reward {traj.total_reward} "
                            f"exceeds the task maximum {task.max_reward}")
        trajectories.append(traj)
    demos = DemoSet(trajectories)
    if verify_replay:
        for traj in demos.trajectories:
            _replay_verify(traj)
    return demos


def expert_demo_set(task: gw.TaskConfig, n: int, base_seed: int) -> DemoSet:
    """n scripted-expert trajectories on consecutive solvable seeds."""
    trajectories = []
    seed = int(base_seed)
    for _ in range(n):
        seed = find_solvable_seed(task, seed)
        trajectories.append(scripted_expert(task, seed))
        seed += 1
    return DemoSet(trajectories)


# ---------------------------------------------------------------------------
# behavior cloning baseline

@dataclass
class BcConfig:
    hidden_dims: tuple[int, ...] = (128, 64)  # mirrors the sub-skill net
    lr: float = 1e-3
    epochs: int = 400
    seed: int = 0


def train_bc(demos: DemoSet, config: BcConfig = BcConfig()) -> tuple[nnet.PolicyCheckpoint, list]:
    """Supervised raw_obs -> action policy by full-batch cross-entropy."""
    X = gw.featurize_batch(np.stack([s.raw_obs for t in demos.trajectories for s in t.steps]))
    y = np.array([s.action for t in demos.trajectories for s in t.steps])
    n = len(y)
    spec = nnet.MlpSpec(gw.FEAT_DIM, config.hidden_dims, gw.N_ACTIONS, head="softmax")
    rng = np.random.default_rng(config.seed)
    params = nnet.init_params(spec, rng)
    opt = nnet.OptState.zeros(params.size)
    curve = []
    for epoch in range(config.epochs):
        probs = nnet.forward_batch(spec, params, X)
        picked = probs[np.arange(n), y]
        loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
        if not np.isfinite(loss):
            raise TrainingError(f"BC loss diverged at epoch {epoch}")
        upstream = np.zeros_like(probs)
        upstream[np.arange(n), y] = -1.0 / (picked * n)
        grad = nnet.backward_batch(spec, params, X, upstream)
        params, opt = nnet.optimizer_step(params, grad, opt, config.lr)
        curve.append((epoch, loss))
    ckpt = nnet.PolicyCheckpoint(spec, params, {
        "label": "bc", "seed": config.seed, "train_steps": 0,
        "n_demos": demos.N, "epochs": config.epochs,
    })
    return ckpt, curve


def bc_training_accuracy(ckpt: nnet.PolicyCheckpoint, demos: DemoSet) -> float:
    X = gw.featurize_batch(np.stack([s.raw_obs for t in demos.trajectories for s in t.steps]))
    y = np.array([s.action for t in demos.trajectories for s in t.steps])
    probs = nnet.forward_batch(ckpt.spec, ckpt.params, X)
    return float((probs.argmax(axis=1) == y).mean())


class BcAgent:
    """Greedy evaluation wrapper around a BC checkpoint."""

    def __init__(self, ckpt: nnet.PolicyCheckpoint):
        self.ckpt = ckpt

    def act(self, state: gw.GridState) -> int:
        probs = nnet.forward(self.ckpt.spec, self.ckpt.params,
                             gw.featurize_raw(gw.observe_raw(state)))
        return int(probs.argmax())
