"""Multi-door grid world with a sequential door-opening reward machine.

A rectangular room is enclosed by a wall ring. Colored doors and the agent
are placed uniformly at random on distinct interior cells at reset. The
agent must open the doors in the order given by the task's target sequence:
opening the next door in the sequence yields +1 (and advances the stage);
any wrong action at a door (opening one that is out of sequence or already
open, or Pick/Place next to any door) yields -1 and ends the episode.
Everything else is reward 0. Opening the final door of the sequence ends the
episode with the last +1.

The same machine with a single-element target sequence is the sub-skill
pre-training task ("open the door of one given color").

Observations come in two forms:
- raw: a flat 147-vector (7x7 window centered on the agent, 3 integer
  channels per cell: object type, color, open flag); out-of-bounds reads
  as wall.
- minimized: one open/closed flag per door, ordered by the task's color
  list.

Dynamics are fully deterministic given (seed, task, action sequence); the
seeded RNG is consumed only by placement at reset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidActionError


class Action(IntEnum):
    MOVE_UP = 0
    MOVE_DOWN = 1
    MOVE_LEFT = 2
    MOVE_RIGHT = 3
    PICK = 4
    PLACE = 5
    OPEN = 6


N_ACTIONS = 7

# (dx, dy) per move action; y grows downward.
_MOVE_DELTAS = {
    Action.MOVE_UP: (0, -1),
    Action.MOVE_DOWN: (0, 1),
    Action.MOVE_LEFT: (-1, 0),
    Action.MOVE_RIGHT: (1, 0),
}

# Stable color registry; codes never change across runs or versions.
COLOR_NAMES = ("red", "green", "blue", "yellow", "purple", "orange")
COLOR_CODES = {name: i for i, name in enumerate(COLOR_NAMES)}

RED, GREEN, BLUE, YELLOW = 0, 1, 2, 3

# Cell object codes (channel 0 of the raw observation).
CELL_EMPTY, CELL_WALL, CELL_DOOR = 0, 1, 2

WINDOW = 7  # agent-centered square window side
RAW_OBS_DIM = WINDOW * WINDOW * 3  # 147


def color_code(name: str) -> int:
    try:
        return COLOR_CODES[name]
    except KeyError:
        raise ConfigError(f"unknown door color {name!r}; known: {COLOR_NAMES}") from None


def color_name(code: int) -> str:
    return COLOR_NAMES[code]


@dataclass(frozen=True)
class TaskConfig:
    """Task description read from a JSON config file."""

    grid_width: int = 11
    grid_height: int = 11
    colors: tuple[str, ...] = ("red", "green", "blue")
    target_sequence: tuple[str, ...] = ("red", "green", "blue")
    horizon: int = 200
    subskill_horizon: int = 100

    def __post_init__(self):
        if self.grid_width < 4 or self.grid_height < 4:
            raise ConfigError("grid must be at least 4x4 to have interior cells")
        if len(set(self.colors)) != len(self.colors):
            raise ConfigError("door colors must be distinct")
        for c in self.colors:
            color_code(c)
        for c in self.target_sequence:
            if c not in self.colors:
                raise ConfigError(f"target sequence color {c!r} not among doors {self.colors}")
        n_free = (self.grid_width - 2) * (self.grid_height - 2)
        if n_free < len(self.colors) + 1:
            raise ConfigError(
                f"grid too small: {n_free} interior cells for "
                f"{len(self.colors)} doors + agent"
            )

    @property
    def color_codes(self) -> tuple[int, ...]:
        return tuple(color_code(c) for c in self.colors)

    @property
    def sequence_codes(self) -> tuple[int, ...]:
        return tuple(color_code(c) for c in self.target_sequence)

    @property
    def n_doors(self) -> int:
        return len(self.colors)

    @property
    def max_reward(self) -> int:
        return len(self.target_sequence)

    def to_dict(self) -> dict:
        return {
            "grid_width": self.grid_width,
            "grid_height": self.grid_height,
            "colors": list(self.colors),
            "target_sequence": list(self.target_sequence),
            "horizon": self.horizon,
            "subskill_horizon": self.subskill_horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        known = {f: d[f] for f in (
            "grid_width", "grid_height", "colors", "target_sequence",
            "horizon", "subskill_horizon") if f in d}
        for key in ("colors", "target_sequence"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    @classmethod
    def load(cls, path) -> "TaskConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


@dataclass(frozen=True)
class Door:
    color: int          # color code
    pos: tuple[int, int]
    open: bool = False


@dataclass(frozen=True)
class GridState:
    """Full simulator state; step() never mutates, it returns a new one."""

    width: int
    height: int
    cells: np.ndarray                     # (h, w) object codes, static per episode
    doors: tuple[Door, ...]               # ordered by task color list
    agent_pos: tuple[int, int]
    stage: int
    target_sequence: tuple[int, ...]      # color codes, in required opening order
    seed: int                             # rng seed material used at reset
    step_count: int = 0
    horizon: int = 200
    last_move_dir: Optional[tuple[int, int]] = None
    terminated: bool = False
    task: TaskConfig = field(default=None, repr=False)

    @property
    def door_index_by_pos(self) -> dict:
        return {d.pos: i for i, d in enumerate(self.doors)}


@dataclass
class StepResult:
    raw_obs: np.ndarray    # int64, length 147
    min_obs: np.ndarray    # int8, one open flag per door
    reward: int            # -1, 0 or +1
    terminated: bool
    info: dict


def _build_cells(width: int, height: int, door_positions: Sequence[tuple[int, int]]) -> np.ndarray:
    cells = np.zeros((height, width), dtype=np.int8)
    cells[0, :] = CELL_WALL
    cells[-1, :] = CELL_WALL
    cells[:, 0] = CELL_WALL
    cells[:, -1] = CELL_WALL
    for (x, y) in door_positions:
        cells[y, x] = CELL_DOOR
    return cells


def reset(seed: int, task: TaskConfig,
          target_sequence: Optional[tuple[int, ...]] = None,
          horizon: Optional[int] = None) -> tuple[GridState, StepResult]:
    """Place agent and doors uniformly at random on distinct interior cells.

    Identical (seed, task) always yields a bit-identical state. The optional
    overrides select the sub-skill variant of the reward machine; plain
    reset(seed, task) is the full sequential task.
    """
    w, h = task.grid_width, task.grid_height
    interior = [(x, y) for y in range(1, h - 1) for x in range(1, w - 1)]
    n_doors = task.n_doors
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.choice(len(interior), size=n_doors + 1, replace=False)
    door_pos = [interior[i] for i in picks[:n_doors]]
    agent_pos = interior[picks[n_doors]]

    doors = tuple(Door(color=c, pos=p) for c, p in zip(task.color_codes, door_pos))
    state = GridState(
        width=w,
        height=h,
        cells=_build_cells(w, h, door_pos),
        doors=doors,
        agent_pos=agent_pos,
        stage=0,
        target_sequence=task.sequence_codes if target_sequence is None else tuple(target_sequence),
        seed=int(seed),
        step_count=0,
        horizon=task.horizon if horizon is None else int(horizon),
        task=task,
    )
    result = StepResult(
        raw_obs=observe_raw(state),
        min_obs=observe_min(state),
        reward=0,
        terminated=False,
        info={"stage": 0, "t": 0},
    )
    return state, result


def _adjacent_doors(state: GridState) -> list[int]:
    ax, ay = state.agent_pos
    idx = []
    for i, d in enumerate(state.doors):
        dx, dy = d.pos[0] - ax, d.pos[1] - ay
        if abs(dx) + abs(dy) == 1:
            idx.append(i)
    return idx


def _open_target(state: GridState, adjacent: list[int]) -> int:
    """Door index targeted by Open: the adjacent door in the last-move
    direction if there is one, else the lowest-index adjacent door."""
    if state.last_move_dir is not None:
        ax, ay = state.agent_pos
        dx, dy = state.last_move_dir
        faced = (ax + dx, ay + dy)
        for i in adjacent:
            if state.doors[i].pos == faced:
                return i
    return min(adjacent)


def step(state: GridState, action) -> tuple[GridState, StepResult]:
    """Advance one step; pure, the input state is left untouched."""
    if state.terminated:
        raise InvalidActionError("step() on a terminated episode")
    code = int(action)
    if not 0 <= code < N_ACTIONS:
        raise InvalidActionError(f"action code {code} outside 0..{N_ACTIONS - 1}")
    action = Action(code)

    agent_pos = state.agent_pos
    doors = state.doors
    stage = state.stage
    last_move_dir = state.last_move_dir
    reward = 0
    terminated = False

    if action in _MOVE_DELTAS:
        dx, dy = _MOVE_DELTAS[action]
        last_move_dir = (dx, dy)  # records intent even when the move is blocked
        nx, ny = agent_pos[0] + dx, agent_pos[1] + dy
        if 0 <= nx < state.width and 0 <= ny < state.height and state.cells[ny, nx] == CELL_EMPTY:
            agent_pos = (nx, ny)
    elif action == Action.OPEN:
        adjacent = _adjacent_doors(state)
        if adjacent:
            i = _open_target(state, adjacent)
            door = doors[i]
            if door.open:
                # a wrong action to the door, same as Pick/Place at one
                reward = -1
                terminated = True
            elif door.color == state.target_sequence[stage]:
                doors = doors[:i] + (replace(door, open=True),) + doors[i + 1:]
                stage += 1
                reward = 1
                if stage == len(state.target_sequence):
                    terminated = True
            else:
                reward = -1
                terminated = True
    else:  # PICK or PLACE
        if _adjacent_doors(state):
            reward = -1
            terminated = True

    step_count = state.step_count + 1
    if step_count >= state.horizon:
        terminated = True

    new_state = replace(
        state,
        agent_pos=agent_pos,
        doors=doors,
        stage=stage,
        step_count=step_count,
        last_move_dir=last_move_dir,
        terminated=terminated,
    )
    result = StepResult(
        raw_obs=observe_raw(new_state),
        min_obs=observe_min(new_state),
        reward=reward,
        terminated=terminated,
        info={"stage": stage, "t": step_count},
    )
    return new_state, result


# Static window offset grids, shared by every observe_raw call.
_WIN_OFF = np.arange(WINDOW) - WINDOW // 2
_WIN_DX = np.tile(_WIN_OFF, WINDOW).reshape(WINDOW, WINDOW)
_WIN_DY = np.repeat(_WIN_OFF, WINDOW).reshape(WINDOW, WINDOW)


def observe_raw(state: GridState) -> np.ndarray:
    """7x7x3 egocentric window, flattened row-major (dy, dx, channel).

    Channels: object code (0 empty / 1 wall / 2 door), color code
    (0 none, door color + 1 otherwise), open flag. Cells outside the grid
    read as walls. Pure; independent of the RNG seed.
    """
    ax, ay = state.agent_pos
    xs = _WIN_DX + ax
    ys = _WIN_DY + ay
    obs = np.zeros((WINDOW, WINDOW, 3), dtype=np.int64)
    wall = (xs <= 0) | (xs >= state.width - 1) | (ys <= 0) | (ys >= state.height - 1)
    obs[wall, 0] = CELL_WALL
    half = WINDOW // 2
    for d in state.doors:
        wx, wy = d.pos[0] - ax + half, d.pos[1] - ay + half
        if 0 <= wx < WINDOW and 0 <= wy < WINDOW:
            obs[wy, wx, 0] = CELL_DOOR
            obs[wy, wx, 1] = d.color + 1
            obs[wy, wx, 2] = 1 if d.open else 0
    return obs.reshape(-1)


def observe_min(state: GridState) -> np.ndarray:
    """One open/closed flag per door, in task color-list order."""
    return np.array([1 if d.open else 0 for d in state.doors], dtype=np.int8)


# Policy-input encoding of the raw observation: per cell, object one-hot (3),
# color one-hot (6, none encoded as all-zero), open flag. Integer category
# codes are hostile inputs for small MLPs; every net in the package consumes
# this encoding while files and wire formats keep the 147-int observation.
FEAT_PER_CELL = 3 + len(COLOR_NAMES) + 1
FEAT_DIM = WINDOW * WINDOW * FEAT_PER_CELL  # 490


def featurize_raw(raw_obs: np.ndarray) -> np.ndarray:
    """One-hot policy features for a single raw observation (length 490)."""
    return featurize_batch(np.asarray(raw_obs).reshape(1, -1))[0]


def featurize_batch(raw: np.ndarray) -> np.ndarray:
    """Vectorized featurize_raw for a (batch, 147) array of observations."""
    raw = np.asarray(raw).reshape(raw.shape[0], -1, 3)
    B, C = raw.shape[0], raw.shape[1]
    out = np.zeros((B, C, FEAT_PER_CELL))
    b, c = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
    out[b, c, raw[..., 0]] = 1.0
    colored = raw[..., 1] > 0
    out[b[colored], c[colored], 3 + raw[..., 1][colored] - 1] = 1.0
    out[..., FEAT_PER_CELL - 1] = raw[..., 2]
    return out.reshape(B, -1)


def render_dict(state: GridState, last: Optional[StepResult] = None) -> dict:
    """JSON-friendly full render state for the gateway/UI."""
    d = {
        "width": state.width,
        "height": state.height,
        "cells": state.cells.tolist(),
        "agent": list(state.agent_pos),
        "doors": [
            {"color": color_name(door.color), "pos": list(door.pos), "open": door.open}
            for door in state.doors
        ],
        "stage": state.stage,
        "t": state.step_count,
        "terminated": state.terminated,
        "min_obs": observe_min(state).tolist(),
    }
    if last is not None:
        d["reward"] = int(last.reward)
    return d


class GridWorld:
    """Stateful convenience wrapper over the pure reset/step core.

    One instance per execution context; instances share nothing.
    """

    def __init__(self, task: TaskConfig,
                 target_sequence: Optional[tuple[int, ...]] = None,
                 horizon: Optional[int] = None):
        self.task = task
        self._sequence = target_sequence
        self._horizon = horizon
        self.state: Optional[GridState] = None

    @property
    def max_reward(self) -> int:
        seq = self._sequence if self._sequence is not None else self.task.sequence_codes
        return len(seq)

    def reset(self, seed: int) -> StepResult:
        self.state, result = reset(seed, self.task, self._sequence, self._horizon)
        return result

    def step(self, action) -> StepResult:
        self.state, result = step(self.state, action)
        return result


def make_subskill_env(task: TaskConfig, target) -> GridWorld:
    """Single-stage variant: +1 and done on opening the target-color door.

    `target` is a color name or code; it must be among the task's doors.
    """
    code = color_code(target) if isinstance(target, str) else int(target)
    if code not in task.color_codes:
        raise ConfigError(
            f"sub-skill target {color_name(code)!r} is not among task doors {task.colors}")
    return GridWorld(task, target_sequence=(code,), horizon=task.subskill_horizon)
