"""Registry of frozen sub-skill policies.

A pool is an ordered, immutable sequence of checkpointed policies. The order
is canonical: index i in the pool corresponds to entry i of the controller's
weight vector and to flag i of the minimized observation. Pools load from a
directory whose `manifest` file declares that order explicitly; every
checkpoint's integrity checksum is verified on load. add_skill returns a new
pool value, so existing indices (and parameter bytes) can never change.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gridworld as gw
from . import nnet
from .errors import CheckpointError, ConfigError

MANIFEST_NAME = "manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SkillEntry:
    skill_id: int
    label: str
    checkpoint: nnet.PolicyCheckpoint
    frozen: bool = True


class PolicyPool:
    def __init__(self, entries: tuple[SkillEntry, ...]):
        if not entries:
            raise ConfigError("a policy pool needs at least one skill")
        for i, e in enumerate(entries):
            if e.skill_id != i:
                raise ConfigError(f"skill ids must be contiguous 0..k-1, got {e.skill_id} at {i}")
        self.entries = tuple(entries)

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def checksums(self) -> list[str]:
        return [e.checkpoint.checksum() for e in self.entries]

    def propose_actions(self, raw_obs: np.ndarray) -> np.ndarray:
        """Greedy action of every skill on the raw observation, in pool order."""
        x = gw.featurize_raw(raw_obs)
        out = np.empty(self.k, dtype=np.int64)
        for i, e in enumerate(self.entries):
            probs = nnet.forward(e.checkpoint.spec, e.checkpoint.params, x)
            out[i] = int(probs.argmax())
        return out

    def add_skill(self, checkpoint: nnet.PolicyCheckpoint, label: str) -> "PolicyPool":
        """New pool with the skill appended; existing entries are untouched."""
        if checkpoint.spec.input_dim != self.entries[0].checkpoint.spec.input_dim:
            raise ConfigError(
                f"skill input_dim {checkpoint.spec.input_dim} does not match the pool's "
                f"{self.entries[0].checkpoint.spec.input_dim}")
        entry = SkillEntry(skill_id=self.k, label=label, checkpoint=checkpoint)
        return PolicyPool(self.entries + (entry,))


def propose_actions(pool: PolicyPool, raw_obs: np.ndarray) -> np.ndarray:
    return pool.propose_actions(raw_obs)


def add_skill(pool: PolicyPool, checkpoint: nnet.PolicyCheckpoint, label: str) -> PolicyPool:
    return pool.add_skill(checkpoint, label)


def save_pool(pool: PolicyPool, directory) -> None:
    """Write checkpoints plus the ordered manifest into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    skills = []
    for e in pool.entries:
        filename = f"skill_{e.skill_id}_{e.label}.ckpt"
        e.checkpoint.save(directory / filename)
        skills.append({"skill_id": e.skill_id, "label": e.label, "file": filename})
    manifest = {"version": MANIFEST_VERSION, "skills": skills}
    with open(directory / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_pool(directory) -> PolicyPool:
    """Load a pool in manifest order, verifying every checksum."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise CheckpointError(f"missing pool manifest at {manifest_path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable pool manifest {manifest_path}: {e}") from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise CheckpointError(f"{manifest_path}: unsupported manifest version")
    skills = manifest.get("skills", [])
    if not skills:
        raise CheckpointError(f"{manifest_path}: manifest lists no skills")
    ids = [s.get("skill_id") for s in skills]
    if sorted(ids) != list(range(len(ids))) or len(set(ids)) != len(ids):
        raise CheckpointError(f"{manifest_path}: skill ids must be unique and contiguous")
    entries = []
    for rec in sorted(skills, key=lambda s: s["skill_id"]):
        path = directory / rec["file"]
        if not path.exists():
            raise CheckpointError(f"manifest entry {rec['file']} missing from {directory}")
        ckpt = nnet.PolicyCheckpoint.load(path)
        entries.append(SkillEntry(skill_id=rec["skill_id"], label=rec["label"],
                                  checkpoint=ckpt))
    return PolicyPool(tuple(entries))


def pool_for_task(pool: PolicyPool, task: gw.TaskConfig) -> PolicyPool:
    """Check that pool order matches the task's door colors ("open-<color>")."""
    expected = [f"open-{c}" for c in task.colors]
    if pool.labels != expected:
        raise ConfigError(f"pool labels {pool.labels} do not match task doors {expected}")
    return pool
