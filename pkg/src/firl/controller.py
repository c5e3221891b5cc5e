"""Weight-vector controller over the frozen policy pool.

The controller is a small softmax MLP mapping an observation to a weight
vector w over the pool's k skills; the agent executes the proposal of the
highest-weight skill. Training is pure supervised regression on one or a few
demonstration trajectories and never touches the environment:

    target_{t,i} = 1 if skill i's greedy proposal on the demo observation
                   at step t matches the demonstrated action (within a
                   threshold; exact match for this discrete action set),
                   else 0
    loss  = (1/T) sum_t c_t sum_i (w_{t,i} - target_{t,i})^2

with c_t = 1 for the plain imitation loss and c_t = base_weight + r_t^d for
the reward-augmented loss. With base_weight = 0 the augmented form is the
literal per-step demo-reward weighting; the small positive default keeps a
dense imitation signal on sparse-reward demos while letting the rewarded
steps dominate.

Two input modes mirror the observation-minimization ablation: "min" feeds
the per-door open flags, "raw" feeds the full 147-entry window.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import gridworld as gw
from . import nnet
from .demos import DemoSet, Trajectory
from .errors import ConfigError, DemoError, TrainingError
from .pool import PolicyPool

MODES = {
    "null": (False, False),   # raw observation, plain loss
    "R": (False, True),       # raw observation, reward-augmented loss
    "O": (True, False),       # minimized observation, plain loss
    "O+R": (True, True),      # minimized observation, reward-augmented loss
}


def mode_flags(mode: str) -> tuple[bool, bool]:
    """(minimized_obs, reward_augmented) for an ablation mode name."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; one of {sorted(MODES)}")
    return MODES[mode]


def indicator(a_i, a_d, threshold: float = 0.0) -> int:
    """1 iff the two action codes differ by at most the threshold."""
    return 1 if abs(int(a_i) - int(a_d)) <= threshold else 0


def synthesize_action(w: np.ndarray, proposals: np.ndarray) -> int:
    """Proposal of the highest-weight skill; ties go to the lowest index."""
    w = np.asarray(w)
    proposals = np.asarray(proposals)
    if w.shape != proposals.shape:
        raise ConfigError(f"weight vector length {w.shape} does not match "
                          f"proposals {proposals.shape}")
    return int(proposals[int(np.argmax(w))])


@dataclass
class ControllerConfig:
    mode: str = "O+R"
    hidden_dims: tuple[int, ...] = (32,)
    lr: float = 1e-2
    epoch_cap: int = 2000
    plateau_window: int = 50
    plateau_rel_tol: float = 1e-6
    base_weight: float = 0.05
    threshold: float = 0.0   # indicator tolerance; 0 = exact match
    seed: int = 0

    @property
    def minimized_obs(self) -> bool:
        return mode_flags(self.mode)[0]

    @property
    def reward_augmented(self) -> bool:
        return mode_flags(self.mode)[1]


@dataclass
class ControllerPolicy:
    """Trained weight-vector policy: spec + params + which input it reads."""

    spec: nnet.MlpSpec
    params: nnet.ParameterSet
    input_mode: str            # "min" | "raw"
    k: int
    meta: dict = field(default_factory=dict)

    def weights(self, x: np.ndarray) -> np.ndarray:
        return nnet.forward(self.spec, self.params, np.asarray(x, dtype=np.float64))

    def observe(self, state: gw.GridState) -> np.ndarray:
        if self.input_mode == "min":
            return gw.observe_min(state).astype(np.float64)
        return gw.featurize_raw(gw.observe_raw(state))

    def to_checkpoint(self) -> nnet.PolicyCheckpoint:
        meta = dict(self.meta)
        meta.update({"kind": "controller", "input_mode": self.input_mode, "k": self.k})
        return nnet.PolicyCheckpoint(self.spec, self.params, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: nnet.PolicyCheckpoint) -> "ControllerPolicy":
        if ckpt.meta.get("kind") != "controller":
            raise ConfigError("checkpoint is not a controller checkpoint")
        return cls(ckpt.spec, ckpt.params, ckpt.meta["input_mode"], ckpt.meta["k"],
                   dict(ckpt.meta))


# ---------------------------------------------------------------------------
# losses

def weighted_indicator_sse(weights: np.ndarray, targets: np.ndarray,
                           step_weights: np.ndarray) -> float:
    """(1/T) sum_t c_t sum_i (w_{t,i} - target_{t,i})^2 for stacked steps."""
    weights = np.asarray(weights, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    step_weights = np.asarray(step_weights, dtype=np.float64)
    T = weights.shape[0]
    return float((step_weights[:, None] * (weights - targets) ** 2).sum() / T)


def indicator_targets(pool: PolicyPool, trajectory: Trajectory,
                      threshold: float = 0.0) -> np.ndarray:
    """Per-step binary agreement between each skill's proposal and the demo."""
    out = np.empty((trajectory.T, pool.k))
    for t, s in enumerate(trajectory.steps):
        proposals = pool.propose_actions(s.raw_obs)
        out[t] = [indicator(p, s.action, threshold) for p in proposals]
    return out


def _controller_inputs(trajectory: Trajectory, input_mode: str) -> np.ndarray:
    if input_mode == "min":
        return np.stack([s.min_obs for s in trajectory.steps]).astype(np.float64)
    return gw.featurize_batch(np.stack([s.raw_obs for s in trajectory.steps]))


def _demo_rewards(trajectory: Trajectory) -> np.ndarray:
    r = np.array([s.reward for s in trajectory.steps], dtype=np.float64)
    if (r < 0).any():
        raise DemoError("negative demo reward reached the loss; ingestion must reject it")
    return r


def imitation_loss(policy: ControllerPolicy, pool: PolicyPool,
                   trajectory: Trajectory) -> float:
    """Mean squared weight/indicator mismatch over the trajectory."""
    if pool.k != policy.k:
        raise ConfigError(f"pool has {pool.k} skills, controller expects {policy.k}")
    X = _controller_inputs(trajectory, policy.input_mode)
    W = nnet.forward_batch(policy.spec, policy.params, X)
    targets = indicator_targets(pool, trajectory, policy.meta.get("threshold", 0.0))
    return weighted_indicator_sse(W, targets, np.ones(trajectory.T))


def reward_augmented_loss(policy: ControllerPolicy, pool: PolicyPool,
                          trajectory: Trajectory, base_weight: float = 0.0) -> float:
    """Imitation loss with per-step weights (base_weight + r_t^d);
    base_weight 0 is the literal demo-reward weighting."""
    if pool.k != policy.k:
        raise ConfigError(f"pool has {pool.k} skills, controller expects {policy.k}")
    X = _controller_inputs(trajectory, policy.input_mode)
    W = nnet.forward_batch(policy.spec, policy.params, X)
    targets = indicator_targets(pool, trajectory, policy.meta.get("threshold", 0.0))
    return weighted_indicator_sse(W, targets, base_weight + _demo_rewards(trajectory))


# ---------------------------------------------------------------------------
# training

@dataclass
class ControllerTrainResult:
    policy: ControllerPolicy
    curve: list          # rows: (epoch, loss) or (epoch, loss, eval_success)
    epochs_to_plateau: int
    final_loss: float
    env_steps: int       # always 0: training never touches the environment


def train_controller(pool: PolicyPool, demos: DemoSet, config: ControllerConfig,
                     eval_fn: Optional[Callable[[ControllerPolicy], float]] = None,
                     eval_every: int = 10,
                     on_epoch: Optional[Callable[[int, float], None]] = None,
                     ) -> ControllerTrainResult:
    """Full-batch descent on the selected loss until plateau or epoch cap.

    Demonstration steps are concatenated, which equals the length-weighted
    mean of per-trajectory losses. eval_fn (optional, evaluation only) is
    invoked every eval_every epochs and its result recorded in the curve;
    on_epoch (optional) observes every (epoch, loss) pair as it happens.
    """
    input_mode = "min" if config.minimized_obs else "raw"
    input_dim = pool.k if config.minimized_obs else gw.FEAT_DIM

    X_parts, target_parts, weight_parts = [], [], []
    for traj in demos.trajectories:
        X_parts.append(_controller_inputs(traj, input_mode))
        target_parts.append(indicator_targets(pool, traj, config.threshold))
        r = _demo_rewards(traj)
        weight_parts.append(config.base_weight + r if config.reward_augmented
                            else np.ones(traj.T))
    X = np.concatenate(X_parts)
    targets = np.concatenate(target_parts)
    step_weights = np.concatenate(weight_parts)
    T = X.shape[0]

    spec = nnet.MlpSpec(input_dim, config.hidden_dims, pool.k, head="softmax")
    rng = np.random.default_rng(config.seed)
    params = nnet.init_params(spec, rng)
    opt = nnet.OptState.zeros(params.size)

    curve = []
    losses = []
    plateau_epoch = config.epoch_cap
    for epoch in range(1, config.epoch_cap + 1):
        W = nnet.forward_batch(spec, params, X)
        loss = weighted_indicator_sse(W, targets, step_weights)
        if not np.isfinite(loss):
            raise TrainingError(f"controller loss diverged at epoch {epoch}")
        upstream = 2.0 * step_weights[:, None] * (W - targets) / T
        grad = nnet.backward_batch(spec, params, X, upstream)
        params, opt = nnet.optimizer_step(params, grad, opt, config.lr)
        losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, loss)
        if eval_fn is not None and epoch % eval_every == 0:
            probe_policy = ControllerPolicy(spec, params, input_mode, pool.k,
                                            {"threshold": config.threshold})
            curve.append((epoch, loss, float(eval_fn(probe_policy))))
        else:
            curve.append((epoch, loss))
        w = config.plateau_window
        if epoch > w:
            old = losses[-w - 1]
            if old > 0 and (old - losses[-1]) / old < config.plateau_rel_tol:
                plateau_epoch = epoch
                break

    policy = ControllerPolicy(
        spec, params, input_mode, pool.k,
        meta={
            "mode": config.mode,
            "base_weight": config.base_weight,
            "threshold": config.threshold,
            "seed": config.seed,
            "n_demos": demos.N,
            "epochs": len(losses),
            "epochs_to_plateau": plateau_epoch,
            "env_steps": 0,
            "pool_checksums": pool.checksums(),
        })
    return ControllerTrainResult(policy=policy, curve=curve,
                                 epochs_to_plateau=plateau_epoch,
                                 final_loss=losses[-1], env_steps=0)


# ---------------------------------------------------------------------------
# acting

def act(policy: ControllerPolicy, pool: PolicyPool, state: gw.GridState,
        rng: Optional[np.random.Generator] = None) -> int:
    """One FIRL action: controller weights select the skill, the skill acts.

    Without an RNG this is fully deterministic: the highest-weight skill's
    greedy proposal executes. With an RNG the executing skill's action is
    drawn from its action distribution instead; the frozen policies are
    near-deterministic where they are confident, so sampling only matters in
    states where the greedy flow would stall (it is the evaluated
    configuration for the benchmark).
    """
    w = policy.weights(policy.observe(state))
    if rng is None:
        return synthesize_action(w, pool.propose_actions(gw.observe_raw(state)))
    entry = pool.entries[int(np.argmax(w))]
    probs = nnet.forward(entry.checkpoint.spec, entry.checkpoint.params,
                         gw.featurize_raw(gw.observe_raw(state)))
    return int(nnet.sample_categorical(probs, rng))


class FirlAgent:
    """Evaluation-facing agent pairing a trained controller with its pool.

    Reproducible given (policy, pool, seed): the internal RNG drives the
    executing skill's action draws. sample=False yields the fully greedy
    variant."""

    def __init__(self, policy: ControllerPolicy, pool: PolicyPool,
                 sample: bool = True, seed: int = 0):
        if pool.k != policy.k:
            raise ConfigError(f"pool has {pool.k} skills, controller expects {policy.k}")
        self.policy = policy
        self.pool = pool
        self.rng = np.random.default_rng(seed) if sample else None

    def act(self, state: gw.GridState) -> int:
        return act(self.policy, self.pool, state, rng=self.rng)
