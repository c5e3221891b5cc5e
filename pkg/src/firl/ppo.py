"""Clipped-surrogate policy-gradient training for sub-skill policies.

The actor-critic is a tanh MLP trunk with a softmax action head and a scalar
value head; gradients are computed explicitly (see backward) and the full
loss is checked against finite differences in the test suite. Rollouts come
from a fixed-order fan of environment instances, each with its own RNG
stream spawned from the run seed, so results do not depend on any worker
scheduling.

All sub-skills and the flat full-task baseline share train_policy(); only
the environment factory and the success reward differ.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import gridworld as gw
from . import nnet
from .errors import ConfigError, TrainingError

# Bumped whenever the training procedure changes behaviour for identical
# configs; cached artifacts key on it.
PROTOCOL_VERSION = 4


@dataclass
class PpoConfig:
    gamma: float = 0.99           # discount, in [0, 1)
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4               # optimization passes per rollout batch
    minibatch_size: int = 256
    lr: float = 3e-4
    entropy_coef: float = 0.004   # final-phase entropy; warmup phases set their own
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 500_000
    n_envs: int = 8
    n_steps: int = 256            # rollout length per env per iteration
    hidden_dims: tuple[int, ...] = (128, 64)
    eval_every: int = 10          # iterations between greedy probe evals
    eval_episodes: int = 100
    final_eval_episodes: int = 100
    success_threshold: float = 0.9
    early_stop_success: float = 0.97
    lr_final: Optional[float] = None   # fine-tune rate for the last phase
    # Warm-up phases on shrunken rooms before the target-size room. Sparse
    # door rewards are undiscoverable from scratch on the full grid (the -1
    # machine dominates random play); each phase is (grid side, env steps,
    # entropy coefficient), door/agent placement still randomized per episode.
    curriculum: tuple[tuple[int, int, float], ...] = (
        (6, 30_000, 0.05),
        (9, 50_000, 0.03),
        (11, 250_000, 0.01),
    )

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"discount must be in [0, 1), got {self.gamma}")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be > 0")


@dataclass
class RolloutBatch:
    """Time-major (n_steps, n_envs) rollout arrays plus bootstrap values."""

    obs: np.ndarray        # (T, E, obs_dim)
    actions: np.ndarray    # (T, E) int
    log_probs: np.ndarray  # (T, E)
    rewards: np.ndarray    # (T, E)
    values: np.ndarray     # (T, E)
    dones: np.ndarray      # (T, E) bool, True when the step ended its episode
    last_values: np.ndarray        # (E,) V(s_T), zeroed where the last step was done
    episode_returns: list[float] = field(default_factory=list)  # completed this batch

    @property
    def size(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def flat(self):
        T, E, D = self.obs.shape
        return (self.obs.reshape(T * E, D), self.actions.reshape(-1),
                self.log_probs.reshape(-1))


class ActorCritic:
    """Shared tanh trunk, softmax policy head and linear value head."""

    def __init__(self, input_dim: int, hidden_dims: tuple[int, ...], n_actions: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dims = tuple(hidden_dims)
        self.n_actions = n_actions
        dims = (input_dim, *hidden_dims)
        self.trunk_w = []
        self.trunk_b = []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.trunk_w.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.trunk_b.append(np.zeros(n_out))
        top = hidden_dims[-1]
        bound = 1.0 / np.sqrt(top)
        self.policy_w = rng.uniform(-bound, bound, size=(top, n_actions))
        self.policy_b = np.zeros(n_actions)
        self.value_w = rng.uniform(-bound, bound, size=(top, 1))
        self.value_b = np.zeros(1)

    # -- parameter plumbing ------------------------------------------------
    def _arrays(self) -> list[np.ndarray]:
        return [*self.trunk_w, *self.trunk_b, self.policy_w, self.policy_b,
                self.value_w, self.value_b]

    def to_flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self._arrays()])

    def from_flat(self, flat: np.ndarray) -> None:
        k = 0
        for a in self._arrays():
            a[...] = flat[k:k + a.size].reshape(a.shape)
            k += a.size

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self._arrays())

    # -- forward / backward --------------------------------------------------
    def forward(self, X: np.ndarray):
        """Returns (action probabilities, values, cache for backward)."""
        h = X
        hiddens = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            h = np.tanh(h @ w + b)
            hiddens.append(h)
        logits = h @ self.policy_w + self.policy_b
        probs = nnet.softmax(logits)
        values = (h @ self.value_w + self.value_b)[:, 0]
        return probs, values, (X, hiddens)

    def backward(self, cache, d_logits: np.ndarray, d_values: np.ndarray) -> np.ndarray:
        """Flat gradient for upstream dL/dlogits and dL/dvalue (summed over batch)."""
        X, hiddens = cache
        top = hiddens[-1]
        d_pw = top.T @ d_logits
        d_pb = d_logits.sum(axis=0)
        dv = d_values[:, None]
        d_vw = top.T @ dv
        d_vb = dv.sum(axis=0)
        delta = d_logits @ self.policy_w.T + dv @ self.value_w.T
        d_tw, d_tb = [], []
        acts = [X] + hiddens
        for i in range(len(self.trunk_w) - 1, -1, -1):
            delta = delta * (1.0 - acts[i + 1] * acts[i + 1])
            d_tw.append(acts[i].T @ delta)
            d_tb.append(delta.sum(axis=0))
            if i > 0:
                delta = delta @ self.trunk_w[i].T
        d_tw.reverse()
        d_tb.reverse()
        parts = [*d_tw, *d_tb, d_pw, d_pb, d_vw, d_vb]
        return np.concatenate([p.reshape(-1) for p in parts])

    def policy_checkpoint(self, meta: dict) -> nnet.PolicyCheckpoint:
        """Drop the value head; keep trunk + policy head as a softmax MLP."""
        spec = nnet.MlpSpec(self.input_dim, self.hidden_dims, self.n_actions,
                            activation="tanh", head="softmax")
        params = nnet.ParameterSet(
            [w.copy() for w in self.trunk_w] + [self.policy_w.copy()],
            [b.copy() for b in self.trunk_b] + [self.policy_b.copy()],
        )
        return nnet.PolicyCheckpoint(spec, params, meta)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_values: np.ndarray, gamma: float, lam: float):
    """Generalized advantage estimation with episode-boundary resets.

    Accepts (T,) vectors or (T, E) arrays; returns (advantages, returns)
    of the same shape, with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards = rewards[:, None]
        values = np.asarray(values, dtype=np.float64)[:, None]
        dones = np.asarray(dones, dtype=bool)[:, None]
        last_values = np.atleast_1d(np.asarray(last_values, dtype=np.float64))
    T, E = rewards.shape
    adv = np.zeros((T, E))
    not_done = 1.0 - dones.astype(np.float64)
    gae = np.zeros(E)
    next_values = np.asarray(last_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_values * not_done[t] - values[t]
        gae = delta + gamma * lam * not_done[t] * gae
        adv[t] = gae
        next_values = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def collect_rollouts(envs: list, ac: ActorCritic, n_steps: int,
                     rngs: list[np.random.Generator],
                     episode_rewards: Optional[list[float]] = None) -> RolloutBatch:
    """Gather n_steps transitions from every env under the stochastic policy.

    `rngs` supplies one stream per env: stream i drives env i's action draws
    and reset seeds, so the batch is identical however envs are scheduled.
    `episode_rewards` carries running returns across batch boundaries.
    """
    E = len(envs)
    if episode_rewards is None:
        episode_rewards = [0.0] * E
    obs = np.empty((n_steps, E, gw.FEAT_DIM))
    actions = np.empty((n_steps, E), dtype=np.int64)
    log_probs = np.empty((n_steps, E))
    rewards = np.empty((n_steps, E))
    values = np.empty((n_steps, E))
    dones = np.empty((n_steps, E), dtype=bool)
    completed: list[float] = []

    raw = np.empty((E, gw.RAW_OBS_DIM), dtype=np.int64)
    for i, env in enumerate(envs):
        if env.state is None or env.state.terminated:
            r = env.reset(int(rngs[i].integers(2 ** 62)))
            episode_rewards[i] = 0.0
            raw[i] = r.raw_obs
        else:
            raw[i] = gw.observe_raw(env.state)

    for t in range(n_steps):
        current = gw.featurize_batch(raw)
        probs, vals, _ = ac.forward(current)
        obs[t] = current
        values[t] = vals
        for i, env in enumerate(envs):
            a = nnet.sample_categorical(probs[i], rngs[i])
            actions[t, i] = a
            log_probs[t, i] = np.log(probs[i, a])
            res = env.step(a)
            rewards[t, i] = res.reward
            dones[t, i] = res.terminated
            episode_rewards[i] += res.reward
            if res.terminated:
                completed.append(episode_rewards[i])
                r = env.reset(int(rngs[i].integers(2 ** 62)))
                episode_rewards[i] = 0.0
                raw[i] = r.raw_obs
            else:
                raw[i] = res.raw_obs

    _, last_vals, _ = ac.forward(gw.featurize_batch(raw))
    last_values = np.where(dones[-1], 0.0, last_vals)
    return RolloutBatch(obs=obs, actions=actions, log_probs=log_probs, rewards=rewards,
                        values=values, dones=dones, last_values=last_values,
                        episode_returns=completed)


def ppo_update(ac: ActorCritic, opt: nnet.OptState, batch: RolloutBatch,
               config: PpoConfig, rng: np.random.Generator):
    """Clipped surrogate + value MSE + entropy bonus over config.epochs."""
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones,
                           batch.last_values, config.gamma, config.gae_lambda)
    X, A_taken, logp_old = batch.flat()
    adv = adv.reshape(-1)
    ret = ret.reshape(-1)
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)

    n = X.shape[0]
    flat = ac.to_flat()
    stats = {"policy_loss": [], "value_loss": [], "entropy": [],
             "clip_frac": [], "approx_kl": []}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = order[start:start + config.minibatch_size]
            m = len(mb)
            probs, vals, cache = ac.forward(X[mb])
            logp = np.log(probs[np.arange(m), A_taken[mb]])
            ratio = np.exp(logp - logp_old[mb])
            a_mb = adv[mb]
            surr1 = ratio * a_mb
            surr2 = np.clip(ratio, 1 - config.clip_eps, 1 + config.clip_eps) * a_mb
            policy_loss = -np.minimum(surr1, surr2).mean()
            v_err = vals - ret[mb]
            value_loss = 0.5 * (v_err ** 2).mean()
            logp_all = np.log(np.maximum(probs, 1e-300))
            entropy = -(probs * logp_all).sum(axis=1)
            loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy.mean()
            if not np.isfinite(loss):
                raise TrainingError("PPO loss became non-finite; aborting update "
                                    f"(policy={policy_loss}, value={value_loss})")

            # gradient wrt logits: active surrogate branch + entropy bonus
            onehot = np.zeros_like(probs)
            onehot[np.arange(m), A_taken[mb]] = 1.0
            active = (surr1 <= surr2).astype(np.float64)
            d_logits = (-(active * ratio * a_mb))[:, None] * (onehot - probs) / m
            d_logits += config.entropy_coef * (probs * (logp_all + entropy[:, None])) / m
            d_values = config.value_coef * v_err / m
            grad = ac.backward(cache, d_logits, d_values)

            norm = float(np.linalg.norm(grad))
            if norm > config.max_grad_norm:
                grad *= config.max_grad_norm / norm
            params = nnet.ParameterSet([flat], [np.zeros(0)])
            gparams = nnet.ParameterSet([grad], [np.zeros(0)])
            params, opt = nnet.optimizer_step(params, gparams, opt, config.lr)
            flat = params.weights[0]
            ac.from_flat(flat)

            stats["policy_loss"].append(policy_loss)
            stats["value_loss"].append(value_loss)
            stats["entropy"].append(entropy.mean())
            stats["clip_frac"].append(float((np.abs(ratio - 1) > config.clip_eps).mean()))
            stats["approx_kl"].append(float((logp_old[mb] - logp).mean()))
    return opt, {k: float(np.mean(v)) for k, v in stats.items()}


# ---------------------------------------------------------------------------
# greedy evaluation and the full training loop

class PolicyAgent:
    """Greedy evaluation wrapper around a policy checkpoint."""

    def __init__(self, ckpt: nnet.PolicyCheckpoint):
        self.ckpt = ckpt

    def act(self, state: gw.GridState) -> int:
        probs = nnet.forward(self.ckpt.spec, self.ckpt.params,
                             gw.featurize_raw(gw.observe_raw(state)))
        return int(probs.argmax())


def greedy_success_rate(env_factory: Callable[[], gw.GridWorld], ac_or_ckpt,
                        episodes: int, seed: int) -> tuple[float, float]:
    """(success rate, mean reward) of the greedy policy on seeded episodes."""
    if isinstance(ac_or_ckpt, ActorCritic):
        def policy(feats):
            probs, _, _ = ac_or_ckpt.forward(feats[None, :])
            return int(probs[0].argmax())
    else:
        spec, params = ac_or_ckpt.spec, ac_or_ckpt.params

        def policy(feats):
            return int(nnet.forward(spec, params, feats).argmax())

    env = env_factory()
    seeds = np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint64)
    successes = 0
    total = 0.0
    for ep_seed in seeds:
        r = env.reset(int(ep_seed))
        ep_reward = 0
        while not r.terminated:
            r = env.step(policy(gw.featurize_raw(r.raw_obs)))
            ep_reward += r.reward
        successes += ep_reward == env.max_reward
        total += ep_reward
    return successes / episodes, total / episodes


@dataclass
class TrainResult:
    checkpoint: nnet.PolicyCheckpoint
    history: list[dict]
    env_steps: int
    success_rate: float
    mean_reward: float
    reached_threshold: bool


def train_policy(env_factory: Callable[[], gw.GridWorld], label: str,
                 config: PpoConfig, seed: int,
                 log: Optional[Callable[[dict], None]] = None,
                 sized_env_factory: Optional[Callable[[int, int], gw.GridWorld]] = None,
                 eval_env_factory: Optional[Callable[[], gw.GridWorld]] = None,
                 ) -> TrainResult:
    """PPO loop with optional curriculum phases, periodic greedy probes on
    the target task, and deterministic early stop."""
    eval_env_factory = eval_env_factory or env_factory
    ss = np.random.SeedSequence(seed)
    init_ss, update_ss, *env_ss = ss.spawn(2 + config.n_envs)
    rng_init = np.random.default_rng(init_ss)
    rng_update = np.random.default_rng(update_ss)
    env_rngs = [np.random.default_rng(s) for s in env_ss]

    phases: list[tuple[Callable[[], gw.GridWorld], int, float]] = []
    if sized_env_factory is not None:
        for side, phase_steps, ent in config.curriculum:
            phases.append((lambda s=side: sized_env_factory(s, s), phase_steps, ent))
    warmup = sum(p[1] for p in phases)
    if warmup >= config.total_steps:
        raise ConfigError(f"curriculum consumes {warmup} of {config.total_steps} steps, "
                          "leaving nothing for the target task")
    phases.append((env_factory, config.total_steps - warmup, config.entropy_coef))

    ac = ActorCritic(gw.FEAT_DIM, config.hidden_dims, gw.N_ACTIONS, rng_init)
    opt = nnet.OptState.zeros(ac.n_params)

    steps = 0
    iteration = 0
    history: list[dict] = []
    stopped_early = False
    for phase_idx, (factory, phase_budget, entropy_coef) in enumerate(phases):
        final_phase = phase_idx == len(phases) - 1
        over = {"entropy_coef": entropy_coef}
        if final_phase and config.lr_final is not None:
            over["lr"] = config.lr_final
        phase_config = _replace_dc(config, **over)
        envs = [factory() for _ in range(config.n_envs)]
        episode_rewards = [0.0] * config.n_envs
        recent_returns: list[float] = []
        phase_steps = 0
        while phase_steps < phase_budget:
            iteration += 1
            batch = collect_rollouts(envs, ac, config.n_steps, env_rngs, episode_rewards)
            phase_steps += batch.size
            steps += batch.size
            opt, stats = ppo_update(ac, opt, batch, phase_config, rng_update)
            recent_returns.extend(batch.episode_returns)
            recent_returns = recent_returns[-100:]
            row = {
                "iteration": iteration,
                "steps": steps,
                "phase": phase_idx,
                "mean_reward": float(np.mean(recent_returns)) if recent_returns else 0.0,
                "success_rate": float(np.mean([r == envs[0].max_reward
                                               for r in recent_returns]))
                if recent_returns else 0.0,
                "clip_frac": stats["clip_frac"],
                "entropy": stats["entropy"],
                "approx_kl": stats["approx_kl"],
                "value_loss": stats["value_loss"],
            }
            history.append(row)
            if log:
                log(row)
            if final_phase and config.eval_every and iteration % config.eval_every == 0:
                probe, _ = greedy_success_rate(eval_env_factory, ac, config.eval_episodes,
                                               seed=seed + 7_000_000)
                if probe >= config.early_stop_success:
                    stopped_early = True
                    break
        if stopped_early:
            break

    success, mean_reward = greedy_success_rate(
        eval_env_factory, ac, config.final_eval_episodes, seed=seed + 9_000_000)
    ckpt = ac.policy_checkpoint({
        "label": label,
        "seed": int(seed),
        "train_steps": int(steps),
        "success_rate": float(success),
    })
    return TrainResult(
        checkpoint=ckpt,
        history=history,
        env_steps=int(steps),
        success_rate=float(success),
        mean_reward=float(mean_reward),
        reached_threshold=bool(success >= config.success_threshold),
    )


def _replace_dc(config: PpoConfig, **over) -> PpoConfig:
    import dataclasses
    return dataclasses.replace(config, **over)


class SubskillTrainingEnv(gw.GridWorld):
    """Sub-skill env whose start distribution mirrors mid-task deployment.

    Inside the full sequential task a skill takes over right after the
    previous door opened: earlier doors stand open and the agent is adjacent
    to the last of them, facing it. Skills trained only from uniform starts
    against all-closed distractors treat those states as novel and stall
    there. Each training episode therefore opens a uniform number of
    distractor doors and, half the time, relocates the agent next to one of
    them. Everything derives from the reset seed, so episodes replay
    bit-identically; held-out evaluation keeps the plain sub-skill env.
    """

    def __init__(self, task: gw.TaskConfig, target_code: int,
                 relocate_prob: float = 0.5, min_open: int = 0):
        super().__init__(task, target_sequence=(target_code,),
                         horizon=task.subskill_horizon)
        self.target_code = target_code
        self.relocate_prob = relocate_prob
        self.min_open = min_open

    def reset(self, seed: int) -> gw.StepResult:
        import dataclasses
        super().reset(seed)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xD00])))
        state = self.state
        distractors = [i for i, d in enumerate(state.doors)
                       if d.color != self.target_code]
        n_open = int(rng.integers(min(self.min_open, len(distractors)),
                                  len(distractors) + 1))
        open_idx = set(rng.choice(distractors, size=n_open, replace=False).tolist()
                       if n_open else [])
        doors = tuple(dataclasses.replace(d, open=True) if i in open_idx else d
                      for i, d in enumerate(state.doors))
        agent_pos = state.agent_pos
        last_move_dir = state.last_move_dir
        if open_idx and rng.random() < self.relocate_prob:
            door = doors[int(rng.choice(sorted(open_idx)))]
            free = [(door.pos[0] + dx, door.pos[1] + dy)
                    for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0))
                    if state.cells[door.pos[1] + dy, door.pos[0] + dx] == gw.CELL_EMPTY]
            if free:
                agent_pos = free[int(rng.integers(len(free)))]
                last_move_dir = (door.pos[0] - agent_pos[0], door.pos[1] - agent_pos[1])
        self.state = dataclasses.replace(state, doors=doors, agent_pos=agent_pos,
                                         last_move_dir=last_move_dir)
        return gw.StepResult(raw_obs=gw.observe_raw(self.state),
                             min_obs=gw.observe_min(self.state),
                             reward=0, terminated=False,
                             info={"stage": 0, "t": 0})


def train_subskill(color, task: gw.TaskConfig, config: PpoConfig, seed: int,
                   log=None) -> TrainResult:
    """Train the 'open the <color> door' policy; see train_policy."""
    import dataclasses
    code = gw.color_code(color) if isinstance(color, str) else int(color)

    def sized(width: int, height: int) -> gw.GridWorld:
        small = dataclasses.replace(task, grid_width=width, grid_height=height)
        return SubskillTrainingEnv(small, code)

    return train_policy(lambda: SubskillTrainingEnv(task, code),
                        f"open-{gw.color_name(code)}", config, seed, log=log,
                        sized_env_factory=sized,
                        eval_env_factory=lambda: gw.make_subskill_env(task, code))


def train_flat_ppo(task: gw.TaskConfig, config: PpoConfig, seed: int,
                   log=None) -> TrainResult:
    """Flat PPO baseline on the full sequential task (no curriculum)."""
    return train_policy(lambda: gw.GridWorld(task), "flat-ppo", config, seed, log=log)
