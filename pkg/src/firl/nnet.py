"""Minimal float64 MLP core: forward, explicit backprop, Adam, checkpoints.

Every policy in the package (sub-skills, controller, behavior cloning) is a
plain fully-connected net built from these pieces. Weights use the
(fan_in, fan_out) layout so a batch forward is `X @ W + b`. The softmax head
returns probabilities; backward() takes the upstream gradient with respect
to the head output and pushes it through the softmax Jacobian, so callers
only ever differentiate their loss w.r.t. what forward() returns.

forward/backward never mutate parameters; the optimizer returns fresh
parameter and moment containers.
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CheckpointError, ConfigError, FirlError

CHECKPOINT_FORMAT = "firl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"   # tanh | relu
    head: str = "softmax"      # softmax | linear

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must be non-empty")
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be >= 1, got {dims}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.head not in ("softmax", "linear"):
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["output_dim"],
                   d.get("activation", "tanh"), d.get("head", "softmax"))


@dataclass
class ParameterSet:
    """Per-layer weight matrices and bias vectors, flat-indexable."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def size(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def to_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat: np.ndarray) -> "ParameterSet":
        flat = np.asarray(flat, dtype=np.float64)
        weights, biases = [], []
        k = 0
        for n_in, n_out in spec.layer_dims:
            weights.append(flat[k:k + n_in * n_out].reshape(n_in, n_out).copy())
            k += n_in * n_out
            biases.append(flat[k:k + n_out].copy())
            k += n_out
        if k != flat.size:
            raise CheckpointError(f"flat array has {flat.size} entries, spec wants {k}")
        return cls(weights, biases)

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.weights + self.biases)


# A gradient has exactly the shape of the parameters it differentiates.
Gradient = ParameterSet


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParameterSet:
    """Scaled-uniform fan-in init: U(-1/sqrt(n_in), 1/sqrt(n_in)); zero biases."""
    weights, biases = [], []
    for n_in, n_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return ParameterSet(weights, biases)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(spec: MlpSpec, params: ParameterSet, X: np.ndarray,
                  _cache: Optional[list] = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise FirlError(f"input shape {X.shape} does not match input_dim {spec.input_dim}")
    if not np.isfinite(X).all():
        raise FirlError("non-finite network input")
    h = X
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        h = _activate(h @ params.weights[i] + params.biases[i], spec.activation)
        if _cache is not None:
            _cache.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    if spec.head == "softmax":
        out = softmax(out)
    return out


def forward(spec: MlpSpec, params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Single-input forward pass; softmax head output sums to 1."""
    return forward_batch(spec, params, np.asarray(x, dtype=np.float64)[None, :])[0]


def backward_batch(spec: MlpSpec, params: ParameterSet, X: np.ndarray,
                   upstream: np.ndarray) -> Gradient:
    """dLoss/dParams summed over the batch, given dLoss/dOutput rows.

    For the softmax head, `upstream` is the gradient w.r.t. the output
    probabilities and is mapped through the softmax Jacobian.
    """
    X = np.asarray(X, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    hiddens: list[np.ndarray] = []
    out = forward_batch(spec, params, X, _cache=hiddens)
    if upstream.shape != out.shape:
        raise FirlError(f"upstream shape {upstream.shape} does not match output {out.shape}")

    if spec.head == "softmax":
        # dL/dz = p * (u - sum_j u_j p_j)
        dot = (upstream * out).sum(axis=1, keepdims=True)
        delta = out * (upstream - dot)
    else:
        delta = upstream

    acts = [X] + hiddens  # inputs to each layer
    n_layers = len(params.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        d_weights[i] = acts[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i].T
            h = acts[i]
            if spec.activation == "tanh":
                delta = delta * (1.0 - h * h)
            else:
                delta = delta * (h > 0)
    return Gradient(d_weights, d_biases)


def backward(spec: MlpSpec, params: ParameterSet, x: np.ndarray,
             upstream: np.ndarray) -> Gradient:
    return backward_batch(spec, params,
                          np.asarray(x, dtype=np.float64)[None, :],
                          np.asarray(upstream, dtype=np.float64)[None, :])


@dataclass
class OptState:
    """Adam moments (first/second) and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "OptState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(params: ParameterSet, grad: Gradient, state: OptState,
                   lr: float) -> tuple[ParameterSet, OptState]:
    """One Adam update; rejects non-finite gradients, returns fresh objects."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    g = grad.to_flat()
    if not np.isfinite(g).all():
        raise FirlError("non-finite gradient entries passed to the optimizer")
    p = params.to_flat()
    if g.size != p.size:
        raise FirlError(f"gradient size {g.size} does not match parameter size {p.size}")
    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * g * g
    m_hat = m / (1 - ADAM_BETA1 ** t)
    v_hat = v / (1 - ADAM_BETA2 ** t)
    p = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return _from_flat_like(params, p), OptState(m, v, t)


def _from_flat_like(template: ParameterSet, flat: np.ndarray) -> ParameterSet:
    """Split a flat vector along the template's array shapes (to_flat order)."""
    weights, biases = [], []
    k = 0
    for w, b in zip(template.weights, template.biases):
        weights.append(flat[k:k + w.size].reshape(w.shape).copy())
        k += w.size
        biases.append(flat[k:k + b.size].copy())
        k += b.size
    return ParameterSet(weights, biases)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector under the given RNG."""
    probs = np.asarray(probs, dtype=np.float64)
    total = probs.sum()
    if abs(total - 1.0) > 1e-6 or (probs < 0).any():
        raise FirlError(f"not a probability vector (sum={total})")
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u * total, side="right").clip(0, probs.size - 1))


# ---------------------------------------------------------------------------
# Checkpoints

@dataclass
class PolicyCheckpoint:
    """Serialized net: spec + flat little-endian float64 params + metadata."""

    spec: MlpSpec
    params: ParameterSet
    meta: dict = field(default_factory=dict)

    def checksum(self) -> str:
        return _checksum(self.spec, self.params, self.meta)

    def save(self, path) -> str:
        payload = _payload(self.spec, self.params, self.meta)
        payload["checksum"] = self.checksum()
        with open(path, "w") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")
        return payload["checksum"]

    @classmethod
    def load(cls, path) -> "PolicyCheckpoint":
        try:
            with open(path) as f:
                payload = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {payload.get('version')}")
        spec = MlpSpec.from_dict(payload["spec"])
        raw = base64.b64decode(payload["params_b64"])
        flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        params = ParameterSet.from_flat(spec, flat)
        ckpt = cls(spec, params, payload.get("meta", {}))
        if ckpt.checksum() != payload.get("checksum"):
            raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
        return ckpt


def _payload(spec: MlpSpec, params: ParameterSet, meta: dict) -> dict:
    flat = params.to_flat().astype("<f8")
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "meta": meta,
        "params_b64": base64.b64encode(flat.tobytes()).decode("ascii"),
    }


def _checksum(spec: MlpSpec, params: ParameterSet, meta: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"spec": spec.to_dict(), "meta": meta}, sort_keys=True).encode())
    h.update(params.to_flat().astype("<f8").tobytes())
    return h.hexdigest()
