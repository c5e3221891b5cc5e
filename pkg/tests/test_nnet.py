import json
import math

import numpy as np
import pytest

from firl import nnet
from firl.errors import CheckpointError, ConfigError, FirlError


def zero_params(spec):
    return nnet.ParameterSet(
        [np.zeros((n_in, n_out)) for n_in, n_out in spec.layer_dims],
        [np.zeros(n_out) for _, n_out in spec.layer_dims],
    )


def finite_diff_grad(spec, params, x, upstream, eps=1e-5):
    """Central-difference gradient of L = upstream . forward(x) per parameter."""

    def loss(flat):
        p = nnet.ParameterSet.from_flat(spec, flat)
        return float(np.dot(upstream, nnet.forward(spec, p, x)))

    flat = params.to_flat()
    g = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += eps
        down[i] -= eps
        g[i] = (loss(up) - loss(down)) / (2 * eps)
    return g


# ---------------------------------------------------------------------------
# forward

def test_forward_zero_weights_softmax_uniform():
    spec = nnet.MlpSpec(4, (5,), 3, head="softmax")
    out = nnet.forward(spec, zero_params(spec), np.ones(4))
    assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_forward_zero_weights_linear_zero():
    spec = nnet.MlpSpec(4, (5,), 3, head="linear")
    out = nnet.forward(spec, zero_params(spec), np.ones(4))
    assert np.array_equal(out, np.zeros(3))


def test_forward_121_tanh_fixture():
    spec = nnet.MlpSpec(1, (2,), 1, activation="tanh", head="linear")
    params = nnet.ParameterSet(
        [np.array([[0.3, -0.2]]), np.array([[0.5], [-0.7]])],
        [np.array([0.1, -0.4]), np.array([0.2])],
    )
    x = 0.8
    h1 = math.tanh(0.3 * x + 0.1)
    h2 = math.tanh(-0.2 * x - 0.4)
    expected = 0.5 * h1 - 0.7 * h2 + 0.2
    out = nnet.forward(spec, params, np.array([x]))
    assert abs(out[0] - expected) < 1e-12


def test_forward_softmax_valid_distribution(rng):
    for _ in range(30):
        spec = nnet.MlpSpec(6, (8, 5), 4, head="softmax")
        params = nnet.init_params(spec, rng)
        out = nnet.forward(spec, params, rng.normal(size=6) * 5)
        assert abs(out.sum() - 1.0) < 1e-9
        assert (out >= 0).all()


def test_forward_dimension_mismatch():
    spec = nnet.MlpSpec(4, (5,), 3)
    with pytest.raises(FirlError):
        nnet.forward(spec, zero_params(spec), np.ones(5))


def test_forward_rejects_non_finite_input():
    spec = nnet.MlpSpec(2, (3,), 2)
    with pytest.raises(FirlError):
        nnet.forward(spec, zero_params(spec), np.array([1.0, np.nan]))


def test_forward_does_not_mutate_params(rng):
    spec = nnet.MlpSpec(3, (4,), 2)
    params = nnet.init_params(spec, rng)
    before = params.to_flat().copy()
    nnet.forward(spec, params, np.ones(3))
    nnet.backward(spec, params, np.ones(3), np.ones(2))
    assert np.array_equal(params.to_flat(), before)


# ---------------------------------------------------------------------------
# backward

def test_backward_zero_upstream_zero_gradient(rng):
    spec = nnet.MlpSpec(3, (4,), 2, head="softmax")
    params = nnet.init_params(spec, rng)
    g = nnet.backward(spec, params, rng.normal(size=3), np.zeros(2))
    assert np.array_equal(g.to_flat(), np.zeros(params.size))


def test_backward_additive_in_upstream(rng):
    spec = nnet.MlpSpec(3, (6,), 4, head="linear")
    params = nnet.init_params(spec, rng)
    x = rng.normal(size=3)
    u1, u2 = rng.normal(size=4), rng.normal(size=4)
    g1 = nnet.backward(spec, params, x, u1).to_flat()
    g2 = nnet.backward(spec, params, x, u2).to_flat()
    g12 = nnet.backward(spec, params, x, u1 + u2).to_flat()
    assert np.allclose(g1 + g2, g12, atol=1e-12)


def draw_kink_free_input(spec, params, rng, margin=1e-3):
    """Sample an input whose relu preactivations stay clear of the kink,
    where central differences are meaningless."""
    for _ in range(200):
        x = rng.normal(size=spec.input_dim)
        if spec.activation != "relu":
            return x
        h, ok = x, True
        for i in range(len(params.weights) - 1):
            z = h @ params.weights[i] + params.biases[i]
            if np.abs(z).min() < margin:
                ok = False
                break
            h = np.maximum(z, 0.0)
        if ok:
            return x
    raise AssertionError("could not find a kink-free input")


@pytest.mark.parametrize("activation,head", [
    ("tanh", "softmax"), ("tanh", "linear"), ("relu", "softmax"), ("relu", "linear"),
])
def test_backward_matches_finite_differences(activation, head, rng):
    spec = nnet.MlpSpec(4, (6, 5), 3, activation=activation, head=head)
    params = nnet.init_params(spec, rng)
    x = draw_kink_free_input(spec, params, rng)
    upstream = rng.normal(size=3)
    analytic = nnet.backward(spec, params, x, upstream).to_flat()
    numeric = finite_diff_grad(spec, params, x, upstream)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() < 1e-4


def test_backward_gradient_property_randomized_specs():
    rng = np.random.default_rng(42)
    worst_overall = 0.0
    fractions = []
    for trial in range(20):
        dims = rng.integers(1, 9, size=rng.integers(1, 3) + 1)
        spec = nnet.MlpSpec(
            int(rng.integers(1, 9)), tuple(int(d) for d in dims), int(rng.integers(1, 9)),
            activation=("tanh", "relu")[trial % 2],
            head=("softmax", "linear")[(trial // 2) % 2],
        )
        params = nnet.init_params(spec, rng)
        x = draw_kink_free_input(spec, params, rng)
        upstream = rng.normal(size=spec.output_dim)
        analytic = nnet.backward(spec, params, x, upstream).to_flat()
        numeric = finite_diff_grad(spec, params, x, upstream)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
        rel = np.abs(analytic - numeric) / denom
        fractions.append((rel < 1e-4).mean())
        worst_overall = max(worst_overall, rel.max())
    assert np.mean(fractions) >= 0.99
    assert worst_overall < 1e-3


def test_backward_upstream_shape_mismatch(rng):
    spec = nnet.MlpSpec(3, (4,), 2)
    params = nnet.init_params(spec, rng)
    with pytest.raises(FirlError):
        nnet.backward(spec, params, np.ones(3), np.ones(3))


# ---------------------------------------------------------------------------
# optimizer

def scalar_params(value=1.0):
    spec = nnet.MlpSpec(1, (1,), 1, head="linear")
    p = zero_params(spec)
    p.weights[0][0, 0] = value
    return spec, p


def test_adam_zero_gradient_fresh_state_no_move(rng):
    spec = nnet.MlpSpec(2, (3,), 2)
    params = nnet.init_params(spec, rng)
    grad = nnet.Gradient([np.zeros_like(w) for w in params.weights],
                         [np.zeros_like(b) for b in params.biases])
    state = nnet.OptState.zeros(params.size)
    new_params, new_state = nnet.optimizer_step(params, grad, state, lr=0.1)
    assert np.array_equal(new_params.to_flat(), params.to_flat())
    assert new_state.t == 1


def test_adam_moments_decay_on_zero_gradient():
    spec, params = scalar_params()
    grad = nnet.Gradient([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
    state = nnet.OptState(m=np.full(params.size, 1.0), v=np.full(params.size, 1.0), t=5)
    _, new_state = nnet.optimizer_step(params, grad, state, lr=0.001)
    assert np.allclose(new_state.m, 0.9)
    assert np.allclose(new_state.v, 0.999)


def test_adam_first_step_moves_by_lr():
    # hand evaluation at t=1: m_hat = v_hat = 1 -> step = lr / (1 + eps)
    spec, params = scalar_params(1.0)
    grad = nnet.Gradient([np.array([[1.0]]), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
    state = nnet.OptState.zeros(params.size)
    new_params, _ = nnet.optimizer_step(params, grad, state, lr=0.001)
    moved = params.weights[0][0, 0] - new_params.weights[0][0, 0]
    assert abs(moved - 0.001) < 1e-9


def test_adam_repeated_steps_monotone():
    spec, params = scalar_params(1.0)
    state = nnet.OptState.zeros(params.size)
    values = [params.weights[0][0, 0]]
    for _ in range(5):
        grad = nnet.Gradient([np.array([[1.0]]), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
        params, state = nnet.optimizer_step(params, grad, state, lr=0.01)
        values.append(params.weights[0][0, 0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_rejects_non_finite_gradient():
    spec, params = scalar_params()
    grad = nnet.Gradient([np.array([[np.inf]]), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
    with pytest.raises(FirlError):
        nnet.optimizer_step(params, grad, nnet.OptState.zeros(params.size), lr=0.01)


def test_adam_rejects_non_positive_lr():
    spec, params = scalar_params()
    grad = nnet.Gradient([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
    with pytest.raises(ConfigError):
        nnet.optimizer_step(params, grad, nnet.OptState.zeros(params.size), lr=0.0)


# ---------------------------------------------------------------------------
# categorical sampling

def test_sample_categorical_degenerate():
    rng = np.random.default_rng(0)
    assert all(nnet.sample_categorical(np.array([1.0, 0.0, 0.0]), rng) == 0 for _ in range(50))


def test_sample_categorical_frequencies():
    rng = np.random.default_rng(123)
    draws = [nnet.sample_categorical(np.array([0.5, 0.5]), rng) for _ in range(10000)]
    frac = np.mean(draws)
    assert abs(frac - 0.5) < 0.03  # binomial 4-sigma bound is ~0.02


def test_sample_categorical_deterministic_given_seed():
    a = [nnet.sample_categorical(np.array([0.2, 0.3, 0.5]), np.random.default_rng(7))
         for _ in range(1)]
    rng1 = np.random.default_rng(7)
    rng2 = np.random.default_rng(7)
    seq1 = [nnet.sample_categorical(np.array([0.2, 0.3, 0.5]), rng1) for _ in range(100)]
    seq2 = [nnet.sample_categorical(np.array([0.2, 0.3, 0.5]), rng2) for _ in range(100)]
    assert seq1 == seq2


def test_sample_categorical_rejects_unnormalized():
    with pytest.raises(FirlError):
        nnet.sample_categorical(np.array([0.5, 0.6]), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    spec = nnet.MlpSpec(7, (5, 4), 3, head="softmax")
    params = nnet.init_params(spec, rng)
    ckpt = nnet.PolicyCheckpoint(spec, params, {"seed": 1, "train_steps": 0, "label": "test"})
    path = tmp_path / "p.ckpt"
    checksum = ckpt.save(path)
    loaded = nnet.PolicyCheckpoint.load(path)
    assert loaded.spec == spec
    assert loaded.meta["label"] == "test"
    assert loaded.checksum() == checksum
    x = rng.normal(size=7)
    assert np.array_equal(nnet.forward(spec, params, x), nnet.forward(spec, loaded.params, x))


def test_checkpoint_checksum_stable_across_saves(tmp_path, rng):
    spec = nnet.MlpSpec(3, (4,), 2)
    params = nnet.init_params(spec, rng)
    ckpt = nnet.PolicyCheckpoint(spec, params, {"seed": 9})
    c1 = ckpt.save(tmp_path / "a.ckpt")
    c2 = ckpt.save(tmp_path / "b.ckpt")
    assert c1 == c2
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_tamper_detected(tmp_path, rng):
    spec = nnet.MlpSpec(3, (4,), 2)
    ckpt = nnet.PolicyCheckpoint(spec, nnet.init_params(spec, rng), {})
    path = tmp_path / "p.ckpt"
    ckpt.save(path)
    payload = json.loads(path.read_text())
    blob = bytearray(payload["params_b64"].encode())
    blob[10] = ord("A") if blob[10] != ord("A") else ord("B")
    payload["params_b64"] = blob.decode()
    path.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError) as exc:
        nnet.PolicyCheckpoint.load(path)
    assert "p.ckpt" in str(exc.value)


def test_checkpoint_rejects_wrong_format(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(CheckpointError):
        nnet.PolicyCheckpoint.load(path)
