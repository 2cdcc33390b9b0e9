import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adhd_eeg.nnkit import (
    Adam, AdamState, GraphCycle, LayerSpec, ModelSpec, Network, Parameter, Tensor, adam_step, backward,
    bce_loss, check_gradients, concat_features, dense_apply, flatten_seq, grad_check, gru_apply,
    load_checkpoint, lstm_apply, no_grad, relative_error, save_checkpoint, sigmoid, time_distributed_dense,
    weighted_sum,
)
from adhd_eeg.nnkit import ops
from adhd_eeg.nnkit.init import glorot_uniform, orthogonal
from adhd_eeg.nnkit.tensor import record

TOL = 1e-6


def P(rng, *shape, scale=0.5, name=None):
    return Parameter(rng.standard_normal(shape) * scale, name or f"p{shape}")


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_scalar(x, W, U, b):
    """Element-by-element LSTM, gate blocks (i, f, c~, o)."""
    B, T, I = x.shape
    H = U.shape[0]
    out = np.zeros((B, T, H))
    for n in range(B):
        h, c = [0.0] * H, [0.0] * H
        for t in range(T):
            a = [b[j] + sum(x[n, t, k] * W[k, j] for k in range(I)) + sum(h[m] * U[m, j] for m in range(H))
                 for j in range(4 * H)]
            h_new, c_new = [], []
            for u in range(H):
                i, f = sig(a[u]), sig(a[H + u])
                g, o = math.tanh(a[2 * H + u]), sig(a[3 * H + u])
                cu = f * c[u] + i * g
                c_new.append(cu)
                h_new.append(o * math.tanh(cu))
            h, c = h_new, c_new
            out[n, t] = h
    return out


def gru_scalar(x, W, U, b):
    """Element-by-element GRU, gate blocks (z, r, h~), reset applied before the recurrent matmul."""
    B, T, I = x.shape
    H = U.shape[0]
    out = np.zeros((B, T, H))
    for n in range(B):
        h = [0.0] * H
        for t in range(T):
            xw = [b[j] + sum(x[n, t, k] * W[k, j] for k in range(I)) for j in range(3 * H)]
            z = [sig(xw[u] + sum(h[m] * U[m, u] for m in range(H))) for u in range(H)]
            r = [sig(xw[H + u] + sum(h[m] * U[m, H + u] for m in range(H))) for u in range(H)]
            cand = [math.tanh(xw[2 * H + u] + sum(r[m] * h[m] * U[m, 2 * H + u] for m in range(H)))
                    for u in range(H)]
            h = [(1 - z[u]) * h[u] + z[u] * cand[u] for u in range(H)]
            out[n, t] = h
    return out


# forward contracts

def test_dense_examples():
    x = np.array([[1.0, -2.0]])
    np.testing.assert_array_equal(dense_apply(x, np.eye(2), np.zeros(2)).data, x)
    assert dense_apply([[1.0, -1.0]], [[1.0], [1.0]], [0.0], "relu").data.tolist() == [[0.0]]
    assert sigmoid(np.array(0.0)) == 0.5


def test_sigmoid_extremes_finite():
    z = np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[-1] == 1.0


def test_lstm_zero_weights(rng):
    x = rng.standard_normal((2, 5, 3))
    out = lstm_apply(x, np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    assert not out.data.any()


def test_gru_zero_weights(rng):
    x = rng.standard_normal((2, 5, 3))
    assert not gru_apply(x, np.zeros((3, 6)), np.zeros((2, 6)), np.zeros(6)).data.any()


@pytest.mark.parametrize("apply,gates", [(lstm_apply, 4), (gru_apply, 3)])
def test_single_step_sequence_equivalence(rng, apply, gates):
    x = rng.standard_normal((2, 1, 3))
    W, U, b = rng.standard_normal((3, 2 * gates)), rng.standard_normal((2, 2 * gates)), rng.standard_normal(2 * gates)
    seq = apply(x, W, U, b, return_sequences=True).data
    last = apply(x, W, U, b, return_sequences=False).data
    assert seq.shape == (2, 1, 2) and last.shape == (2, 2)
    np.testing.assert_array_equal(seq[:, 0], last)


def test_lstm_matches_scalar_oracle(rng):
    x, W, U, b = rng.standard_normal((2, 4, 2)), rng.standard_normal((2, 12)), rng.standard_normal((3, 12)), rng.standard_normal(12)
    np.testing.assert_allclose(lstm_apply(x, W, U, b).data, lstm_scalar(x, W, U, b), atol=1e-12, rtol=0)


def test_gru_matches_scalar_oracle(rng):
    x, W, U, b = rng.standard_normal((2, 4, 2)), rng.standard_normal((2, 9)), rng.standard_normal((3, 9)), rng.standard_normal(9)
    np.testing.assert_allclose(gru_apply(x, W, U, b).data, gru_scalar(x, W, U, b), atol=1e-12, rtol=0)


def test_time_distributed_equals_slice_loop(rng):
    x, W, b = rng.standard_normal((3, 5, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    out = time_distributed_dense(x, W, b, "relu").data
    ref = np.stack([dense_apply(x[:, t], W, b, "relu").data for t in range(5)], axis=1)
    np.testing.assert_allclose(out, ref, atol=1e-15, rtol=0)
    np.testing.assert_allclose(time_distributed_dense(x[:, :1], W, b).data[:, 0], dense_apply(x[:, 0], W, b).data,
                               atol=1e-15, rtol=0)


def test_concat_and_flatten_layout(rng):
    a, b = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 3))
    c = concat_features([a, b]).data
    assert c.shape == (2, 3, 5)
    np.testing.assert_array_equal(c[..., :2], a)
    np.testing.assert_array_equal(c[..., 2:], b)
    assert flatten_seq(np.array([[[1.0, 2.0], [3.0, 4.0]]])).data.tolist() == [[1.0, 2.0, 3.0, 4.0]]


def test_bce_values():
    assert bce_loss([[1.0], [0.0]], [1, 0]).data == pytest.approx(-math.log(1 - 1e-7))
    assert bce_loss([[0.5], [0.5]], [1, 0]).data == pytest.approx(math.log(2))
    assert bce_loss([[0.9], [0.2]], [1, 0]).data == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.integers(0, 1))
def test_bce_finite_on_closed_interval(ps, y):
    assert np.isfinite(bce_loss(np.array(ps)[:, None], [y] * len(ps)).data)


# tape

def test_sigmoid_derivative_at_zero():
    x = Tensor(np.zeros((1, 1)), requires_grad=True)
    backward(weighted_sum(ops.activation(x, "sigmoid"), np.ones((1, 1))))
    assert x.grad[0, 0] == 0.25


def test_gradient_accumulates_over_shared_use():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = concat_features([x, x])
    backward(weighted_sum(y, np.array([[3.0, 4.0]])))
    assert x.grad[0, 0] == 7.0


def test_cycle_detected():
    a = Tensor(np.ones(1), requires_grad=True)
    b = record(a.data * 2, (a,), lambda g: (2 * g,))
    a.parents, a.backward_fn = (b,), (lambda g: (g,))
    with pytest.raises(GraphCycle):
        backward(b)


def test_no_grad_records_nothing(rng):
    W = P(rng, 2, 2)
    with no_grad():
        out = dense_apply(rng.standard_normal((1, 2)), W, np.zeros(2))
    assert not out.requires_grad and out.parents == ()


# gradient checks, one per layer type

def probe(out, rng):
    return rng.standard_normal(out.shape)


def check_layer(build, tensors, rng):
    weights = probe(build(), rng)
    report = check_gradients(lambda: weighted_sum(build(), weights), tensors, tol=TOL)
    assert report.passed, report.summary()
    return report


def test_grad_dense(rng):
    x, W, b = P(rng, 3, 4, name="x"), P(rng, 4, 2, name="W"), P(rng, 2, name="b")
    for act in ("none", "relu", "sigmoid"):
        check_layer(lambda: dense_apply(x, W, b, act), [x, W, b], rng)


def test_grad_lstm(rng):
    x, W, U, b = P(rng, 2, 4, 3, name="x"), P(rng, 3, 12, name="W"), P(rng, 3, 12, name="U"), P(rng, 12, name="b")
    for seq in (True, False):
        check_layer(lambda: lstm_apply(x, W, U, b, seq), [x, W, U, b], rng)


def test_grad_gru(rng):
    x, W, U, b = P(rng, 2, 4, 3, name="x"), P(rng, 3, 9, name="W"), P(rng, 3, 9, name="U"), P(rng, 9, name="b")
    for seq in (True, False):
        check_layer(lambda: gru_apply(x, W, U, b, seq), [x, W, U, b], rng)


def test_grad_time_distributed(rng):
    x, W, b = P(rng, 2, 5, 3, name="x"), P(rng, 3, 4, name="W"), P(rng, 4, name="b")
    check_layer(lambda: time_distributed_dense(x, W, b, "relu"), [x, W, b], rng)


def test_grad_concat_flatten(rng):
    a, b = P(rng, 2, 3, 2, name="a"), P(rng, 2, 3, 4, name="b")
    check_layer(lambda: flatten_seq(concat_features([a, b])), [a, b], rng)


def test_grad_bce(rng):
    p = Parameter(rng.uniform(0.05, 0.95, size=(6, 1)), "p")
    y = rng.integers(0, 2, 6)
    report = check_gradients(lambda: bce_loss(p, y), [p], tol=TOL)
    assert report.passed, report.summary()


def toy_model(trainable_hidden=True):
    layers = [LayerSpec("input", "input"),
              LayerSpec("hidden", "dense", ("input",), 4, "relu", trainable=trainable_hidden),
              LayerSpec("output", "dense", ("hidden",), 1, "sigmoid")]
    return ModelSpec(layers, "output", (3,), "toy")


def test_grad_check_toy_passes(rng):
    net = Network(toy_model(), seed=0)
    report = grad_check(net, rng.standard_normal((5, 3)), rng.integers(0, 2, 5), tol=1e-6)
    assert report.passed, report.summary()


def test_grad_check_detects_sign_flip(rng, monkeypatch):
    x, W, b = P(rng, 3, 4, name="x"), P(rng, 4, 2, name="W"), P(rng, 2, name="b")
    real = ops.dense_apply

    def flipped(x, W, b, act="none"):
        out = real(x, W, b, act)
        fn = out.backward_fn
        out.backward_fn = lambda g: tuple(None if v is None else -v for v in fn(g))
        return out

    weights = rng.standard_normal((3, 2))
    report = check_gradients(lambda: weighted_sum(flipped(x, W, b), weights), [x, W, b], tol=1e-6)
    assert not report.passed
    assert report.max_rel_error == pytest.approx(2.0, abs=1e-3)


def test_grad_check_excludes_frozen(rng):
    net = Network(toy_model(trainable_hidden=False), seed=0)
    report = grad_check(net, rng.standard_normal((4, 3)), [0, 1, 0, 1])
    assert set(report.per_param) == {"output/kernel", "output/bias"}


def test_relative_error_definition():
    assert relative_error(1.0, -1.0) == 2.0
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)


# optimiser

def test_adam_zero_grad_keeps_params():
    p = Parameter(np.array([1.0, -2.0]), "p")
    state = AdamState()
    adam_step([p], {"p": np.zeros(2)}, state)
    assert p.data.tolist() == [1.0, -2.0] and state.step == 1


def test_adam_first_step_hand_value():
    p = Parameter(np.array([0.0]), "p")
    adam_step([p], {"p": np.array([1.0])}, AdamState())
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-7), rel=1e-15)


def test_adam_frozen_bit_identical():
    p = Parameter(np.array([0.3, 0.7]), "p", trainable=False)
    before = p.data.tobytes()
    adam_step([p], {"p": np.array([5.0, -5.0])}, AdamState())
    assert p.data.tobytes() == before


def test_adam_matches_reference_loop(rng):
    p = Parameter(rng.standard_normal(3), "p")
    ref = p.data.copy()
    m = v = np.zeros(3)
    opt = Adam([p], lr=0.01)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-7)
    np.testing.assert_allclose(p.data, ref, rtol=1e-14)


# initialisation, network, checkpoints

def test_init_schemes(rng):
    W = glorot_uniform(rng, 30, 20)
    assert np.abs(W).max() <= math.sqrt(6 / 50)
    Q = orthogonal(rng, 16, 48)
    np.testing.assert_allclose(Q @ Q.T, np.eye(16), atol=1e-12)
    S = orthogonal(rng, 48, 16)
    np.testing.assert_allclose(S.T @ S, np.eye(16), atol=1e-12)


def test_lstm_forget_bias_is_one():
    spec = ModelSpec([LayerSpec("input", "input"), LayerSpec("l", "lstm", ("input",), 3)], "l", (4, 1))
    b = Network(spec).params["l/bias"].data
    assert b.tolist() == [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0]


def test_network_deterministic_init():
    a, b = Network(toy_model(), seed=5), Network(toy_model(), seed=5)
    assert a.state_bytes() == b.state_bytes()
    assert a.state_bytes() != Network(toy_model(), seed=6).state_bytes()


def test_spec_cycle_rejected():
    layers = [LayerSpec("input", "input"), LayerSpec("a", "dense", ("b",), 2), LayerSpec("b", "dense", ("a",), 2)]
    with pytest.raises(GraphCycle):
        ModelSpec(layers, "b", (3,))


def test_checkpoint_roundtrip(tmp_path, rng):
    net = Network(toy_model(trainable_hidden=False), seed=3)
    save_checkpoint(net, tmp_path / "ck", epoch=2)
    back, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["epoch"] == 2
    assert back.state_bytes() == net.state_bytes()
    assert not back.params["hidden/kernel"].trainable
    X = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(back.predict_proba(X), net.predict_proba(X))
