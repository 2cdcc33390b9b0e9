"""Differentiable layer ops with hand-written adjoints.

Shapes follow the batch-major convention: dense inputs are ``[B, I]``,
sequence inputs ``[B, T, I]``. Kernels are stored input-major
(``W: [I, O]``) so a forward step is ``x @ W + b``.
"""
import numpy as np

from ..exceptions import NumericalError, ShapeMismatch
from .tensor import Tensor, as_tensor, record

BCE_EPSILON = 1e-7


class NonFiniteActivation(NumericalError):
    pass


def sigmoid(z):
    # exp overflow for very negative z resolves to exactly 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _activate(z, act):
    if act == "none" or act is None:
        return z
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return sigmoid(z)
    if act == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {act!r}")


def _activation_grad(g, z, y, act):
    if act == "none" or act is None:
        return g
    if act == "relu":
        return g * (z > 0)
    if act == "sigmoid":
        return g * y * (1.0 - y)
    if act == "tanh":
        return g * (1.0 - y * y)
    raise ValueError(f"unknown activation {act!r}")


def activation(x, act):
    x = as_tensor(x)
    y = _activate(x.data, act)
    return record(y, (x,), lambda g: (_activation_grad(g, x.data, y, act),))


def _check(cond, message):
    if not cond:
        raise ShapeMismatch(message)


def dense_apply(x, W, b, act="none"):
    """``act(x @ W + b)`` for ``x: [B, I]``, ``W: [I, O]``, ``b: [O]``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    _check(x.data.ndim == 2 and W.data.ndim == 2 and x.shape[1] == W.shape[0],
           f"dense: x {x.shape} incompatible with W {W.shape}")
    _check(b.shape == (W.shape[1],), f"dense: bias {b.shape} != ({W.shape[1]},)")
    z = x.data @ W.data + b.data
    y = _activate(z, act)

    def adjoint(g):
        dz = _activation_grad(g, z, y, act)
        return dz @ W.data.T, x.data.T @ dz, dz.sum(axis=0)

    return record(y, (x, W, b), adjoint)


def time_distributed_dense(x, W, b, act="none"):
    """Dense layer applied at every time step with shared weights."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    _check(x.data.ndim == 3 and W.data.ndim == 2 and x.shape[2] == W.shape[0],
           f"time_distributed_dense: x {x.shape} incompatible with W {W.shape}")
    _check(b.shape == (W.shape[1],), f"time_distributed_dense: bias {b.shape} != ({W.shape[1]},)")
    z = x.data @ W.data + b.data
    y = _activate(z, act)

    def adjoint(g):
        dz = _activation_grad(g, z, y, act)
        return dz @ W.data.T, np.einsum("bti,bto->io", x.data, dz), dz.sum(axis=(0, 1))

    return record(y, (x, W, b), adjoint)


def _check_recurrent(x, W, U, b, gates, kind):
    _check(x.data.ndim == 3, f"{kind}: input must be [B, T, I], got {x.shape}")
    H = U.shape[0]
    _check(U.shape == (H, gates * H), f"{kind}: recurrent kernel {U.shape} != ({H}, {gates * H})")
    _check(W.shape == (x.shape[2], gates * H), f"{kind}: kernel {W.shape} != ({x.shape[2]}, {gates * H})")
    _check(b.shape == (gates * H,), f"{kind}: bias {b.shape} != ({gates * H},)")
    return H


def _finish(kind, hs, return_sequences):
    if not np.isfinite(hs).all():
        raise NonFiniteActivation(f"{kind} produced non-finite activations")
    return hs if return_sequences else hs[:, -1, :]


def lstm_apply(x, W, U, b, return_sequences=True):
    """LSTM over ``x: [B, T, I]`` with zero initial state; gate order (i, f, c~, o)."""
    x, W, U, b = as_tensor(x), as_tensor(W), as_tensor(U), as_tensor(b)
    H = _check_recurrent(x, W, U, b, 4, "lstm")
    B, T, _ = x.shape
    xw = x.data @ W.data + b.data
    Ud = U.data
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cache = []
    for t in range(T):
        a = xw[:, t] + h @ Ud
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, g, o, c_prev, h_prev, tc))
    out = _finish("lstm", hs, return_sequences)

    def adjoint(gout):
        dA = np.empty((B, T, 4 * H))
        dU = np.zeros_like(Ud)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i, f, g, o, c_prev, h_prev, tc = cache[t]
            if return_sequences:
                dh = gout[:, t] + dh_next
            else:
                dh = dh_next + gout if t == T - 1 else dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = dA[:, t]
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H:] = do * o * (1.0 - o)
            dU += h_prev.T @ da
            dh_next = da @ Ud.T
            dc_next = dc * f
        dx = dA @ W.data.T
        dW = np.einsum("bti,btk->ik", x.data, dA)
        return dx, dW, dU, dA.sum(axis=(0, 1))

    return record(out, (x, W, U, b), adjoint)


def gru_apply(x, W, U, b, return_sequences=True):
    """GRU over ``x: [B, T, I]`` with zero initial state; gate order (z, r, h~).

    Single-bias formulation with the reset gate applied before the recurrent
    product: ``h~ = tanh(x W_h + (r * h_prev) U_h + b_h)`` and
    ``h = (1 - z) * h_prev + z * h~``.
    """
    x, W, U, b = as_tensor(x), as_tensor(W), as_tensor(U), as_tensor(b)
    H = _check_recurrent(x, W, U, b, 3, "gru")
    B, T, _ = x.shape
    xw = x.data @ W.data + b.data
    Ud = U.data
    Uzr, Uh = Ud[:, :2 * H], Ud[:, 2 * H:]
    h = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cache = []
    for t in range(T):
        zr = sigmoid(xw[:, t, :2 * H] + h @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        hh = np.tanh(xw[:, t, 2 * H:] + rh @ Uh)
        h_prev = h
        h = (1.0 - z) * h_prev + z * hh
        hs[:, t] = h
        cache.append((z, r, hh, h_prev, rh))
    out = _finish("gru", hs, return_sequences)

    def adjoint(gout):
        dA = np.empty((B, T, 3 * H))
        dU = np.zeros_like(Ud)
        dh_next = np.zeros((B, H))
        for t in reversed(range(T)):
            z, r, hh, h_prev, rh = cache[t]
            if return_sequences:
                dh = gout[:, t] + dh_next
            else:
                dh = dh_next + gout if t == T - 1 else dh_next
            da = dA[:, t]
            da_h = dh * z * (1.0 - hh * hh)
            drh = da_h @ Uh.T
            da[:, :H] = dh * (hh - h_prev) * z * (1.0 - z)
            da[:, H:2 * H] = drh * h_prev * r * (1.0 - r)
            da[:, 2 * H:] = da_h
            dU[:, :2 * H] += h_prev.T @ da[:, :2 * H]
            dU[:, 2 * H:] += rh.T @ da_h
            dh_next = dh * (1.0 - z) + drh * r + da[:, :2 * H] @ Uzr.T
        dx = dA @ W.data.T
        dW = np.einsum("bti,btk->ik", x.data, dA)
        return dx, dW, dU, dA.sum(axis=(0, 1))

    return record(out, (x, W, U, b), adjoint)


def concat_features(xs):
    """Concatenate along the last axis; leading axes must agree."""
    xs = [as_tensor(x) for x in xs]
    _check(len(xs) > 0, "concat of zero tensors")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        _check(x.shape[:-1] == lead, f"concat: leading shapes {x.shape[:-1]} != {lead}")
    widths = [x.shape[-1] for x in xs]
    bounds = np.cumsum([0] + widths)
    out = np.concatenate([x.data for x in xs], axis=-1)

    def adjoint(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return record(out, tuple(xs), adjoint)


def flatten_seq(x):
    """Row-major reshape ``[B, T, H] -> [B, T*H]``."""
    x = as_tensor(x)
    _check(x.data.ndim >= 2, f"flatten needs a batch axis, got {x.shape}")
    shape = x.shape
    return record(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def bce_loss(p, y, epsilon=BCE_EPSILON):
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    _check(p.data.ndim == 2 and p.shape[1] == 1 and p.shape[0] == y.shape[0],
           f"bce: probabilities {p.shape} vs labels {y.shape}")
    pv = p.data[:, 0]
    ph = np.clip(pv, epsilon, 1.0 - epsilon)
    n = pv.shape[0]
    loss = -np.mean(y * np.log(ph) + (1.0 - y) * np.log(1.0 - ph))

    def adjoint(g):
        inside = (pv > epsilon) & (pv < 1.0 - epsilon)
        dp = -(y / ph - (1.0 - y) / (1.0 - ph)) / n * inside
        return (g * dp[:, None],)

    return record(np.array(loss), (p,), adjoint)


def mse_loss(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    _check(pred.shape == target.shape, f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    loss = np.mean(diff * diff)
    return record(np.array(loss), (pred,), lambda g: (g * 2.0 * diff / diff.size,))


def weighted_sum(x, weights):
    """``sum(x * weights)``; a scalar probe used by gradient checks."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=np.float64)
    _check(weights.shape == x.shape, f"weighted_sum: weights {weights.shape} vs x {x.shape}")
    return record(np.array(np.sum(x.data * weights)), (x,), lambda g: (g * weights,))


__all__ = [
    "Tensor", "NonFiniteActivation", "sigmoid", "activation", "dense_apply",
    "time_distributed_dense", "lstm_apply", "gru_apply", "concat_features",
    "flatten_seq", "bce_loss", "mse_loss", "weighted_sum", "BCE_EPSILON",
]
