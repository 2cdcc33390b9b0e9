"""The three classifiers: random forest, LSSRepL-DNN and SSRepL-ADHD.

Rows are fed to the recurrent models as length-F sequences with one value
per step (shape ``[B, F, 1]``), so the recurrence runs across channels.
"""
import csv
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import InstanceTable
from .exceptions import ConfigError, EmptyTable, NonFiniteLoss, ShapeMismatch
from .nnkit import Adam, LayerSpec, ModelSpec, Network, Parameter, backward, ops

MODEL_NAMES = ("rf", "lssrepl_dnn", "ssrepl_adhd")


def build_ssrepl_adhd(n_features=19):
    """Stacked LSTM/GRU branches, time-distributed heads, dense transfer layers."""
    if n_features < 1:
        raise ConfigError("n_features must be >= 1")
    L = LayerSpec
    layers = [
        L("input", "input"),
        L("lstm1", "lstm", ("input",), 64, return_sequences=True),
        L("gru1", "gru", ("input",), 64, return_sequences=True),
        L("concat", "concat", ("lstm1", "gru1")),
        L("lstm2", "lstm", ("concat",), 32, return_sequences=True),
        L("gru2", "gru", ("concat",), 32, return_sequences=True),
        L("fc_lstm", "time_distributed_dense", ("lstm2",), 16),
        L("fc_gru", "time_distributed_dense", ("gru2",), 16),
        L("flatten_lstm", "flatten", ("fc_lstm",)),
        L("flatten_gru", "flatten", ("fc_gru",)),
        L("combined", "concat", ("flatten_lstm", "flatten_gru")),
        L("fc_transfer", "dense", ("combined",), 64, "relu"),
        L("output", "dense", ("fc_transfer",), 1, "sigmoid"),
    ]
    return ModelSpec(layers, "output", (n_features, 1), "ssrepl_adhd", {"trunk": "combined"})


def build_lssrepl_dnn(n_features=19, repr_width=32, head_width=32):
    """Shallow LSTM representation trunk followed by a small dense head."""
    if n_features < 1 or repr_width < 1 or head_width < 1:
        raise ConfigError("widths must be >= 1")
    L = LayerSpec
    layers = [
        L("input", "input"),
        L("representation", "lstm", ("input",), repr_width, return_sequences=False),
        L("fc", "dense", ("representation",), head_width, "relu"),
        L("output", "dense", ("fc",), 1, "sigmoid"),
    ]
    return ModelSpec(layers, "output", (n_features, 1), "lssrepl_dnn", {"trunk": "representation"})


def freeze_trunk(net):
    trunk = net.spec.meta["trunk"]
    net.freeze(sorted(net.spec.ancestors(trunk) - {"input"}))
    return net


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    validation: str = "test_set"
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.validation not in ("test_set", "holdout"):
            raise ConfigError(f"validation must be 'test_set' or 'holdout', got {self.validation!r}")


DEFAULT_TRAIN = {
    "ssrepl_adhd": dict(epochs=40, batch_size=32),
    "lssrepl_dnn": dict(epochs=10, batch_size=64),
}


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        for e in range(len(self)):
            yield (e + 1, self.train_loss[e], self.train_acc[e],
                   self.val_loss[e], self.val_acc[e], self.seconds[e])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"])
            for row in self.rows():
                w.writerow([row[0]] + ["%.17g" % v for v in row[1:]])


def _as_sequences(X):
    X = np.asarray(X, dtype=np.float64)
    return X[..., None] if X.ndim == 2 else X


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def _evaluate(net, X, y):
    if X.shape[0] == 0:
        return float("nan"), float("nan")
    p = net.predict_proba(X)
    ph = np.clip(p, ops.BCE_EPSILON, 1 - ops.BCE_EPSILON)
    loss = float(-np.mean(y * np.log(ph) + (1 - y) * np.log(1 - ph)))
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    return loss, acc


def pretrain_representation(net, unlabeled_rows, cfg, freeze=True):
    """Self-supervised pretext: reconstruct each input sequence from the trunk.

    A temporary linear decoder maps the trunk output back to the F input
    values; the loss is mean squared error. The decoder is discarded and the
    trunk frozen afterwards (unless ``freeze`` is false). Returns the
    per-epoch pretext losses.
    """
    X = _as_sequences(unlabeled_rows)
    if X.shape[0] == 0:
        raise EmptyTable("no rows to pretrain on")
    if not np.isfinite(X).all():
        raise NonFiniteLoss("pretraining rows contain NaN/Inf", stage="pretrain")
    trunk = net.spec.meta["trunk"]
    width = int(np.prod(net.shapes[trunk]))
    n_out = X.shape[1] * X.shape[2]
    ss = np.random.SeedSequence([cfg.seed, 1])
    dec_rng, batch_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    limit = np.sqrt(6.0 / (width + n_out))
    W = Parameter(dec_rng.uniform(-limit, limit, size=(width, n_out)), "decoder/kernel")
    b = Parameter(np.zeros(n_out), "decoder/bias")
    trunk_nodes = net.spec.ancestors(trunk) - {"input"}
    params = [p for n in sorted(trunk_nodes) for p in net.layer_params(n)] + [W, b]
    opt = Adam(params, lr=cfg.learning_rate)
    losses = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for bi, idx in enumerate(_batches(X.shape[0], cfg.batch_size, batch_rng)):
            xb = X[idx]
            rep = net.forward(xb, outputs=[trunk])[trunk]
            if rep.data.ndim > 2:
                rep = ops.flatten_seq(rep)
            loss = ops.mse_loss(ops.dense_apply(rep, W, b), xb.reshape(len(idx), -1))
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"pretext loss is non-finite at epoch {epoch + 1}, batch {bi}",
                                    epoch=epoch + 1, batch=bi, stage="pretrain")
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        losses.append(total / X.shape[0])
    if freeze:
        freeze_trunk(net)
    return losses


def train_supervised(net, train, val, cfg, callback=None):
    """Mini-batch Adam on BCE; returns ``(net, TrainingHistory)``.

    Train loss/accuracy are running averages over the epoch's batches;
    validation metrics are computed on ``val`` after each epoch. A
    ``callback(epoch, history)`` returning ``True`` stops training early.
    """
    X, y = _as_sequences(train.features), train.labels.astype(np.float64)
    if X.shape[0] == 0:
        raise EmptyTable("training table is empty")
    if val is not None and len(val):
        Xv, yv = _as_sequences(val.features), val.labels.astype(np.float64)
    else:
        Xv, yv = X[:0], y[:0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    opt = Adam(net.parameters(), lr=cfg.learning_rate)
    history = TrainingHistory()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for bi, idx in enumerate(_batches(X.shape[0], cfg.batch_size, rng)):
            try:
                out = net.forward(X[idx])
            except ops.NonFiniteActivation as exc:
                raise NonFiniteLoss(f"{exc} at epoch {epoch + 1}, batch {bi}",
                                    epoch=epoch + 1, batch=bi, stage="train") from exc
            loss = ops.bce_loss(out, y[idx])
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"loss is non-finite at epoch {epoch + 1}, batch {bi}",
                                    epoch=epoch + 1, batch=bi, stage="train")
            opt.zero_grad()
            backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += int(np.sum((out.data[:, 0] >= 0.5) == (y[idx] == 1)))
        val_loss, val_acc = _evaluate(net, Xv, yv)
        history.train_loss.append(loss_sum / X.shape[0])
        history.train_acc.append(correct / X.shape[0])
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        history.seconds.append(time.perf_counter() - start)
        if callback is not None and callback(epoch + 1, history) is True:
            break
    return net, history


def predict_labels(net, rows):
    """Return ``(labels, probabilities)``; label is 1 iff probability >= 0.5."""
    X = _as_sequences(rows)
    if X.shape[1:] != net.spec.input_shape:
        raise ShapeMismatch(f"rows {X.shape[1:]} do not match model input {net.spec.input_shape}")
    p = net.predict_proba(X)
    return (p >= 0.5).astype(np.int64), p


class _RecurrentClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing for the two recurrent models."""

    def _build(self, n_features):
        raise NotImplementedError

    def _pretrain(self, net, X):
        pass

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if not np.isin(self.classes_, (0, 1)).all():
            raise ConfigError("labels must be 0/1")
        self.n_features_in_ = X.shape[1]
        net = Network(self._build(X.shape[1]), seed=self.random_state)
        self.pretext_losses_ = self._pretrain(net, X)
        cfg = TrainConfig(self.epochs, self.batch_size, self.random_state, self.learning_rate)
        train = InstanceTable(X, y, tuple(f"f{i}" for i in range(X.shape[1])))
        val = None
        if X_val is not None:
            X_val, y_val = check_X_y(X_val, y_val)
            val = InstanceTable(X_val, y_val, train.feature_names)
        self.network_, self.history_ = train_supervised(net, train, val, cfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = check_array(X)
        p = self.network_.predict_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


class SSReplADHDClassifier(_RecurrentClassifier):
    """LSTM-GRU hybrid; ``pretext='autoencode'`` pretrains the trunk first."""

    def __init__(self, epochs=40, batch_size=32, learning_rate=1e-3, random_state=0,
                 pretext="none", pretrain_epochs=5, freeze_trunk=False):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.pretext = pretext
        self.pretrain_epochs = pretrain_epochs
        self.freeze_trunk = freeze_trunk

    def _build(self, n_features):
        return build_ssrepl_adhd(n_features)

    def _pretrain(self, net, X):
        if self.pretext == "none":
            return []
        cfg = TrainConfig(self.pretrain_epochs, self.batch_size, self.random_state, self.learning_rate)
        return pretrain_representation(net, X, cfg, freeze=self.freeze_trunk)


class LSSReplDNNClassifier(_RecurrentClassifier):
    """Frozen pretrained LSTM representation plus a trainable dense head."""

    def __init__(self, repr_width=32, head_width=32, epochs=10, batch_size=64, learning_rate=1e-3,
                 random_state=0, pretext="autoencode", pretrain_epochs=5):
        self.repr_width = repr_width
        self.head_width = head_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.pretext = pretext
        self.pretrain_epochs = pretrain_epochs

    def _build(self, n_features):
        return build_lssrepl_dnn(n_features, self.repr_width, self.head_width)

    def _pretrain(self, net, X):
        if self.pretext == "none":
            return []
        cfg = TrainConfig(self.pretrain_epochs, self.batch_size, self.random_state, self.learning_rate)
        return pretrain_representation(net, X, cfg, freeze=True)
