import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhd_eeg import models
from adhd_eeg.dataset import InstanceTable, synth_generate
from adhd_eeg.exceptions import NonFiniteLoss
from adhd_eeg.nnkit import Network
from oracles import param_count_formula


def small_table(n=64, seed=0, sep=4.0):
    return synth_generate(n // 2, class_separation=sep, seed=seed)


def spec_param_count(spec):
    shapes = spec.shapes()
    total = 0
    for layer in spec.layers:
        if layer.kind in ("lstm", "gru", "dense", "time_distributed_dense"):
            in_dim = shapes[layer.inputs[0]][-1]
            total += param_count_formula(layer.kind, in_dim, layer.units)
    return total


def test_ssrepl_output_shape_and_zero_propagation():
    spec = models.build_ssrepl_adhd()
    net = Network(spec, seed=0)
    assert net.forward(np.zeros((7, 19))).shape == (7, 1)
    for p in net.parameters():
        p.data[...] = 0.0
    assert np.all(net.predict_proba(np.zeros((3, 19))) == 0.5)


def test_ssrepl_param_count_closed_form():
    spec = models.build_ssrepl_adhd()
    net = Network(spec)
    assert net.param_count() == spec_param_count(spec) == 105_729
    assert param_count_formula("lstm", 1, 64) == 16_896


@pytest.mark.parametrize("repr_width,head_width", [(32, 32), (8, 4), (64, 16)])
def test_lssrepl_param_count_and_shape(repr_width, head_width):
    spec = models.build_lssrepl_dnn(19, repr_width, head_width)
    net = Network(spec)
    assert net.param_count() == spec_param_count(spec)
    assert net.forward(np.zeros((5, 19))).shape == (5, 1)


def test_freeze_trunk_marks_params():
    net = models.freeze_trunk(Network(models.build_lssrepl_dnn()))
    flags = {p.name: p.trainable for p in net.parameters()}
    assert not any(v for k, v in flags.items() if k.startswith("representation/"))
    assert all(v for k, v in flags.items() if not k.startswith("representation/"))


def test_pretext_loss_decreases():
    t = small_table(80, seed=1)
    net = Network(models.build_lssrepl_dnn(repr_width=16), seed=0)
    losses = models.pretrain_representation(net, t.features, models.TrainConfig(20, 16, seed=0, learning_rate=1e-2))
    assert len(losses) == 20 and losses[-1] < losses[0]


def test_pretext_zero_inputs_trivial():
    net = Network(models.build_lssrepl_dnn(repr_width=8), seed=0)
    losses = models.pretrain_representation(net, np.zeros((16, 19)), models.TrainConfig(3, 8))
    assert losses[-1] < 1e-6


def test_frozen_trunk_unchanged_by_training():
    t = small_table(64, seed=2)
    net = Network(models.build_lssrepl_dnn(repr_width=8, head_width=8), seed=0)
    models.pretrain_representation(net, t.features, models.TrainConfig(2, 16))
    trunk = {p.name: p.data.tobytes() for p in net.layer_params("representation")}
    head = {p.name: p.data.tobytes() for p in net.layer_params("fc")}
    models.train_supervised(net, t, None, models.TrainConfig(3, 16))
    assert all(p.data.tobytes() == trunk[p.name] for p in net.layer_params("representation"))
    assert any(p.data.tobytes() != head[p.name] for p in net.layer_params("fc"))


def test_history_length_and_determinism():
    t = small_table(48, seed=3)
    runs = []
    for _ in range(2):
        net = Network(models.build_lssrepl_dnn(repr_width=8, head_width=8), seed=4)
        net, hist = models.train_supervised(net, t, t, models.TrainConfig(2, 16, seed=4))
        runs.append((net.state_bytes(), hist.train_loss, hist.val_acc))
    assert runs[0] == runs[1]
    net, hist = models.train_supervised(Network(models.build_lssrepl_dnn(repr_width=4), seed=0), t, None,
                                        models.TrainConfig(1, 16))
    assert len(hist) == 1


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_beats_constant_classifier_after_training(seed):
    t = small_table(64, seed=seed)
    net = Network(models.build_lssrepl_dnn(repr_width=8, head_width=8), seed=seed)
    net, hist = models.train_supervised(net, t, None, models.TrainConfig(5, 16, seed=seed, learning_rate=1e-2))
    labels, _ = models.predict_labels(net, t.features)
    assert np.mean(labels == t.labels) >= 0.5


def test_threshold_convention():
    net = Network(models.build_lssrepl_dnn(repr_width=4, head_width=4))
    for p in net.parameters():
        p.data[...] = 0.0
    labels, proba = models.predict_labels(net, np.random.default_rng(0).standard_normal((6, 19)))
    assert np.all(proba == 0.5) and np.all(labels == 1)


def test_labels_consistent_with_probabilities(rng):
    net = Network(models.build_lssrepl_dnn(repr_width=4, head_width=4), seed=1)
    labels, proba = models.predict_labels(net, rng.standard_normal((50, 19)) * 3)
    np.testing.assert_array_equal(labels, (proba >= 0.5).astype(int))


def test_non_finite_loss_reports_epoch_and_batch():
    X = np.ones((8, 19))
    X[5, 3] = np.nan
    t = InstanceTable(X, np.array([0, 1] * 4), tuple(f"f{i}" for i in range(19)))
    with pytest.raises(NonFiniteLoss) as err:
        models.train_supervised(Network(models.build_lssrepl_dnn(repr_width=4), seed=0), t, None,
                                models.TrainConfig(1, 8))
    assert err.value.epoch == 1 and err.value.batch == 0 and err.value.stage == "train"


def test_history_csv(tmp_path):
    t = small_table(32)
    _, hist = models.train_supervised(Network(models.build_lssrepl_dnn(repr_width=4), seed=0), t, t,
                                      models.TrainConfig(2, 16))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc,seconds" and len(lines) == 3


def test_estimators_sklearn_contract():
    from sklearn.base import clone
    t = small_table(64, seed=5)
    clf = clone(models.LSSReplDNNClassifier(repr_width=8, head_width=8, epochs=15, batch_size=16,
                                            pretrain_epochs=3, learning_rate=1e-2))
    clf.fit(t.features, t.labels)
    proba = clf.predict_proba(t.features)
    assert proba.shape == (64, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.score(t.features, t.labels) > 0.8
    ss = models.SSReplADHDClassifier(epochs=1, batch_size=32).fit(t.features, t.labels)
    assert len(ss.history_) == 1 and ss.get_params()["pretext"] == "none"
