"""End-to-end run: load -> preprocess -> split -> SMOTE(train) -> train -> evaluate.

A run is fully described by a :class:`PipelineConfig`; the resolved config,
with every seed materialized, is written to ``run_manifest.json`` and can be
fed back in to reproduce the run.
"""
import configparser
import dataclasses
import json
import logging
import os
import platform
from dataclasses import dataclass, field, fields

import numpy as np

from . import _jsonio, __version__
from .balance import SmoteConfig, smote
from .dataset import (assemble, load_mat_dir, load_table, split_stratified, synth_recordings)
from .exceptions import ConfigError, DataError, PipelineError
from .forest import Forest, ForestConfig, fit_forest, predict as forest_predict
from .metrics import weighted_report, write_confusion_csv
from .models import (DEFAULT_TRAIN, MODEL_NAMES, TrainConfig, build_lssrepl_dnn, build_ssrepl_adhd,
                     predict_labels, pretrain_representation, train_supervised)
from .nnkit import Network, load_checkpoint, save_checkpoint
from .preprocess import ScalerParams, apply_scaler, fir_bandpass, fit_scaler, preprocess_table

log = logging.getLogger(__name__)

DATA_ENV = "EEG_PIPELINE_DATA"


@dataclass
class PipelineConfig:
    source: str = "synth"
    data_dir: str = None
    label_map: dict = field(default_factory=dict)
    table_path: str = None
    synth_n_adhd: int = 200
    synth_n_control: int = 200
    synth_separation: float = 4.0
    synth_noise: float = 1.0
    filter: bool = False
    filter_low: float = 0.5
    filter_high: float = 50.0
    filter_taps: int = 129
    impute: str = "mean"
    train_fraction: float = 0.7
    smote: bool = True
    smote_k: int = 5
    model: str = "rf"
    epochs: int = None
    batch_size: int = None
    learning_rate: float = 1e-3
    pretext: str = None
    pretrain_epochs: int = 5
    repr_width: int = 32
    head_width: int = 32
    n_estimators: int = 100
    n_jobs: int = 1
    validation: str = "test_set"
    holdout_fraction: float = 0.1
    seed: int = 42
    synth_seed: int = None
    split_seed: int = None
    smote_seed: int = None
    model_seed: int = None
    out: str = "runs/latest"

    def resolved(self):
        """Copy with defaults materialized (seeds, epochs, batch size, pretext)."""
        cfg = dataclasses.replace(self, label_map=dict(self.label_map))
        for name in ("synth_seed", "split_seed", "smote_seed", "model_seed"):
            if getattr(cfg, name) is None:
                setattr(cfg, name, cfg.seed)
        if cfg.model in DEFAULT_TRAIN:
            defaults = DEFAULT_TRAIN[cfg.model]
            cfg.epochs = defaults["epochs"] if cfg.epochs is None else cfg.epochs
            cfg.batch_size = defaults["batch_size"] if cfg.batch_size is None else cfg.batch_size
        if cfg.pretext is None:
            cfg.pretext = "autoencode" if cfg.model == "lssrepl_dnn" else "none"
        cfg.validate()
        return cfg

    def validate(self):
        if self.source not in ("synth", "mat", "table"):
            raise ConfigError(f"source must be synth, mat or table, got {self.source!r}")
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"model must be one of {MODEL_NAMES}, got {self.model!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie strictly between 0 and 1, got {self.train_fraction}"
                              " (DegenerateSplit)")
        if self.source == "mat" and not self.data_dir:
            raise ConfigError(f"source=mat needs data_dir (or ${DATA_ENV})")
        bad = sorted(set(self.label_map.values()) - {"ADHD", "Control"})
        if bad:
            raise ConfigError(f"label_map groups must be ADHD or Control, got {bad}")
        if self.source == "table" and not self.table_path:
            raise ConfigError("source=table needs table_path")
        if self.impute not in ("mean", "drop_row"):
            raise ConfigError(f"impute must be mean or drop_row, got {self.impute!r}")
        if self.pretext not in (None, "none", "autoencode"):
            raise ConfigError(f"pretext must be none or autoencode, got {self.pretext!r}")
        if self.filter and not 0 < self.filter_low < self.filter_high:
            raise ConfigError(f"bad filter band {self.filter_low}:{self.filter_high}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must lie strictly between 0 and 1, got {self.holdout_fraction}")
        for name in ("synth_n_adhd", "synth_n_control", "n_estimators", "smote_k", "filter_taps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "batch_size"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: getattr(f.type, "__name__", f.type) for f in fields(PipelineConfig)}


def parse_label_map(text):
    """``"stem=ADHD,other=Control"`` -> dict."""
    if isinstance(text, dict):
        return dict(text)
    out = {}
    for item in filter(None, (part.strip() for part in str(text).split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"label_map entry {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def coerce(name, value):
    """Convert a raw (string) config value to the field's type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if value is None:
        return None
    kind = _FIELD_TYPES[name]
    try:
        if name == "label_map":
            return parse_label_map(value)
        if isinstance(value, str) and value.strip().lower() in ("none", "null", ""):
            return None
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot interpret {value!r} as {kind}") from None


def read_config_file(path):
    """Flat ``key = value`` file, or a JSON object / run manifest."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return data.get("config", data)
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["config"])


def build_config(file_values=None, overrides=None):
    """Merge defaults < file < overrides into a :class:`PipelineConfig`."""
    values = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            values[key] = coerce(key, value)
    if values.get("source") == "mat" and not values.get("data_dir") and os.environ.get(DATA_ENV):
        values["data_dir"] = os.environ[DATA_ENV]
    return PipelineConfig(**values)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError as exc:
                if exc.stage is None:
                    exc.stage = name
                raise
            except (OSError, ValueError) as exc:
                err = DataError(f"{type(exc).__name__}: {exc}")
                err.stage = name
                raise err from exc
        inner.__name__ = fn.__name__
        return inner
    return wrap


@_stage("load")
def load_stage(cfg):
    if cfg.source == "synth":
        recordings = synth_recordings((cfg.synth_n_adhd, cfg.synth_n_control),
                                      class_separation=cfg.synth_separation,
                                      noise=cfg.synth_noise, seed=cfg.synth_seed)
    elif cfg.source == "mat":
        recordings = load_mat_dir(cfg.data_dir, cfg.label_map)
    else:
        if cfg.filter:
            raise ConfigError("filtering needs recordings; not available for source=table")
        return None, load_table(cfg.table_path)
    return recordings, None


@_stage("preprocess")
def preprocess_stage(cfg, recordings, table):
    if recordings is not None:
        if cfg.filter:
            recordings = [fir_bandpass(r, cfg.filter_low, cfg.filter_high, cfg.filter_taps)
                          for r in recordings]
        table = assemble(recordings)
    return preprocess_table(table, cfg.impute)


@_stage("split")
def split_stage(cfg, table):
    pair = split_stratified(table, cfg.train_fraction, cfg.split_seed)
    scaler = fit_scaler(pair.train)
    return apply_scaler(pair.train, scaler), apply_scaler(pair.test, scaler), scaler


@_stage("balance")
def balance_stage(cfg, train):
    if not cfg.smote:
        return train
    return smote(train, SmoteConfig(cfg.smote_k, cfg.smote_seed))


def build_network(cfg, n_features):
    if cfg.model == "ssrepl_adhd":
        spec = build_ssrepl_adhd(n_features)
    else:
        spec = build_lssrepl_dnn(n_features, cfg.repr_width, cfg.head_width)
    return Network(spec, seed=cfg.model_seed)


@_stage("train")
def train_stage(cfg, train, test):
    if cfg.model == "rf":
        fcfg = ForestConfig(n_estimators=cfg.n_estimators, seed=cfg.model_seed)
        return fit_forest(train, fcfg, n_jobs=cfg.n_jobs), None, []
    net = build_network(cfg, train.n_features)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.model_seed, cfg.learning_rate,
                       cfg.validation, cfg.holdout_fraction)
    pretext_losses = []
    if cfg.pretext == "autoencode":
        pcfg = TrainConfig(cfg.pretrain_epochs, cfg.batch_size, cfg.model_seed, cfg.learning_rate)
        pretext_losses = pretrain_representation(net, train.features, pcfg,
                                                 freeze=cfg.model == "lssrepl_dnn")
    val = test
    if cfg.validation == "holdout":
        pair = split_stratified(train, 1.0 - cfg.holdout_fraction, cfg.split_seed + 1)
        train, val = pair.train, pair.test
    net, history = train_supervised(net, train, val, tcfg,
                                    callback=lambda e, h: log.info(
                                        "epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                                        e, h.train_loss[-1], h.train_acc[-1], h.val_loss[-1], h.val_acc[-1]))
    return net, history, pretext_losses


def predict_model(model, rows):
    if isinstance(model, Forest):
        return forest_predict(model, rows)[0]
    return predict_labels(model, rows)[0]


def save_model(model, out_dir, cfg):
    if isinstance(model, Forest):
        path = os.path.join(out_dir, "forest.json")
        model.save(path)
        return path
    return save_checkpoint(model, os.path.join(out_dir, "checkpoint"), epoch=cfg.epochs,
                           extra={"model": cfg.model})


def load_model(run_dir):
    forest_path = os.path.join(run_dir, "forest.json")
    if os.path.exists(forest_path):
        return Forest.load(forest_path)
    net, _ = load_checkpoint(os.path.join(run_dir, "checkpoint"))
    return net


def versions():
    import scipy
    import sklearn
    return {"adhd_eeg": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


@dataclass
class RunResult:
    exit_code: int
    out: str = None
    config: PipelineConfig = None
    report: object = None
    history: object = None
    model: object = None
    error: PipelineError = None


def execute(cfg):
    """Execute every stage and write the run's artifacts; raises on failure."""
    try:
        cfg = cfg.resolved()
    except PipelineError as exc:
        exc.stage = exc.stage or "config"
        raise
    os.makedirs(cfg.out, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "versions": versions(),
                "stages": ["load", "preprocess", "split", "balance", "train", "evaluate"]}
    _jsonio.dump(manifest, os.path.join(cfg.out, "run_manifest.json"))

    recordings, table = load_stage(cfg)
    table = preprocess_stage(cfg, recordings, table)
    train, test, scaler = split_stage(cfg, table)
    scaler.save(os.path.join(cfg.out, "scaler.json"))
    train = balance_stage(cfg, train)
    log.info("train rows %d %s, test rows %d %s", len(train), train.class_counts(),
             len(test), test.class_counts())
    model, history, pretext_losses = train_stage(cfg, train, test)

    report = evaluate_stage(model, test)
    metrics = report.to_dict()
    metrics["model"] = cfg.model
    metrics["n_train"] = len(train)
    metrics["n_test"] = len(test)
    if pretext_losses:
        metrics["pretext_losses"] = pretext_losses
    _jsonio.dump(metrics, os.path.join(cfg.out, "metrics.json"))
    write_confusion_csv(report, os.path.join(cfg.out, "confusion.csv"))
    if history is not None:
        history.to_csv(os.path.join(cfg.out, "history.csv"))
    save_model(model, cfg.out, cfg)
    return RunResult(0, cfg.out, cfg, report, history, model)


def run_pipeline(cfg):
    """Run :func:`execute`, mapping failures to exit codes 2 (config), 3 (data), 4 (numerical)."""
    try:
        return execute(cfg)
    except PipelineError as exc:
        log.error("stage %s failed: %s", exc.stage, exc)
        return RunResult(exc.exit_code, getattr(cfg, "out", None), cfg, error=exc)


@_stage("evaluate")
def evaluate_stage(model, test):
    return weighted_report(test.labels, predict_model(model, test.features))


def evaluate_run(run_dir, table=None):
    """Re-score a finished run on its own test split or on a given table."""
    manifest_path = os.path.join(run_dir, "run_manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"{run_dir} has no run_manifest.json")
    cfg = build_config(_jsonio.load(manifest_path)["config"]).resolved()
    scaler = ScalerParams.load(os.path.join(run_dir, "scaler.json"))
    if table is None:
        recordings, raw = load_stage(cfg)
        full = preprocess_stage(cfg, recordings, raw)
        table = split_stratified(full, cfg.train_fraction, cfg.split_seed).test
    else:
        table = preprocess_table(table, cfg.impute)
    table = apply_scaler(table, scaler)
    return evaluate_stage(load_model(run_dir), table)
