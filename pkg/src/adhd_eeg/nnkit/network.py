"""Layer graphs, parameter ownership and checkpoints."""
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..exceptions import ConfigError, DataError, ShapeMismatch
from .. import _jsonio
from . import ops
from .init import glorot_uniform, orthogonal
from .tensor import GraphCycle, Parameter, Tensor, no_grad

LAYER_KINDS = ("input", "lstm", "gru", "dense", "time_distributed_dense", "concat", "flatten")
CHECKPOINT_FORMAT = "adhd_eeg.nnkit/1"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple = ()
    units: int = 0
    activation: str = "none"
    return_sequences: bool = False
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class ModelSpec:
    """An ordered, acyclic layer graph with one output node."""

    layers: tuple
    output: str
    input_shape: tuple
    name: str = "model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(topological_layers(self.layers)))
        names = [layer.name for layer in self.layers]
        if self.output not in names:
            raise ConfigError(f"output node {self.output!r} not in graph")

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def shapes(self):
        """Per-node output shapes, batch axis omitted."""
        shapes = {}
        for layer in self.layers:
            ins = [shapes[i] for i in layer.inputs]
            k = layer.kind
            if k == "input":
                shapes[layer.name] = self.input_shape
            elif k in ("lstm", "gru"):
                (T, _), = ins
                shapes[layer.name] = (T, layer.units) if layer.return_sequences else (layer.units,)
            elif k == "time_distributed_dense":
                (T, _), = ins
                shapes[layer.name] = (T, layer.units)
            elif k == "dense":
                shapes[layer.name] = (layer.units,)
            elif k == "flatten":
                shapes[layer.name] = (int(np.prod(ins[0])),)
            elif k == "concat":
                lead = ins[0][:-1]
                if any(s[:-1] != lead for s in ins):
                    raise ShapeMismatch(f"concat {layer.name!r}: inputs {ins} disagree")
                shapes[layer.name] = lead + (sum(s[-1] for s in ins),)
        return shapes

    def ancestors(self, name):
        """Names of ``name`` and every node it depends on."""
        seen, todo = set(), [name]
        while todo:
            n = todo.pop()
            if n in seen:
                continue
            seen.add(n)
            todo.extend(self.layer(n).inputs)
        return seen

    def to_dict(self):
        return {"name": self.name, "output": self.output, "input_shape": list(self.input_shape),
                "meta": self.meta, "layers": [dict(asdict(l), inputs=list(l.inputs)) for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        layers = [LayerSpec(**dict(l, inputs=tuple(l["inputs"]))) for l in d["layers"]]
        return cls(layers, d["output"], tuple(d["input_shape"]), d.get("name", "model"), d.get("meta", {}))


def topological_layers(layers):
    """Order layers so every node follows its inputs (Kahn); raise on cycles."""
    by_name = {}
    for layer in layers:
        if layer.name in by_name:
            raise ConfigError(f"duplicate layer name {layer.name!r}")
        by_name[layer.name] = layer
    for layer in layers:
        for i in layer.inputs:
            if i not in by_name:
                raise ConfigError(f"layer {layer.name!r} reads unknown node {i!r}")
    indeg = {n: len(l.inputs) for n, l in by_name.items()}
    users = {n: [] for n in by_name}
    for layer in layers:
        for i in layer.inputs:
            users[i].append(layer.name)
    order = [l.name for l in layers if indeg[l.name] == 0]
    out = []
    while order:
        n = order.pop(0)
        out.append(by_name[n])
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                order.append(u)
    if len(out) != len(layers):
        raise GraphCycle("layer graph contains a cycle")
    return out


def layer_param_shapes(layer, in_shape):
    """Parameter name suffix -> shape for one layer."""
    k, H = layer.kind, layer.units
    if k == "lstm":
        return {"kernel": (in_shape[-1], 4 * H), "recurrent_kernel": (H, 4 * H), "bias": (4 * H,)}
    if k == "gru":
        return {"kernel": (in_shape[-1], 3 * H), "recurrent_kernel": (H, 3 * H), "bias": (3 * H,)}
    if k in ("dense", "time_distributed_dense"):
        return {"kernel": (in_shape[-1], H), "bias": (H,)}
    return {}


class Network:
    """Parameters plus a forward interpreter for a :class:`ModelSpec`."""

    def __init__(self, spec, seed=0, params=None):
        self.spec = spec
        self.seed = seed
        self.shapes = spec.shapes()
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params

    def _init_params(self, rng):
        params = {}
        for layer in self.spec.layers:
            if not layer.inputs:
                continue
            in_shape = self.shapes[layer.inputs[0]]
            for suffix, shape in layer_param_shapes(layer, in_shape).items():
                if suffix == "kernel":
                    value = glorot_uniform(rng, *shape)
                elif suffix == "recurrent_kernel":
                    value = orthogonal(rng, *shape)
                else:
                    value = np.zeros(shape)
                    if layer.kind == "lstm":
                        value[layer.units:2 * layer.units] = 1.0
                name = f"{layer.name}/{suffix}"
                params[name] = Parameter(value, name, trainable=layer.trainable)
        return params

    def parameters(self):
        return list(self.params.values())

    def layer_params(self, name):
        return [p for key, p in self.params.items() if key.split("/", 1)[0] == name]

    def param_count(self, trainable=None):
        return sum(p.data.size for p in self.params.values()
                   if trainable is None or p.trainable == trainable)

    def set_trainable(self, node_names, trainable):
        for name in node_names:
            for p in self.layer_params(name):
                p.trainable = trainable
        layers = [replace(l, trainable=trainable) if l.name in node_names else l for l in self.spec.layers]
        self.spec = replace(self.spec, layers=tuple(layers))

    def freeze(self, node_names):
        self.set_trainable(node_names, False)

    def _prepare_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        expected = self.spec.input_shape
        if x.ndim == len(expected) and x.shape[1:] == expected[:-1] and expected[-1] == 1:
            x = x[..., None]
        if x.shape[1:] != expected:
            raise ShapeMismatch(f"input {x.shape} does not match model input {expected}")
        return Tensor(x)

    def forward(self, x, outputs=None):
        """Run the graph; return the output tensor or a dict of requested nodes."""
        values = {}
        p = self.params
        for layer in self.spec.layers:
            k, n = layer.kind, layer.name
            ins = [values[i] for i in layer.inputs]
            if k == "input":
                values[n] = self._prepare_input(x)
            elif k == "lstm":
                values[n] = ops.lstm_apply(ins[0], p[f"{n}/kernel"], p[f"{n}/recurrent_kernel"],
                                           p[f"{n}/bias"], layer.return_sequences)
            elif k == "gru":
                values[n] = ops.gru_apply(ins[0], p[f"{n}/kernel"], p[f"{n}/recurrent_kernel"],
                                          p[f"{n}/bias"], layer.return_sequences)
            elif k == "dense":
                values[n] = ops.dense_apply(ins[0], p[f"{n}/kernel"], p[f"{n}/bias"], layer.activation)
            elif k == "time_distributed_dense":
                values[n] = ops.time_distributed_dense(ins[0], p[f"{n}/kernel"], p[f"{n}/bias"],
                                                       layer.activation)
            elif k == "concat":
                values[n] = ops.concat_features(ins)
            elif k == "flatten":
                values[n] = ops.flatten_seq(ins[0])
            if outputs is not None and all(o in values for o in outputs):
                break
        if outputs is None:
            return values[self.spec.output]
        return {o: values[o] for o in outputs}

    def predict_proba(self, X, batch_size=1024):
        """Sigmoid output for every row, computed without recording a graph."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        with no_grad():
            for lo in range(0, X.shape[0], batch_size):
                out[lo:lo + batch_size] = self.forward(X[lo:lo + batch_size]).data[:, 0]
        return out

    def state_bytes(self):
        return b"".join(p.data.astype("<f8").tobytes() for p in self.params.values())


def save_checkpoint(net, directory, epoch=None, extra=None):
    """Write ``model.json`` (manifest) and ``model.bin`` (little-endian f64 blob)."""
    os.makedirs(directory, exist_ok=True)
    entries, offset = [], 0
    for name, p in net.params.items():
        entries.append({"name": name, "shape": list(p.data.shape), "trainable": p.trainable,
                        "offset": offset, "count": int(p.data.size)})
        offset += p.data.size
    manifest = {"format": CHECKPOINT_FORMAT, "spec": net.spec.to_dict(), "seed": net.seed,
                "epoch": epoch, "params": entries, "blob": "model.bin", "extra": extra or {}}
    with open(os.path.join(directory, "model.bin"), "wb") as fh:
        fh.write(net.state_bytes())
    _jsonio.dump(manifest, os.path.join(directory, "model.json"))
    return os.path.join(directory, "model.json")


def load_checkpoint(directory):
    path = os.path.join(directory, "model.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint manifest {path}: {exc}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    blob = np.fromfile(os.path.join(directory, manifest["blob"]), dtype="<f8")
    params = {}
    for e in manifest["params"]:
        if e["offset"] + e["count"] > blob.size:
            raise DataError(f"{path}: parameter blob too short for {e['name']!r}")
        value = blob[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"]).astype(np.float64)
        params[e["name"]] = Parameter(value, e["name"], trainable=e["trainable"])
    net = Network(ModelSpec.from_dict(manifest["spec"]), seed=manifest["seed"], params=params)
    return net, manifest
