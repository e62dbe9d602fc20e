"""Model assembly from layer specs, presets, and checkpoint persistence.

A model is a sequence of layers with ReLU between hidden layers and a
sigmoid over the single-channel node output, so predictions always lie in
(0, 1).  Architectures are plain data (lists of layer specs) so checkpoints
can rebuild a model without code references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import Dense, GCNConv, ReLU, SAGEConv, Sigmoid, TAGConv

_LAYER_KINDS = {"dense", "gcn", "sage", "tag"}


@dataclass
class LayerSpec:
    kind: str
    in_ch: int
    out_ch: int
    hops: int = 3  # TAG only

    def __post_init__(self):
        if self.kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        d = {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch}
        if self.kind == "tag":
            d["hops"] = self.hops
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], in_ch=int(d["in_ch"]), out_ch=int(d["out_ch"]),
                   hops=int(d.get("hops", 3)))


@dataclass
class ModelSpec:
    """Architecture + input convention ("power" for GNNs, "features" for MLPs)."""

    name: str
    layers: list
    input: str = "power"

    def __post_init__(self):
        if self.input not in ("power", "features"):
            raise ValueError("input must be 'power' or 'features'")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_ch != nxt.in_ch:
                raise ValueError(
                    f"channel mismatch in {self.name}: {prev.out_ch} -> {nxt.in_ch}")
        if self.layers[-1].out_ch != 1:
            raise ValueError("final layer must have a single output channel")

    def to_dict(self):
        return {"name": self.name, "input": self.input,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(name=d["name"], input=d.get("input", "power"),
                   layers=[LayerSpec.from_dict(x) for x in d["layers"]])


def _make_layer(spec: LayerSpec):
    if spec.kind == "dense":
        return Dense(spec.in_ch, spec.out_ch)
    if spec.kind == "gcn":
        return GCNConv(spec.in_ch, spec.out_ch)
    if spec.kind == "sage":
        return SAGEConv(spec.in_ch, spec.out_ch)
    return TAGConv(spec.in_ch, spec.out_ch, spec.hops)


class Model:
    """Stateful network: trainable layers interleaved with activations."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.layers = []
        trainable = [_make_layer(s) for s in spec.layers]
        for i, layer in enumerate(trainable):
            self.layers.append(layer)
            if i < len(trainable) - 1:
                self.layers.append(ReLU())
        self.layers.append(Sigmoid())
        self.trainable = trainable
        rng = np.random.default_rng(seed)
        for layer in trainable:
            layer.init_weights(rng)

    @property
    def needs_graph(self) -> bool:
        return any(l.needs_graph for l in self.layers)

    def forward(self, x: np.ndarray, ops: dict | None = None) -> np.ndarray:
        h = x
        for layer in self.layers:
            h = layer.forward(h, ops)
        return h

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grads(self):
        for layer in self.trainable:
            layer.zero_grads()

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.trainable)

    def parameters(self):
        for i, layer in enumerate(self.trainable):
            for name, value in layer.params.items():
                yield f"layer{i}.{name}", layer, name, value

    def get_weights(self) -> dict:
        return {key: value.copy() for key, _, _, value in self.parameters()}

    def set_weights(self, weights: dict):
        for key, layer, name, value in self.parameters():
            if weights[key].shape != value.shape:
                raise ValueError(f"shape mismatch for {key}")
            layer.params[name] = weights[key].copy()


CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path, manifest: dict | None = None):
    arrays = {key.replace(".", "__"): value for key, _, _, value in model.parameters()}
    np.savez(
        path,
        __meta__=json.dumps({
            "checkpoint_version": CHECKPOINT_VERSION,
            "spec": model.spec.to_dict(),
            "manifest": manifest or {},
        }),
        **arrays,
    )


def load_checkpoint(path) -> tuple[Model, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('checkpoint_version')}")
        model = Model(ModelSpec.from_dict(meta["spec"]))
        weights = {k.replace("__", "."): data[k] for k in data.files if k != "__meta__"}
    model.set_weights(weights)
    return model, meta.get("manifest", {})


def _mlp_spec(name: str, in_ch: int, hidden: int, hidden_layers: int) -> ModelSpec:
    layers = [LayerSpec("dense", in_ch, hidden)]
    for _ in range(hidden_layers):
        layers.append(LayerSpec("dense", hidden, hidden))
    layers.append(LayerSpec("dense", hidden, 1))
    return ModelSpec(name=name, layers=layers, input="features")


def preset(name: str, n_features: int = 6) -> ModelSpec:
    """Named architecture presets.

    The *-small GNNs are sized for the desk-scale datasets; the full-size
    variants need datasets of the published scale to train without heavy
    overfitting but remain available.
    """
    if name == "tag_small":
        return ModelSpec("tag_small", [
            LayerSpec("tag", 1, 32, hops=3),
            LayerSpec("tag", 32, 32, hops=3),
            LayerSpec("tag", 32, 1, hops=3),
        ])
    if name == "gcn_small":
        return ModelSpec("gcn_small", [
            LayerSpec("gcn", 1, 64),
            LayerSpec("gcn", 64, 64),
            LayerSpec("gcn", 64, 64),
            LayerSpec("gcn", 64, 1),
        ])
    if name == "sage_small":
        return ModelSpec("sage_small", [
            LayerSpec("sage", 1, 48),
            LayerSpec("sage", 48, 48),
            LayerSpec("sage", 48, 48),
            LayerSpec("sage", 48, 1),
        ])
    if name == "tag_large":
        layers = [LayerSpec("tag", 1, 96, hops=3)]
        layers += [LayerSpec("tag", 96, 96, hops=3) for _ in range(11)]
        layers.append(LayerSpec("tag", 96, 1, hops=3))
        return ModelSpec("tag_large", layers)
    if name == "mlp1":
        # one 35-unit input stage plus one 35x35 hidden stage: 1,541 parameters
        # for 6 input features
        return _mlp_spec("mlp1", n_features, 35, 1)
    if name == "mlp2":
        return _mlp_spec("mlp2", n_features, 500, 6)
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("tag_small", "gcn_small", "sage_small", "tag_large", "mlp1", "mlp2")
