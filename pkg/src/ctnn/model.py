"""The CTNN: a U-shaped graph network over a contour-tree hierarchy.

The down path runs two convolutions per level and then pools to the next
level. The up path unpools, concatenates the skip features of the same level
and runs two more convolutions. A per-node linear head produces logits at
level 0. Every convolution is followed by node normalization and a rectifier.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from .hierarchy import PoolingMap, TreeHierarchy, pool, pool_backward, unpool, unpool_backward
from .nn import (
    ChebyLayer,
    Dense,
    DiffusionLayer,
    NodeNorm,
    OptimizerState,
    cheby_backward,
    cheby_forward,
    dense_backward,
    dense_forward,
    diffusion_backward,
    diffusion_forward,
    diffusion_operators,
    momentum_step,
    node_norm_backward,
    node_norm_forward,
    relu_backward,
    relu_forward,
    scaled_laplacian,
    softmax_xent,
)
from .topology import node_adjacency

CHECKPOINT_FORMAT = "ctnn-checkpoint"
CHECKPOINT_VERSION = 1
DOWN_PATH = "conv-then-pool"

ConvType = Literal["cheby", "diffusion", "none"]


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    L: int = 3
    hops: tuple = (4, 4, 2, 2)
    channels: tuple = (16, 32, 64, 128)
    precisions: tuple = (0.01, 0.1, 1.0, 10.0)
    conv_type: ConvType = "cheby"
    lr: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.99
    l2: float = 5e-2
    epochs: int = 70
    seed: int = 0
    loss_weighting: Literal["uniform", "pixel_count"] = "uniform"
    pool_weighting: Literal["mean", "pixel_count"] = "mean"
    lambda_method: Literal["auto", "power", "two"] = "auto"
    norm_eps: float = 1e-5
    norm_momentum: float = 0.9
    recalibrate_norms: bool = True
    norm_eval: Literal["running", "graph"] = "running"
    connectivity: int = 4

    def __post_init__(self):
        for name in ("hops", "channels", "precisions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "hops", tuple(int(h) for h in self.hops))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "precisions", tuple(float(r) for r in self.precisions))
        if self.L < 0:
            raise ConfigError("L must be non-negative")
        if not (len(self.hops) == len(self.channels) == len(self.precisions) == self.L + 1):
            raise ConfigError(
                f"hops, channels and precisions need L+1 = {self.L + 1} entries, got "
                f"{len(self.hops)}, {len(self.channels)}, {len(self.precisions)}"
            )
        if any(h < 1 for h in self.hops) or any(c < 1 for c in self.channels):
            raise ConfigError("hops and channels must be positive")
        if any(b <= a for a, b in zip(self.precisions, self.precisions[1:])) or self.precisions[0] <= 0:
            raise ConfigError("precisions must be positive and strictly increasing")
        if self.conv_type not in ("cheby", "diffusion", "none"):
            raise ConfigError(f"unknown conv_type {self.conv_type!r}")
        if self.loss_weighting not in ("uniform", "pixel_count"):
            raise ConfigError(f"unknown loss_weighting {self.loss_weighting!r}")
        if self.pool_weighting not in ("mean", "pixel_count"):
            raise ConfigError(f"unknown pool_weighting {self.pool_weighting!r}")
        if self.norm_eval not in ("running", "graph"):
            raise ConfigError(f"unknown norm_eval {self.norm_eval!r}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.epochs < 0 or self.lr < 0:
            raise ConfigError("epochs and lr must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("hops", "channels", "precisions"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Pyramid:
    """Graph operators of every level plus the maps between levels, ready for the network."""

    ops: tuple
    maps: tuple
    pool_weights: tuple
    n_nodes: tuple

    @property
    def n_levels(self) -> int:
        return len(self.n_nodes)


def level_ops(tree, conv_type: str, lambda_method: str = "auto"):
    if conv_type == "none":
        return None
    w, a = node_adjacency(tree)
    if conv_type == "cheby":
        return scaled_laplacian(a, lambda_method)
    return diffusion_operators(w)


def prepare(hierarchy: TreeHierarchy, config: ModelConfig) -> Pyramid:
    if hierarchy.n_levels != config.L + 1:
        raise ConfigError(f"hierarchy has {hierarchy.n_levels} levels, model expects {config.L + 1}")
    ops = tuple(level_ops(t, config.conv_type, config.lambda_method) for t in hierarchy.trees)
    if config.pool_weighting == "pixel_count":
        pw = tuple(hierarchy.trees[l].sizes.astype(np.float64) for l in range(config.L))
    else:
        pw = (None,) * config.L
    return Pyramid(ops, tuple(hierarchy.maps), pw, tuple(hierarchy.node_counts))


def _make_conv(rng, conv_type: str, k: int, f_in: int, f_out: int):
    if conv_type == "cheby":
        return ChebyLayer.init(rng, k, f_in, f_out)
    if conv_type == "diffusion":
        return DiffusionLayer.init(rng, k, f_in, f_out)
    return Dense.init(rng, f_in, f_out)


def _conv_forward(layer, ops, x):
    if isinstance(layer, ChebyLayer):
        return cheby_forward(ops, x, layer)
    if isinstance(layer, DiffusionLayer):
        return diffusion_forward(ops, x, layer)
    return dense_forward(x, layer)


def _conv_backward(layer, cache, d):
    if isinstance(layer, ChebyLayer):
        return cheby_backward(cache, d)
    if isinstance(layer, DiffusionLayer):
        return diffusion_backward(cache, d)
    return dense_backward(cache, d)


@dataclass
class Block:
    """Two (conv, norm, rectifier) stages on one level."""

    convs: list
    norms: list

    def layers(self, prefix: str):
        for i, (c, n) in enumerate(zip(self.convs, self.norms)):
            yield f"{prefix}.conv{i}", c
            yield f"{prefix}.norm{i}", n

    def forward(self, ops, x, mode):
        caches = []
        for conv, norm in zip(self.convs, self.norms):
            z, cc = _conv_forward(conv, ops, x)
            y, cn = node_norm_forward(z, norm, mode)
            x, cr = relu_forward(y)
            caches.append((cc, cn, cr))
        return x, caches

    def backward(self, caches, d, prefix: str, grads: dict):
        for i in range(len(self.convs) - 1, -1, -1):
            cc, cn, cr = caches[i]
            d = relu_backward(cr, d)
            d, g = node_norm_backward(cn, d)
            _store(grads, f"{prefix}.norm{i}", g)
            d, g = _conv_backward(self.convs[i], cc, d)
            _store(grads, f"{prefix}.conv{i}", g)
        return d


def _store(grads: dict, prefix: str, g: dict):
    for k, v in g.items():
        grads[f"{prefix}.{k}"] = v


@dataclass
class CtnnModel:
    config: ModelConfig
    f_in: int
    n_classes: int
    down: list
    up: list
    head: Dense
    history: list = field(default_factory=list)

    def layers(self):
        """``(name, layer)`` in a fixed order; this order defines the checkpoint layout."""
        for l, b in enumerate(self.down):
            yield from b.layers(f"down{l}")
        for l, b in enumerate(self.up):
            yield from b.layers(f"up{l}")
        yield "head", self.head

    def parameters(self) -> dict:
        return {f"{name}.{k}": v for name, layer in self.layers() for k, v in layer.params.items()}

    def kernel_names(self) -> set:
        return {f"{name}.{k}" for name, layer in self.layers() for k in layer.kernels}

    def buffers(self) -> dict:
        return {f"{name}.{k}": v for name, layer in self.layers() if isinstance(layer, NodeNorm) for k, v in layer.state.items()}

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))


def build_model(config: ModelConfig, f_in: int, n_classes: int, seed: Optional[int] = None) -> CtnnModel:
    """Fresh model with Glorot kernels, zero biases and unit norm scales."""
    if f_in < 1 or n_classes < 2:
        raise ConfigError("need f_in >= 1 input channels and at least 2 classes")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    ch, hops, ct = config.channels, config.hops, config.conv_type

    def block(k, f_a, f_b):
        return Block(
            [_make_conv(rng, ct, k, f_a, f_b), _make_conv(rng, ct, k, f_b, f_b)],
            [NodeNorm.init(f_b, config.norm_eps, config.norm_momentum) for _ in range(2)],
        )

    down = [block(hops[l], f_in if l == 0 else ch[l - 1], ch[l]) for l in range(config.L + 1)]
    up = [block(hops[l], ch[l] + ch[l + 1], ch[l]) for l in range(config.L)]
    head = Dense.init(rng, ch[0], n_classes)
    return CtnnModel(config, f_in, n_classes, down, up, head)


def _as_pyramid(model: CtnnModel, graphs) -> Pyramid:
    if isinstance(graphs, Pyramid):
        return graphs
    return prepare(graphs, model.config)


def _forward(model: CtnnModel, pyr: Pyramid, x0: np.ndarray, mode: str):
    L = model.config.L
    if pyr.n_levels != L + 1:
        raise ConfigError(f"input has {pyr.n_levels} levels, model expects {L + 1}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (pyr.n_nodes[0], model.f_in):
        raise ValueError(f"X0 must have shape {(pyr.n_nodes[0], model.f_in)}, got {x0.shape}")
    if mode == "eval" and model.config.norm_eval == "graph":
        mode = "graph"
    h = x0
    skips, down_c = [], []
    for l in range(L + 1):
        h, c = model.down[l].forward(pyr.ops[l], h, mode)
        skips.append(h)
        down_c.append(c)
        if l < L:
            h = pool(h, pyr.maps[l], pyr.pool_weights[l])
    up_c = [None] * L
    for l in range(L - 1, -1, -1):
        cat = np.concatenate([skips[l], unpool(h, pyr.maps[l])], axis=1)
        h, up_c[l] = model.up[l].forward(pyr.ops[l], cat, mode)
    logits, head_c = dense_forward(h, model.head)
    return logits, (down_c, up_c, head_c)


def _backward(model: CtnnModel, pyr: Pyramid, caches, dlogits: np.ndarray) -> dict:
    L = model.config.L
    ch = model.config.channels
    down_c, up_c, head_c = caches
    grads: dict = {}
    dh, g = dense_backward(head_c, dlogits)
    _store(grads, "head", g)
    dskip = [None] * (L + 1)
    for l in range(L):
        dcat = model.up[l].backward(up_c[l], dh, f"up{l}", grads)
        dskip[l] = dcat[:, : ch[l]]
        dh = unpool_backward(dcat[:, ch[l] :], pyr.maps[l])
    dskip[L] = dh
    d = None
    for l in range(L, -1, -1):
        ds = dskip[l] if d is None else dskip[l] + d
        dx = model.down[l].backward(down_c[l], ds, f"down{l}", grads)
        d = pool_backward(dx, pyr.maps[l - 1], pyr.pool_weights[l - 1]) if l > 0 else None
    return grads


def forward(model: CtnnModel, graphs, x0: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Level-0 logits ``(n_0, C)``; ``graphs`` is a hierarchy or a prepared :class:`Pyramid`."""
    return _forward(model, _as_pyramid(model, graphs), x0, mode)[0]


def loss_and_grads(model, graphs, x0, labels, weights=None, mode: str = "train"):
    """Loss, parameter gradients and logits for one sample."""
    pyr = _as_pyramid(model, graphs)
    logits, caches = _forward(model, pyr, x0, mode)
    loss, dlogits = softmax_xent(logits, labels, weights)
    return loss, _backward(model, pyr, caches, dlogits), logits


def predict(model: CtnnModel, graphs, x0: np.ndarray) -> np.ndarray:
    """Class per level-0 node; ties go to the smaller class id."""
    return np.argmax(forward(model, graphs, x0, "eval"), axis=1).astype(np.int64)


@dataclass
class Sample:
    """One training graph: hierarchy operators, node features, node labels, pixel counts."""

    pyramid: Pyramid
    x0: np.ndarray
    labels: np.ndarray
    pixel_counts: np.ndarray

    @classmethod
    def from_hierarchy(cls, hierarchy: TreeHierarchy, x0, labels, pixel_counts, config: ModelConfig) -> "Sample":
        return cls(prepare(hierarchy, config), np.asarray(x0, float), np.asarray(labels, np.int64), np.asarray(pixel_counts))


def train(model: CtnnModel, dataset: Sequence, config: Optional[ModelConfig] = None, log=None):
    """Momentum SGD, one graph per step, samples shuffled every epoch from the config seed.

    ``dataset`` holds :class:`Sample` objects or ``(hierarchy, x0, labels, pixel_counts)``
    tuples. Returns the model (updated in place) and the history of this run.
    """
    config = config or model.config
    if config.L != model.config.L:
        raise ConfigError("training config and model disagree on L")
    if not dataset:
        raise ValueError("dataset is empty")
    samples = [s if isinstance(s, Sample) else Sample.from_hierarchy(*s, config=model.config) for s in dataset]
    for s in samples:
        if s.labels.shape != (s.pyramid.n_nodes[0],):
            raise ValueError("need one label per level-0 node")
        if s.labels.size and (s.labels.min() < 0 or s.labels.max() >= model.n_classes):
            raise ValueError(f"labels must lie in [0, {model.n_classes})")
    state = OptimizerState(config.lr, config.momentum, config.decay, config.l2)
    params = model.parameters()
    kernels = model.kernel_names()
    rng = np.random.default_rng([config.seed, 1])
    start = len(model.history)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        losses, correct, total = [], 0, 0
        for i in order.tolist():
            s = samples[i]
            w = s.pixel_counts.astype(np.float64) if config.loss_weighting == "pixel_count" else None
            loss, grads, logits = loss_and_grads(model, s.pyramid, s.x0, s.labels, w)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, sample {i}")
            momentum_step(params, grads, state, epoch, kernels)
            losses.append(loss)
            correct += int((np.argmax(logits, axis=1) == s.labels).sum())
            total += s.labels.size
        rec = {"epoch": start + epoch, "loss": float(np.mean(losses)), "node_accuracy": correct / max(total, 1)}
        history.append(rec)
        if log is not None:
            log(rec)
    if config.recalibrate_norms and config.epochs > 0:
        recalibrate(model, samples)
    model.history.extend(history)
    return model, history


def recalibrate(model: CtnnModel, samples: Sequence[Sample]) -> None:
    """Set every norm's running statistics to the average per-graph statistics under the current parameters.

    The moving averages collected during training lag behind the parameters;
    one extra pass in training mode, with no update, replaces them.
    """
    norms = [layer for _, layer in model.layers() if isinstance(layer, NodeNorm)]
    saved = [n.momentum for n in norms]
    try:
        for i, s in enumerate(samples, start=1):
            for n in norms:
                n.momentum = (i - 1) / i  # cumulative mean
            _forward(model, s.pyramid, s.x0, "train")
    finally:
        for n, m in zip(norms, saved):
            n.momentum = m


def write_history_csv(path, history: list) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "node_accuracy"])
        for r in history:
            w.writerow([r["epoch"], repr(float(r["loss"])), repr(float(r["node_accuracy"]))])
    return path


def save_checkpoint(model: CtnnModel, path) -> Path:
    """JSON manifest plus a little-endian f64 payload of parameters and norm statistics."""
    path = Path(path).with_suffix(".json")
    arrays = list(model.parameters().items()) + list(model.buffers().items())
    table, offset = [], 0
    for name, a in arrays:
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    payload = np.concatenate([a.ravel() for _, a in arrays]).astype("<f8")
    path.with_suffix(".bin").write_bytes(payload.tobytes())
    man = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "f_in": model.f_in,
        "n_classes": model.n_classes,
        "down_path": DOWN_PATH,
        "laplacian": "normalized-symmetric" if model.config.conv_type == "cheby" else None,
        "lambda_max": model.config.lambda_method if model.config.conv_type == "cheby" else None,
        "n_parameters": model.n_parameters,
        "payload": path.with_suffix(".bin").name,
        "n_values": int(offset),
        "arrays": table,
        "history": model.history,
    }
    path.write_text(json.dumps(man, indent=1) + "\n")
    return path


def load_checkpoint(path) -> CtnnModel:
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON") from exc
    if man.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint manifest")
    if man.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {man.get('version')} unsupported (reader is {CHECKPOINT_VERSION})")
    raw = (path.parent / man["payload"]).read_bytes()
    if len(raw) != 8 * man["n_values"]:
        raise CheckpointError(f"{path}: payload has {len(raw)} bytes, expected {8 * man['n_values']}")
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    config = ModelConfig.from_dict(man["config"])
    model = build_model(config, man["f_in"], man["n_classes"])
    targets = {**model.parameters(), **model.buffers()}
    if {a["name"] for a in man["arrays"]} != set(targets):
        raise CheckpointError(f"{path}: parameter names do not match the configured architecture")
    for a in man["arrays"]:
        t = targets[a["name"]]
        if list(t.shape) != a["shape"]:
            raise CheckpointError(f"{path}: {a['name']} has shape {a['shape']}, architecture needs {list(t.shape)}")
        t[...] = data[a["offset"] : a["offset"] + t.size].reshape(t.shape)
    model.history = list(man.get("history", []))
    return model
