"""Convolutional sentence classifier.

Embedding lookup, parallel 1-D convolutions of several heights with ReLU and
1-max pooling, concatenation of the pooled channels, and a one-hidden-layer
MLP producing class logits.

Parameters live in a plain ``dict[str, np.ndarray]`` (a "param set"). Names
and their layer indices are fixed by the config: the embedding is layer 0,
then one layer per filter height (filter + bias), then the two MLP layers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .vocab import PAD_ID

ParamSet = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 8000
    embed_dim: int = 417
    heights: tuple[int, ...] = (3, 4, 5)
    channels: int = 127
    mlp_hidden: int = 117
    num_classes: int = 2
    max_len: int = 500
    dropout_p: float = 0.285

    def __post_init__(self):
        object.__setattr__(self, "heights", tuple(int(h) for h in self.heights))
        ints = [self.vocab_size, self.embed_dim, self.channels, self.mlp_hidden,
                self.num_classes, self.max_len, *self.heights]
        if not self.heights or any(v <= 0 for v in ints):
            raise ConfigError(f"model config values must be positive: {self}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.max_len < max(self.heights):
            raise ConfigError(f"max_len {self.max_len} shorter than largest filter {max(self.heights)}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def feature_dim(self) -> int:
        return self.channels * len(self.heights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heights"] = list(self.heights)
        return d


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"embedding": (cfg.vocab_size, cfg.embed_dim)}
    for h in cfg.heights:
        shapes[f"conv{h}.weight"] = (cfg.channels, h, cfg.embed_dim)
        shapes[f"conv{h}.bias"] = (cfg.channels,)
    shapes["mlp1.weight"] = (cfg.feature_dim, cfg.mlp_hidden)
    shapes["mlp1.bias"] = (cfg.mlp_hidden,)
    shapes["mlp2.weight"] = (cfg.mlp_hidden, cfg.num_classes)
    shapes["mlp2.bias"] = (cfg.num_classes,)
    return shapes


def layer_groups(cfg: ModelConfig) -> list[list[str]]:
    """Tensor names per layer index (embedding is layer 0)."""
    groups = [["embedding"]]
    groups += [[f"conv{h}.weight", f"conv{h}.bias"] for h in cfg.heights]
    groups += [["mlp1.weight", "mlp1.bias"], ["mlp2.weight", "mlp2.bias"]]
    return groups


def count_params(cfg: ModelConfig) -> dict[int, int]:
    """Trainable values per layer index."""
    shapes = param_shapes(cfg)
    return {i: sum(math.prod(shapes[n]) for n in names)
            for i, names in enumerate(layer_groups(cfg))}


def prunable_counts(cfg: ModelConfig) -> dict[int, int]:
    """Like :func:`count_params` but without the fixed pad embedding row."""
    counts = count_params(cfg)
    counts[0] -= cfg.embed_dim
    return counts


def he_bound(a: float, fan_in: int) -> float:
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(6.0 / ((1.0 + a * a) * fan_in))


def fan_in(cfg: ModelConfig, name: str) -> int:
    if name.startswith("conv"):
        h = int(name[4:].split(".")[0])
        return h * cfg.embed_dim
    if name.startswith("mlp1"):
        return cfg.feature_dim
    if name.startswith("mlp2"):
        return cfg.mlp_hidden
    raise KeyError(name)


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParamSet:
    """Unit-Gaussian embedding, He-uniform weights (a=0), zero biases.

    The pad row of the embedding is zero and stays zero.
    """
    params: ParamSet = {}
    for name, shape in param_shapes(cfg).items():
        if name == "embedding":
            w = rng.standard_normal(shape)
            w[PAD_ID] = 0.0
        elif name.endswith(".bias"):
            w = np.zeros(shape)
        else:
            b = he_bound(0.0, fan_in(cfg, name))
            w = rng.uniform(-b, b, size=shape)
        params[name] = w.astype(dtype)
    return params


@dataclass
class ForwardPass:
    logits: T.Tensor
    leaves: dict[str, T.Tensor]
    tape: T.GradTape | None = None
    features: T.Tensor | None = field(default=None, repr=False)


def forward(params: ParamSet, ids: np.ndarray, cfg: ModelConfig, mask: dict | None = None,
            mode: str = "eval", rng: np.random.Generator | None = None,
            record: bool | None = None) -> ForwardPass:
    """Logits for a batch of id sequences ``ids`` of shape [batch, max_len].

    With a mask, the effective parameters are ``mask * params``; the product
    is recorded on the tape so gradients of pruned positions are zero.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
        raise ValueError(f"ids must have shape [batch, {cfg.max_len}], got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError("token id outside vocabulary")
    shapes = param_shapes(cfg)
    if record is None:
        record = mode == "train"
    tape = T.GradTape() if record else None

    leaves = {}
    eff = {}
    for name, shape in shapes.items():
        w = params[name]
        if w.shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {w.shape}")
        leaf = T.Tensor(w, name=name)
        leaves[name] = leaf
        if mask is not None:
            m = mask[name]
            if m.shape != shape:
                raise ValueError(f"mask {name}: expected shape {shape}, got {m.shape}")
            leaf = T.mul(leaf, T.Tensor(m.astype(w.dtype)), tape)
        eff[name] = leaf

    x = T.embedding(eff["embedding"], ids, tape, padding_idx=PAD_ID)
    x = T.dropout(x, cfg.dropout_p, mode == "train", rng, tape)
    pooled = []
    for h in cfg.heights:
        c = T.conv1d(x, eff[f"conv{h}.weight"], eff[f"conv{h}.bias"], tape)
        c = T.relu(c, tape)
        pooled.append(T.max_over_time(c, tape))
    feats = T.concat(pooled, tape)
    hidden = T.relu(T.affine(feats, eff["mlp1.weight"], eff["mlp1.bias"], tape), tape)
    logits = T.affine(hidden, eff["mlp2.weight"], eff["mlp2.bias"], tape)
    return ForwardPass(logits, leaves, tape, feats)


def predict(params: ParamSet, ids: np.ndarray, cfg: ModelConfig, mask: dict | None = None,
            batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(ids), batch_size):
        fp = forward(params, ids[start:start + batch_size], cfg, mask, mode="eval")
        out.append(np.argmax(fp.logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(params: ParamSet, ids: np.ndarray, labels: np.ndarray, cfg: ModelConfig,
             mask: dict | None = None) -> float:
    if len(labels) == 0:
        raise ValueError("cannot compute accuracy on an empty split")
    return float(np.mean(predict(params, ids, cfg, mask) == labels))


def loss_and_grads(params: ParamSet, ids: np.ndarray, labels: np.ndarray, cfg: ModelConfig,
                   mask: dict | None = None, mode: str = "train",
                   rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of a batch and its gradient for every parameter tensor."""
    fp = forward(params, ids, cfg, mask, mode=mode, rng=rng, record=True)
    loss = T.softmax_cross_entropy(fp.logits, labels, fp.tape)
    grads = T.backward(fp.tape, loss)
    out = {}
    for name, leaf in fp.leaves.items():
        g = grads.get(leaf)
        out[name] = g if g is not None else np.zeros_like(leaf.data)
    return float(loss.data), out
