"""Layer-wise magnitude pruning with nested binary masks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .textcnn import ModelConfig, ParamSet, layer_groups, param_shapes
from .vocab import PAD_ID

log = logging.getLogger(__name__)

KEEP_FRACTION = "keep-fraction"
PAPER_LITERAL = "paper-literal"


@dataclass(frozen=True)
class PruneConfig:
    fraction: float = 0.35
    rounds: int = 20
    # keep-fraction: keep round((1-p)*len) per layer so sparsity is 1-(1-p)^r.
    # paper-literal: keep round(p*len), the per-layer formula read verbatim.
    mode: str = KEEP_FRACTION

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(f"prune fraction must be in (0, 1), got {self.fraction}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.mode not in (KEEP_FRACTION, PAPER_LITERAL):
            raise ConfigError(f"unknown prune mode {self.mode!r}")


@dataclass
class MaskSet:
    masks: dict[str, np.ndarray]
    round: int = 0

    @classmethod
    def ones(cls, cfg: ModelConfig) -> "MaskSet":
        return cls({n: np.ones(s, dtype=bool) for n, s in param_shapes(cfg).items()}, 0)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "MaskSet":
        return cls({n: np.zeros(s, dtype=bool) for n, s in param_shapes(cfg).items()}, 0)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.masks[name]

    def __iter__(self):
        return iter(self.masks)

    def items(self):
        return self.masks.items()

    def prunable_view(self, name: str) -> np.ndarray:
        m = self.masks[name]
        return m[PAD_ID + 1:] if name == "embedding" else m

    def prunable_ones(self) -> int:
        return sum(int(self.prunable_view(n).sum()) for n in self.masks)

    def prunable_total(self) -> int:
        return sum(self.prunable_view(n).size for n in self.masks)

    def is_nested_in(self, other: "MaskSet") -> bool:
        """True when every kept position here is also kept in ``other``."""
        return all(not np.any(self.masks[n] & ~other.masks[n]) for n in self.masks)

    def apply(self, params: ParamSet) -> ParamSet:
        return {n: np.where(self.masks[n], p, 0).astype(p.dtype) for n, p in params.items()}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def l0_project_topk(values, k: int) -> np.ndarray:
    """Boolean mask keeping the ``k`` largest-magnitude entries.

    Ties at the threshold go to the lower flat index.
    """
    v = np.asarray(values)
    flat = v.reshape(-1)
    if not 0 <= k <= flat.size:
        raise ValueError(f"k must be in [0, {flat.size}], got {k}")
    keep = np.zeros(flat.size, dtype=bool)
    if k:
        order = np.argsort(-np.abs(flat), kind="stable")
        keep[order[:k]] = True
    return keep.reshape(v.shape)


def keep_count(survivors: int, cfg: PruneConfig) -> int:
    if survivors == 0:
        return 0
    share = 1.0 - cfg.fraction if cfg.mode == KEEP_FRACTION else cfg.fraction
    return min(survivors, max(1, _round_half_up(share * survivors)))


def prune_round(params: ParamSet, prev: MaskSet, cfg: PruneConfig, model_cfg: ModelConfig) -> MaskSet:
    """Prune a fraction of each layer's surviving weights by magnitude.

    Selection is per layer (a layer's weight and bias tensors are ranked
    together). Pruned positions never come back.
    """
    new = {n: m.copy() for n, m in prev.masks.items()}
    for layer, names in enumerate(layer_groups(model_cfg)):
        vals = np.concatenate([_prunable(params[n], n).reshape(-1) for n in names])
        alive = np.concatenate([prev.prunable_view(n).reshape(-1) for n in names])
        survivors = int(alive.sum())
        if survivors == 0:
            log.warning("layer %d has no surviving weights; skipping", layer)
            continue
        k = keep_count(survivors, cfg)
        idx = np.flatnonzero(alive)
        keep_alive = l0_project_topk(vals[idx], k)
        flat = np.zeros(alive.size, dtype=bool)
        flat[idx[keep_alive]] = True
        start = 0
        for n in names:
            view = _prunable(new[n], n)
            view[...] = flat[start:start + view.size].reshape(view.shape)
            start += view.size
    return MaskSet(new, prev.round + 1)


def _prunable(arr: np.ndarray, name: str) -> np.ndarray:
    return arr[PAD_ID + 1:] if name == "embedding" else arr


def sparsity_of(mask: MaskSet, prunable_total: int | None = None) -> float:
    """Fraction of prunable positions that are masked out."""
    total = mask.prunable_total() if prunable_total is None else prunable_total
    return 1.0 - mask.prunable_ones() / total


def expected_sparsity(cfg: PruneConfig, rounds: int) -> float:
    if rounds > cfg.rounds:
        raise ValueError(f"rounds {rounds} exceeds configured total {cfg.rounds}")
    return 1.0 - (1.0 - cfg.fraction) ** rounds


def simulated_survivors(layer_sizes, cfg: PruneConfig, rounds: int) -> list[int]:
    """Per-layer survivor counts after ``rounds`` rounds, from sizes alone."""
    counts = list(layer_sizes)
    for _ in range(rounds):
        counts = [keep_count(c, cfg) for c in counts]
    return counts


def mask_gradients(grads: dict[str, np.ndarray], mask: MaskSet) -> dict[str, np.ndarray]:
    out = {}
    for name, g in grads.items():
        m = mask[name]
        if m.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs mask shape {m.shape}")
        out[name] = np.where(m, g, 0).astype(g.dtype)
    return out
