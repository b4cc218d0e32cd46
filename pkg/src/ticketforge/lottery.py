"""Iterative lottery-ticket training.

A run trains the dense network once (the seed round), then repeats
prune -> re-initialize -> train for ``PruneConfig.rounds`` rounds. Every
source of randomness is a generator keyed by ``(seed, round, epoch, purpose)``
so rounds never depend on how much randomness earlier rounds consumed.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import DomainDataset
from .errors import ConfigError, DataError, NumericalError
from .pruning import MaskSet, PruneConfig, mask_gradients, prune_round, sparsity_of
from .store import Ticket, params_digest
from .textcnn import ModelConfig, ParamSet, accuracy, init_params, loss_and_grads

log = logging.getLogger(__name__)

# stream purposes
_SHUFFLE, _DROPOUT, _TICKET_RANDOM, _TRANSFER_RANDOM = 0, 1, 2, 3


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 15
    learning_rate: float = 1e-3
    l2_weight: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if self.learning_rate <= 0 or self.l2_weight < 0 or self.eps <= 0:
            raise ConfigError("learning_rate and eps must be positive, l2_weight non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")


class InitStrategy(str, enum.Enum):
    RESET = "reset"
    RANDOM = "random"


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, mask: MaskSet | None = None) -> tuple[ParamSet, AdamState]:
    """One Adam update with coupled l2 (``l2_weight * theta`` added to the gradient).

    ``params`` and ``state`` are updated in place and returned. Masked
    positions are forced to exactly zero afterwards.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name} at step {state.t + 1}")
    state.t += 1
    t = state.t
    lr, b1, b2, eps = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        dt = p.dtype.type
        g = g + dt(cfg.l2_weight) * p if cfg.l2_weight else g
        if mask is not None:
            g = np.where(mask[name], g, 0).astype(p.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = dt(b1) * m + dt(1 - b1) * g
        v = dt(b2) * v + dt(1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p -= dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))
        if mask is not None:
            p[~mask[name]] = 0
    return params, state


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float


@dataclass
class RoundRecord:
    round: int
    sparsity: float
    val_acc: float
    test_acc: float
    stop_epoch: int
    strategy: str = ""
    domain: str = ""
    seed: int = 0
    epochs: list[EpochLog] = field(default_factory=list, repr=False, compare=False)


StepCallback = Callable[[ParamSet, MaskSet, int], None]


def _check_dataset(dataset: DomainDataset, model_cfg: ModelConfig) -> None:
    for split_name, split in dataset.splits().items():
        if split.ids is None:
            raise DataError(f"domain {dataset.name!r} is not encoded")
        if len(split) == 0:
            raise DataError(f"domain {dataset.name!r}: empty {split_name} split")
        if split.ids.shape[1] != model_cfg.max_len:
            raise DataError(f"domain {dataset.name!r} encoded with length {split.ids.shape[1]}, "
                            f"model expects {model_cfg.max_len}")


def train_round(params: ParamSet, mask: MaskSet, dataset: DomainDataset, model_cfg: ModelConfig,
                cfg: TrainConfig, round_index: int = 0,
                step_callback: StepCallback | None = None) -> tuple[ParamSet, RoundRecord]:
    """Train a (masked) network and keep the best-validation snapshot.

    The returned record carries the test accuracy of that snapshot; ties in
    validation accuracy keep the earlier epoch. ``max_epochs == 0`` evaluates
    the starting parameters.
    """
    _check_dataset(dataset, model_cfg)
    params = mask.apply(params)
    tr, va, te = dataset.train, dataset.validation, dataset.test

    def evaluate(p):
        return (accuracy(p, va.ids, va.labels, model_cfg, mask),
                accuracy(p, te.ids, te.labels, model_cfg, mask))

    sparsity = sparsity_of(mask)
    if cfg.max_epochs == 0:
        val_acc, test_acc = evaluate(params)
        return params, RoundRecord(round_index, sparsity, val_acc, test_acc, 0,
                                   epochs=[EpochLog(0, float("nan"), val_acc, test_acc)])

    state = AdamState()
    best = None
    logs: list[EpochLog] = []
    since_best = 0
    n = len(tr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = stream(cfg.seed, round_index, epoch, _SHUFFLE).permutation(n)
        drop_rng = stream(cfg.seed, round_index, epoch, _DROPOUT)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, tr.ids[idx], tr.labels[idx], model_cfg,
                                         mask.masks, mode="train", rng=drop_rng)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss in round {round_index}, epoch {epoch}")
            total += loss * len(idx)
            grads = mask_gradients(grads, mask)
            adam_step(params, grads, state, cfg, mask)
            if step_callback is not None:
                step_callback(params, mask, state.t)
        val_acc, test_acc = evaluate(params)
        logs.append(EpochLog(epoch, total / n, val_acc, test_acc))
        if best is None or val_acc > best[1]:
            best = (epoch, val_acc, test_acc, {k: v.copy() for k, v in params.items()})
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    epoch, val_acc, test_acc, snapshot = best
    return snapshot, RoundRecord(round_index, sparsity, val_acc, test_acc, epoch, epochs=logs)


def apply_init_strategy(theta0: ParamSet | None, mask: MaskSet, strategy: InitStrategy | str,
                        model_cfg: ModelConfig | None = None,
                        rng: np.random.Generator | None = None) -> ParamSet:
    """Starting values of a subnetwork: ``mask * theta0`` or ``mask * fresh draw``."""
    strategy = InitStrategy(strategy)
    if strategy is InitStrategy.RESET:
        if theta0 is None:
            raise ValueError("reset initialization needs the stored initial parameters")
        return mask.apply(theta0)
    if model_cfg is None or rng is None:
        raise ValueError("random initialization needs a model config and a generator")
    dtype = next(iter(theta0.values())).dtype if theta0 else np.float32
    return mask.apply(init_params(model_cfg, rng, dtype=dtype))


@dataclass
class LotteryResult:
    theta0: ParamSet
    tickets: list[Ticket]
    records: list[RoundRecord]


def run_lottery(dataset: DomainDataset, model_cfg: ModelConfig, prune_cfg: PruneConfig,
                train_cfg: TrainConfig, strategy: InitStrategy | str = InitStrategy.RESET,
                step_callback: StepCallback | None = None,
                dtype=np.float32) -> LotteryResult:
    """Seed round plus ``prune_cfg.rounds`` prune/re-initialize/train rounds.

    Round 0 is the dense Full-Model baseline. Each later round prunes the
    weights trained in the previous round.
    """
    strategy = InitStrategy(strategy)
    seed = train_cfg.seed
    theta0 = init_params(model_cfg, stream(seed), dtype=dtype)
    digest = params_digest(theta0)
    frozen = {k: v.copy() for k, v in theta0.items()}

    mask = MaskSet.ones(model_cfg)
    trained, record = train_round(theta0, mask, dataset, model_cfg, train_cfg, 0, step_callback)
    records = [_label(record, strategy, dataset, seed)]
    log.info("%s/%s/seed %d round 0: test %.4f", dataset.name, strategy.value, seed, record.test_acc)

    tickets = []
    for r in range(1, prune_cfg.rounds + 1):
        mask = prune_round(trained, mask, prune_cfg, model_cfg)
        start = apply_init_strategy(frozen, mask, strategy, model_cfg,
                                    stream(seed, r, 0, _TICKET_RANDOM))
        trained, record = train_round(start, mask, dataset, model_cfg, train_cfg, r, step_callback)
        records.append(_label(record, strategy, dataset, seed))
        tickets.append(Ticket(r, mask, frozen, digest, model_cfg, prune_cfg,
                              dataset.vocab_digest, dataset.name, seed, strategy.value,
                              record.sparsity))
        log.info("%s/%s/seed %d round %d: sparsity %.4f test %.4f", dataset.name,
                 strategy.value, seed, r, record.sparsity, record.test_acc)
    return LotteryResult(frozen, tickets, records)


def _label(record: RoundRecord, strategy: InitStrategy, dataset: DomainDataset, seed: int) -> RoundRecord:
    record.strategy = strategy.value
    record.domain = dataset.name
    record.seed = seed
    return record
