"""Re-training source-domain masks in a target domain, and phase-transition detection."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import DomainDataset
from .errors import DataError
from .lottery import (_TRANSFER_RANDOM, InitStrategy, RoundRecord, StepCallback, TrainConfig,
                      apply_init_strategy, stream, train_round)
from .store import Ticket


class TransferStrategy(str, enum.Enum):
    MASKS_RESET = "masks-reset"
    MASKS_RANDOM = "masks-random"
    TICKET_TARGET = "ticket-target"


@dataclass
class TransferRecord:
    source: str
    target: str
    strategy: str
    round: int
    sparsity: float
    val_acc: float
    test_acc: float
    seed: int


def run_transfer(tickets: Sequence[Ticket], target: DomainDataset,
                 strategy: TransferStrategy | str, train_cfg: TrainConfig,
                 step_callback: StepCallback | None = None) -> list[TransferRecord]:
    """Train every source ticket's mask once on ``target``; masks are never re-pruned.

    Round ``i`` uses the same training streams as round ``i`` of a lottery run
    with ``train_cfg.seed``, so transferring into the source domain itself
    with masks-reset reproduces that run's records.
    """
    strategy = TransferStrategy(strategy)
    if strategy is TransferStrategy.TICKET_TARGET:
        raise ValueError("ticket-target re-reports target lottery records; use ticket_target_records")
    out = []
    for t in tickets:
        if t.vocab_digest != target.vocab_digest:
            raise DataError("tickets and target must share subword support "
                            f"(ticket vocab {t.vocab_digest[:12]}, target vocab "
                            f"{str(target.vocab_digest)[:12]})")
        if t.mask is None:
            raise DataError(f"ticket for round {t.round} carries no mask")
        if strategy is TransferStrategy.MASKS_RESET:
            start = apply_init_strategy(t.theta0, t.mask, InitStrategy.RESET)
        else:
            start = apply_init_strategy(t.theta0, t.mask, InitStrategy.RANDOM, t.model_cfg,
                                        stream(train_cfg.seed, t.round, 0, _TRANSFER_RANDOM))
        _, rec = train_round(start, t.mask, target, t.model_cfg, train_cfg, t.round, step_callback)
        out.append(TransferRecord(t.domain, target.name, strategy.value, t.round, rec.sparsity,
                                  rec.val_acc, rec.test_acc, train_cfg.seed))
    return out


def ticket_target_records(target_records: Sequence[RoundRecord], source: str) -> list[TransferRecord]:
    """The target domain's own reset-ticket records, relabelled for comparison."""
    return [TransferRecord(source, r.domain, TransferStrategy.TICKET_TARGET.value, r.round,
                           r.sparsity, r.val_acc, r.test_acc, r.seed)
            for r in target_records if r.round >= 1]


def phase_transition_scan(sparsity: Sequence[float], reset_acc, random_acc, window: int = 2,
                          margin: float = 0.02, factor: float = 2.0) -> float | None:
    """Smallest sparsity where reset initialization pulls away from random.

    ``reset_acc`` and ``random_acc`` are [seeds, rounds] accuracy arrays over
    the rounds in ``sparsity``. A round qualifies when, for it and the next
    ``window - 1`` rounds, the mean reset-minus-random gap exceeds ``margin``
    and the across-seed standard deviation of random is at least ``factor``
    times that of reset. Returns ``None`` when no round qualifies.
    """
    reset = np.atleast_2d(np.asarray(reset_acc, dtype=np.float64))
    rand = np.atleast_2d(np.asarray(random_acc, dtype=np.float64))
    k = len(sparsity)
    if reset.shape[1] != k or rand.shape[1] != k:
        raise ValueError(f"round grids differ: {len(sparsity)} sparsities, "
                         f"reset {reset.shape[1]} rounds, random {rand.shape[1]} rounds")
    if window < 1:
        raise ValueError("window must be >= 1")
    gap = reset.mean(axis=0) - rand.mean(axis=0)
    spread_ok = rand.std(axis=0) >= factor * reset.std(axis=0)
    ok = (gap > margin) & spread_ok
    for i in range(k - window + 1):
        if ok[i:i + window].all():
            return float(sparsity[i])
    return None
