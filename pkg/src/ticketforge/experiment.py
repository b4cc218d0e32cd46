"""Experiment grids behind the CLI subcommands.

Output directory layout::

    <out>/vocab                      shared subword vocabulary
    <out>/config.resolved.ini        effective configuration
    <out>/divergence.csv
    <out>/manifest.json              status of every grid cell
    <out>/obtain_records.csv         all lottery records, ordered (domain, strategy, seed, round)
    <out>/runs/<domain>-<strategy>-seed<k>/{vocab, theta0.bin, tickets/round-<i>.tkt,
                                           records.csv, config.resolved.ini}
    <out>/transfer/<source>-<target>-<strategy>-seed<k>.csv
    <out>/transfer_records.csv
    <out>/transfer_phase.csv
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import corpus
from .config import ExperimentConfig, render_config
from .corpus import DomainDataset, SyntheticSpec
from .errors import DataError, TicketForgeError
from .lottery import InitStrategy, RoundRecord, run_lottery
from .store import load_run_tickets, save_run_tickets
from .transfer import (TransferRecord, TransferStrategy, phase_transition_scan, run_transfer,
                       ticket_target_records)
from .vocab import SubwordVocab, bpe_train, char_coverage

log = logging.getLogger(__name__)

RECORD_FIELDS = ["round", "sparsity", "val_acc", "test_acc", "stop_epoch", "strategy", "domain", "seed"]
TRANSFER_FIELDS = ["source", "target", "strategy", "round", "sparsity", "val_acc", "test_acc", "seed"]
CONFIG_NAME = "config.resolved.ini"
DONE_MARKER = "DONE"


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


# -- data --------------------------------------------------------------------

def load_raw_domains(cfg: ExperimentConfig) -> list[DomainDataset]:
    out = []
    for name in cfg.domains:
        if cfg.synthetic:
            s = cfg.synth
            records = corpus.synthetic_reviews(SyntheticSpec(
                name, topic=s.topics.get(name), topic_pool=s.topic_pool, records=s.records,
                noise=s.noise, neutral_fraction=s.neutral_fraction, seed=s.seed))
        else:
            records = corpus.read_jsonl(cfg.paths[name])
        out.append(corpus.ingest_reviews(records, cfg.sample_seed, cfg.sizes, name))
    return out


def vocab_path(cfg: ExperimentConfig) -> Path:
    return cfg.out / "vocab"


def build_vocab(cfg: ExperimentConfig, domains: Sequence[DomainDataset] | None = None
                ) -> tuple[SubwordVocab, float]:
    """Train the shared vocabulary on all training splits, save it, return it with its coverage."""
    domains = domains if domains is not None else load_raw_domains(cfg)
    texts = [t for d in domains for t in d.train.texts]
    try:
        vocab = bpe_train(texts, cfg.vocab_size, cfg.vocab_coverage)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    cfg.out.mkdir(parents=True, exist_ok=True)
    vocab.save(vocab_path(cfg))
    write_resolved_config(cfg, cfg.out)
    return vocab, char_coverage(vocab, texts)


def prepared_domains(cfg: ExperimentConfig) -> tuple[SubwordVocab, list[DomainDataset]]:
    """Load the saved vocabulary (training it first if absent) and encode every domain."""
    raw = load_raw_domains(cfg)
    if vocab_path(cfg).exists():
        vocab = SubwordVocab.load(vocab_path(cfg))
    else:
        log.info("no vocabulary at %s; building it", vocab_path(cfg))
        vocab, _ = build_vocab(cfg, raw)
    return vocab, [d.encode(vocab, cfg.model.max_len) for d in raw]


def write_resolved_config(cfg: ExperimentConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / CONFIG_NAME).write_text(render_config(cfg), encoding="utf-8")


def divergence(cfg: ExperimentConfig) -> tuple[list[str], np.ndarray]:
    vocab, domains = prepared_domains(cfg)
    matrix = corpus.divergence_matrix(domains, vocab.size)
    corpus.write_divergence_csv(cfg.out / "divergence.csv", [d.name for d in domains], matrix,
                                cfg.divergence_scale)
    return [d.name for d in domains], matrix


# -- manifest ------------------------------------------------------------------

class Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.data = json.loads(path.read_text()) if path.exists() else {}

    def set(self, phase: str, cell: str, status: str) -> None:
        self.data.setdefault(phase, {})[cell] = status
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True))
        tmp.replace(self.path)


def _run_grid(jobs: list, worker: Callable, threads: int) -> list:
    """Run jobs (possibly in parallel) and return results in job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [_safe(worker, j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_safe, worker, j) for j in jobs]
        return [f.result() for f in futures]


def _safe(worker, job):
    try:
        return worker(job)
    except TicketForgeError as exc:
        return exc


# -- obtain ------------------------------------------------------------------------

def run_id(domain: str, strategy: str, seed: int) -> str:
    return f"{domain}-{strategy}-seed{seed}"


@dataclass
class _ObtainJob:
    cfg: ExperimentConfig
    dataset: DomainDataset
    vocab_file: Path
    strategy: str
    seed: int
    run_dir: Path


def _obtain_worker(job: _ObtainJob) -> list[RoundRecord]:
    cfg = job.cfg
    model_cfg = cfg.model.resolve(_vocab_size(job.vocab_file))
    train_cfg = replace(cfg.train, seed=job.seed)
    result = run_lottery(job.dataset, model_cfg, cfg.prune, train_cfg, InitStrategy(job.strategy))
    if job.run_dir.exists():
        shutil.rmtree(job.run_dir)
    job.run_dir.mkdir(parents=True)
    shutil.copyfile(job.vocab_file, job.run_dir / "vocab")
    save_run_tickets(job.run_dir, result.tickets, result.theta0)
    write_records_csv(job.run_dir / "records.csv", result.records)
    write_resolved_config(cfg, job.run_dir)
    (job.run_dir / DONE_MARKER).write_text("")
    return result.records


def _vocab_size(path: Path) -> int:
    return SubwordVocab.load(path).size


def obtain(cfg: ExperimentConfig, force: bool = False) -> list[RoundRecord]:
    """Lottery runs for every (domain, strategy, seed); completed cells are reused unless forced."""
    vocab, domains = prepared_domains(cfg)
    write_resolved_config(cfg, cfg.out)
    manifest = Manifest(cfg.out / "manifest.json")
    jobs, cached = [], {}
    order = []
    for d in domains:
        for strategy in cfg.strategies:
            for seed in cfg.seeds:
                rid = run_id(d.name, strategy, seed)
                rdir = cfg.out / "runs" / rid
                order.append(rid)
                if not force and (rdir / DONE_MARKER).exists():
                    log.info("obtain %s: complete, skipping", rid)
                    cached[rid] = read_records_csv(rdir / "records.csv")
                    continue
                manifest.set("obtain", rid, "incomplete")
                jobs.append(_ObtainJob(cfg, d, vocab_path(cfg), strategy, seed, rdir))

    results = _run_grid(jobs, _obtain_worker, cfg.effective_threads())
    failures = []
    for job, res in zip(jobs, results):
        rid = job.run_dir.name
        if isinstance(res, Exception):
            manifest.set("obtain", rid, f"failed: {res}")
            failures.append(res)
        else:
            manifest.set("obtain", rid, "complete")
            cached[rid] = res
    for rid in order:
        if rid in cached and manifest.data.get("obtain", {}).get(rid) != "complete":
            manifest.set("obtain", rid, "complete")
    records = [r for rid in order if rid in cached for r in cached[rid]]
    write_records_csv(cfg.out / "obtain_records.csv", records)
    if failures:
        raise failures[0]
    return records


def write_records_csv(path: Path, records: Iterable[RoundRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])


def read_records_csv(path: Path) -> list[RoundRecord]:
    rows = _read_csv(path, RECORD_FIELDS)
    return [RoundRecord(int(r["round"]), float(r["sparsity"]), float(r["val_acc"]),
                        float(r["test_acc"]), int(r["stop_epoch"]), r["strategy"], r["domain"],
                        int(r["seed"])) for r in rows]


def _read_csv(path: Path, expected: list[str]) -> list[dict]:
    """Read a records CSV, converting numeric columns eagerly to report the bad line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"records file not found: {path}")
    numeric = {"round": int, "seed": int, "stop_epoch": int, "sparsity": float,
               "val_acc": float, "test_acc": float}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataError(f"{path}:1: expected header {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            rec = dict(zip(expected, row))
            for k, conv in numeric.items():
                if k in rec:
                    try:
                        conv(rec[k])
                    except ValueError as exc:
                        raise DataError(f"{path}:{lineno}: bad {k} value {rec[k]!r}") from exc
            rows.append(rec)
    return rows


# -- transfer ------------------------------------------------------------------------

@dataclass
class _TransferJob:
    cfg: ExperimentConfig
    source_run: Path
    target: DomainDataset
    strategy: str
    seed: int
    out_file: Path


def _transfer_worker(job: _TransferJob) -> list[TransferRecord]:
    tickets = load_run_tickets(job.source_run)
    train_cfg = replace(job.cfg.train, seed=job.seed)
    records = run_transfer(tickets, job.target, job.strategy, train_cfg)
    write_transfer_csv(job.out_file, records)
    return records


def transfer(cfg: ExperimentConfig, force: bool = False) -> tuple[list[TransferRecord], list[dict]]:
    """Transfer grid over configured (source, target, strategy, seed) cells.

    Source masks come from the source domain's reset lottery runs.
    """
    if not cfg.transfer.pairs:
        raise DataError("no transfer pairs configured ([transfer] pairs)")
    vocab, domains = prepared_domains(cfg)
    by_name = {d.name: d for d in domains}
    manifest = Manifest(cfg.out / "manifest.json")
    tdir = cfg.out / "transfer"
    tdir.mkdir(parents=True, exist_ok=True)
    jobs, cached, order = [], {}, []
    for src, tgt in cfg.transfer.pairs:
        for strategy in cfg.transfer.strategies:
            for seed in cfg.seeds:
                cell = f"{src}-{tgt}-{strategy}-seed{seed}"
                order.append(cell)
                if TransferStrategy(strategy) is TransferStrategy.TICKET_TARGET:
                    target_run = cfg.out / "runs" / run_id(tgt, "reset", seed)
                    if not (target_run / DONE_MARKER).exists():
                        raise DataError(f"ticket-target needs the target lottery run "
                                        f"{target_run.name} (missing: {target_run})")
                    cached[cell] = ticket_target_records(
                        read_records_csv(target_run / "records.csv"), src)
                    continue
                source_run = cfg.out / "runs" / run_id(src, "reset", seed)
                if not (source_run / DONE_MARKER).exists():
                    raise DataError(f"missing source tickets: run {source_run.name} not found "
                                    f"under {cfg.out / 'runs'}")
                out_file = tdir / f"{cell}.csv"
                if not force and out_file.exists():
                    cached[cell] = read_transfer_csv(out_file)
                    continue
                manifest.set("transfer", cell, "incomplete")
                jobs.append(_TransferJob(cfg, source_run, by_name[tgt], strategy, seed, out_file))

    results = _run_grid(jobs, _transfer_worker, cfg.effective_threads())
    failures = []
    for job, res in zip(jobs, results):
        cell = job.out_file.stem
        if isinstance(res, Exception):
            manifest.set("transfer", cell, f"failed: {res}")
            failures.append(res)
        else:
            manifest.set("transfer", cell, "complete")
            cached[cell] = res
    records = [r for cell in order if cell in cached for r in cached[cell]]
    write_transfer_csv(cfg.out / "transfer_records.csv", records)
    phases = transfer_phase_summary(records, cfg)
    write_phase_csv(cfg.out / "transfer_phase.csv", phases)
    if failures:
        raise failures[0]
    return records, phases


def transfer_phase_summary(records: Sequence[TransferRecord], cfg: ExperimentConfig) -> list[dict]:
    out = []
    for src, tgt in cfg.transfer.pairs:
        cell = [r for r in records if r.source == src and r.target == tgt]
        threshold = scan_records(cell, "masks-reset", "masks-random", cfg.transfer.window,
                                 cfg.transfer.margin, cfg.transfer.factor)
        out.append({"experiment": "transfer", "cell": f"{src}>{tgt}",
                    "reset": "masks-reset", "random": "masks-random", "threshold": threshold})
    return out


def scan_records(records, reset_name: str, random_name: str, window: int, margin: float,
                 factor: float) -> float | None:
    """Phase-transition scan over record objects grouped by seed and round."""
    def grid(name):
        rows = [r for r in records if r.strategy == name and r.round >= 1]
        rounds = sorted({r.round for r in rows})
        seeds = sorted({r.seed for r in rows})
        acc = np.full((len(seeds), len(rounds)), np.nan)
        spars = {}
        for r in rows:
            acc[seeds.index(r.seed), rounds.index(r.round)] = r.test_acc
            spars.setdefault(r.round, []).append(r.sparsity)
        return rounds, acc, spars

    r1, a1, s1 = grid(reset_name)
    r2, a2, _ = grid(random_name)
    if not r1 or r1 != r2 or len(r1) < window or np.isnan(a1).any() or np.isnan(a2).any():
        return None
    sparsity = [float(np.mean(s1[r])) for r in r1]
    return phase_transition_scan(sparsity, a1, a2, window, margin, factor)


def write_transfer_csv(path: Path, records: Iterable[TransferRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSFER_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in TRANSFER_FIELDS])


def read_transfer_csv(path: Path) -> list[TransferRecord]:
    rows = _read_csv(path, TRANSFER_FIELDS)
    return [TransferRecord(r["source"], r["target"], r["strategy"], int(r["round"]),
                           float(r["sparsity"]), float(r["val_acc"]), float(r["test_acc"]),
                           int(r["seed"])) for r in rows]


def write_phase_csv(path: Path, rows: Sequence[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "cell", "reset", "random", "threshold"])
        for r in rows:
            t = r["threshold"]
            w.writerow([r["experiment"], r["cell"], r["reset"], r["random"],
                        "none" if t is None else _fmt(t)])
