"""Across-seed summaries of lottery and transfer records, plus figures.

Summary rows are long format: one row per (experiment, cell, strategy,
round) with the mean and population standard deviation (ddof=0) of test
accuracy over seeds.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import load_config
from .errors import ConfigError, DataError
from .experiment import CONFIG_NAME, read_records_csv, read_transfer_csv, scan_records, write_phase_csv

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["experiment", "cell", "strategy", "round", "sparsity", "expected_sparsity",
                  "mean_test_acc", "std_test_acc", "n_seeds"]


@dataclass
class SummaryRow:
    experiment: str
    cell: str
    strategy: str
    round: int
    sparsity: float
    expected_sparsity: float | None
    mean_test_acc: float
    std_test_acc: float
    n_seeds: int


def summarize(records, experiment: str, cell_of, prune_fraction: float | None = None
              ) -> list[SummaryRow]:
    groups: dict[tuple, list] = defaultdict(list)
    for r in records:
        groups[(cell_of(r), r.strategy, r.round)].append(r)
    rows = []
    for (cell, strategy, rnd), rs in sorted(groups.items()):
        acc = np.array([r.test_acc for r in rs])
        expected = None if prune_fraction is None else 1.0 - (1.0 - prune_fraction) ** rnd
        rows.append(SummaryRow(experiment, cell, strategy, rnd,
                               float(np.mean([r.sparsity for r in rs])), expected,
                               float(acc.mean()), float(acc.std()), len(rs)))
    return rows


def full_model_rows(obtain_rows: Sequence[SummaryRow], records) -> list[SummaryRow]:
    """Round-0 dense baseline per domain, one value per seed."""
    per_cell: dict[str, dict[int, float]] = defaultdict(dict)
    for r in records:
        if r.round == 0:
            per_cell[r.domain].setdefault(r.seed, r.test_acc)
    out = []
    for cell, by_seed in sorted(per_cell.items()):
        acc = np.array(list(by_seed.values()))
        out.append(SummaryRow("obtain", cell, "full-model", 0, 0.0, 0.0,
                              float(acc.mean()), float(acc.std()), len(acc)))
    return out


def write_summary_csv(path: Path, rows: Sequence[SummaryRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            vals = []
            for f in SUMMARY_FIELDS:
                v = getattr(r, f)
                vals.append("" if v is None else f"{v:.10g}" if isinstance(v, float) else str(v))
            w.writerow(vals)


def _prune_fraction(run_dir: Path) -> float | None:
    cfg_file = run_dir / CONFIG_NAME
    if not cfg_file.exists():
        return None
    try:
        return load_config(cfg_file).prune.fraction
    except ConfigError:
        log.warning("could not read %s; expected sparsity left blank", cfg_file)
        return None


def report(run_dirs: Sequence[Path], out_dir: Path | None = None, window: int = 2,
           margin: float = 0.02, factor: float = 2.0, figures: bool = True) -> dict:
    """Summaries, phase-transition scans and figures for one or more output directories."""
    if not run_dirs:
        raise DataError("no run directories given")
    out_dir = Path(out_dir) if out_dir else Path(run_dirs[0]) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    obtain_records, transfer_records = [], []
    fraction = None
    for d in map(Path, run_dirs):
        found = False
        if (d / "obtain_records.csv").exists():
            obtain_records += read_records_csv(d / "obtain_records.csv")
            found = True
        if (d / "transfer_records.csv").exists():
            transfer_records += read_transfer_csv(d / "transfer_records.csv")
            found = True
        if not found:
            raise DataError(f"no records CSV in {d}")
        fraction = fraction if fraction is not None else _prune_fraction(d)

    rows = summarize(obtain_records, "obtain", lambda r: r.domain, fraction)
    rows += full_model_rows(rows, obtain_records)
    rows += summarize(transfer_records, "transfer", lambda r: f"{r.source}>{r.target}", fraction)
    write_summary_csv(out_dir / "summary.csv", rows)

    phases = []
    for dom in sorted({r.domain for r in obtain_records}):
        recs = [r for r in obtain_records if r.domain == dom]
        phases.append({"experiment": "obtain", "cell": dom, "reset": "reset", "random": "random",
                       "threshold": scan_records(recs, "reset", "random", window, margin, factor)})
    for cell in sorted({(r.source, r.target) for r in transfer_records}):
        recs = [r for r in transfer_records if (r.source, r.target) == cell]
        phases.append({"experiment": "transfer", "cell": f"{cell[0]}>{cell[1]}",
                       "reset": "masks-reset", "random": "masks-random",
                       "threshold": scan_records(recs, "masks-reset", "masks-random", window,
                                                 margin, factor)})
    write_phase_csv(out_dir / "phase_transition.csv", phases)

    written = []
    if figures:
        from .plotting import plot_summary
        written = plot_summary(rows, out_dir)
    return {"rows": rows, "phases": phases, "figures": written, "out_dir": out_dir}
