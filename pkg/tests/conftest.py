"""Shared fixtures plus a per-criterion summary for the acceptance suite."""

from __future__ import annotations

import re

import numpy as np
import pytest

from ticketforge.corpus import SyntheticSpec, ingest_reviews, synthetic_reviews
from ticketforge.textcnn import ModelConfig
from ticketforge.vocab import bpe_train

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _CRITERION.match(item.name)
    if not m:
        return
    n = int(m.group(1))
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _results[n] = (status, doc)
    elif rep.when == "teardown" and rep.outcome == "failed":
        _results[n] = ("FAIL", doc)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        status, doc = _results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {doc}")


@pytest.fixture(scope="session")
def tiny_domains():
    """Two small encoded synthetic domains sharing one vocabulary."""
    raw = [ingest_reviews(synthetic_reviews(SyntheticSpec(n, records=400, seed=3)), 0,
                          (120, 40, 40), n) for n in ("alpha", "beta")]
    vocab = bpe_train([t for d in raw for t in d.train.texts], 120)
    return vocab, [d.encode(vocab, 16) for d in raw]


@pytest.fixture(scope="session")
def tiny_cfg(tiny_domains):
    vocab, _ = tiny_domains
    return ModelConfig(vocab_size=vocab.size, embed_dim=6, heights=(2, 3), channels=4,
                       mlp_hidden=5, max_len=16, dropout_p=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
