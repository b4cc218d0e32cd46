"""Rating-labeled review domains and subword unigram divergences.

Records are ``(text, rating)`` pairs with ratings 1..5. Ratings 1-2 become
label 0, ratings 4-5 label 1, and rating 3 is dropped. Divergences are in
nats.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError
from .vocab import PAD_ID, SubwordVocab, encode_batch

LN2 = math.log(2.0)


@dataclass(frozen=True)
class Split:
    texts: tuple[str, ...]
    labels: np.ndarray
    ids: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def positive_fraction(self) -> float:
        return float(np.mean(self.labels)) if len(self.labels) else 0.0


@dataclass(frozen=True)
class DomainDataset:
    name: str
    train: Split
    validation: Split
    test: Split
    vocab_digest: str | None = None
    n_max: int | None = None

    @property
    def encoded(self) -> bool:
        return self.vocab_digest is not None

    def splits(self) -> dict[str, Split]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def encode(self, vocab: SubwordVocab, n_max: int) -> "DomainDataset":
        def enc(s: Split) -> Split:
            ids, _ = encode_batch(vocab, s.texts, n_max)
            return replace(s, ids=ids)

        return replace(self, train=enc(self.train), validation=enc(self.validation),
                       test=enc(self.test), vocab_digest=vocab.digest(), n_max=n_max)


def label_for_rating(rating: int) -> int | None:
    if rating in (1, 2):
        return 0
    if rating in (4, 5):
        return 1
    if rating == 3:
        return None
    raise DataError(f"rating must be an integer 1..5, got {rating!r}")


def read_jsonl(path) -> Iterator[tuple[str, int]]:
    """Yield ``(text, rating)`` from newline-delimited JSON review records."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"review file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, rating = rec["text"], rec["rating"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{p}:{lineno}: malformed review record") from exc
            if not isinstance(text, str) or isinstance(rating, bool) or not isinstance(rating, int):
                raise DataError(f"{p}:{lineno}: expected string text and integer rating")
            yield text, rating


def write_jsonl(records: Iterable[tuple[str, int]], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for text, rating in records:
            fh.write(json.dumps({"text": text, "rating": rating}) + "\n")


def ingest_reviews(records: Iterable[tuple[str, int]], seed: int,
                   sizes: tuple[int, int, int], name: str = "domain") -> DomainDataset:
    """Build class-balanced train/validation/test splits from review records.

    Each split size must be even; half of every split is drawn from each class
    without replacement, using a generator seeded by ``seed``.
    """
    for s in sizes:
        if s < 0 or s % 2:
            raise DataError(f"split sizes must be non-negative and even, got {sizes}")
    by_class: list[list[str]] = [[], []]
    for text, rating in records:
        label = label_for_rating(rating)
        if label is not None:
            by_class[label].append(text)
    need = sum(sizes) // 2
    for label, texts in enumerate(by_class):
        if len(texts) < need:
            kind = "negative" if label == 0 else "positive"
            raise DataError(f"domain {name!r}: need {need} {kind} records, have {len(texts)} "
                            f"(short by {need - len(texts)})")

    rng = np.random.default_rng(seed)
    picks = [rng.permutation(len(texts))[:need] for texts in by_class]
    splits = []
    start = 0
    for size in sizes:
        half = size // 2
        texts = [by_class[0][i] for i in picks[0][start:start + half]]
        texts += [by_class[1][i] for i in picks[1][start:start + half]]
        labels = np.array([0] * half + [1] * half, dtype=np.int64)
        order = rng.permutation(size)
        splits.append(Split(tuple(texts[i] for i in order), labels[order]))
        start += half
    return DomainDataset(name, *splits)


# -- synthetic domains ---------------------------------------------------------

POSITIVE_WORDS = ("great", "excellent", "love", "perfect", "amazing", "wonderful", "superb", "happy")
NEGATIVE_WORDS = ("bad", "terrible", "awful", "poor", "broken", "boring", "waste", "disappointing")
FILLER_WORDS = ("the", "this", "it", "was", "and", "very", "really", "is", "a", "with", "for", "of")

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def topic_words(topic: str, count: int) -> list[str]:
    """Deterministic pseudo-words for a topic, stable across platforms."""
    rng = np.random.default_rng(zlib.crc32(topic.encode("utf-8")))
    words: list[str] = []
    seen = set(POSITIVE_WORDS + NEGATIVE_WORDS + FILLER_WORDS)
    while len(words) < count:
        syllables = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    topic: str | None = None
    topic_pool: int = 40
    records: int = 1000
    noise: float = 0.0
    neutral_fraction: float = 0.1
    min_words: int = 8
    max_words: int = 14
    seed: int = 0


def synthetic_reviews(spec: SyntheticSpec) -> list[tuple[str, int]]:
    """Template reviews: topic words, fillers and one or two sentiment words.

    The sentiment words are shared by all domains; the topic pool depends only
    on ``spec.topic`` (default: the domain name). With probability ``noise`` the
    rating is flipped to the opposite polarity.
    """
    pool = topic_words(spec.topic or spec.name, spec.topic_pool)
    rng = np.random.default_rng([spec.seed, zlib.crc32(spec.name.encode("utf-8"))])
    out = []
    for _ in range(spec.records):
        n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
        neutral = rng.random() < spec.neutral_fraction
        positive = bool(rng.random() < 0.5)
        n_sent = 0 if neutral else int(rng.integers(1, 3))
        n_topic = max(1, (n_words - n_sent) * 2 // 3)
        n_fill = max(0, n_words - n_sent - n_topic)
        sent_pool = POSITIVE_WORDS if positive else NEGATIVE_WORDS
        words = [pool[i] for i in rng.integers(len(pool), size=n_topic)]
        words += [FILLER_WORDS[i] for i in rng.integers(len(FILLER_WORDS), size=n_fill)]
        words += [sent_pool[i] for i in rng.integers(len(sent_pool), size=n_sent)]
        words = [words[i] for i in rng.permutation(len(words))]
        if neutral:
            rating = 3
        else:
            if rng.random() < spec.noise:
                positive = not positive
            rating = int(rng.integers(4, 6)) if positive else int(rng.integers(1, 3))
        out.append((" ".join(words), rating))
    return out


# -- divergences ---------------------------------------------------------------

def unigram_distribution(d: DomainDataset | np.ndarray, vocab_size: int | None = None) -> np.ndarray:
    """Relative frequency of each id over the training split, pad excluded."""
    if isinstance(d, DomainDataset):
        if d.train.ids is None:
            raise DataError(f"domain {d.name!r} is not encoded")
        ids = d.train.ids
    else:
        ids = np.asarray(d)
    ids = ids.reshape(-1)
    ids = ids[ids != PAD_ID]
    if ids.size == 0:
        raise DataError("no non-pad tokens in training split")
    size = vocab_size if vocab_size is not None else int(ids.max()) + 1
    counts = np.bincount(ids, minlength=size).astype(np.float64)
    return counts / counts.sum()


def kl_divergence(p, q) -> float:
    """Discrete KL(p||q) in nats; zero-probability terms of p contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("absolute continuity violated: q(x)=0 where p(x)>0")
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence against the midpoint mixture, in nats."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def divergence_matrix(domains: Sequence[DomainDataset], vocab_size: int) -> np.ndarray:
    if len(domains) < 2:
        raise ValueError("need at least two domains")
    digests = {d.vocab_digest for d in domains}
    if len(digests) != 1 or None in digests:
        raise DataError("all domains must be encoded with the same vocabulary")
    dists = [unigram_distribution(d, vocab_size) for d in domains]
    k = len(dists)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = jsd(dists[i], dists[j])
    return out


def write_divergence_csv(path, names: Sequence[str], matrix: np.ndarray, scale: float = 1.0) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", *names])
        for name, row in zip(names, matrix):
            w.writerow([name, *(f"{v * scale:.10g}" for v in row)])


def read_divergence_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return names, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
