"""Byte-pair-encoding subword vocabulary shared by all domains.

Text is lowercased and split on whitespace. Each word becomes the boundary
marker ``▁`` followed by its characters, and merges are learned greedily by
pair frequency (ties broken lexicographically on the pair).
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
PAD = "<pad>"
UNK = "<unk>"
BOUNDARY = "▁"

_HEADER_PREFIX = "bpe v1"
_MERGES_MARKER = "#merges"


def pretokenize(text: str) -> list[str]:
    return text.lower().split()


def _word_symbols(word: str) -> list[str]:
    return [BOUNDARY, *word]


@dataclass
class SubwordVocab:
    pieces: list[str]
    merges: list[tuple[str, str]]
    target_size: int
    coverage: float
    _ids: dict[str, int] = field(init=False, repr=False)
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.pieces[:2] != [PAD, UNK]:
            raise ValueError("pieces must start with the pad and unknown pieces")
        self._ids = {p: i for i, p in enumerate(self.pieces)}
        if len(self._ids) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def id_of(self, piece: str) -> int:
        return self._ids.get(piece, UNK_ID)

    def has_piece(self, piece: str) -> bool:
        return piece in self._ids

    def segment_word(self, word: str) -> list[str]:
        """Apply learned merges to one word, lowest-rank pair first."""
        symbols = [s if s in self._ids else UNK for s in _word_symbols(word)]
        ranks = self._ranks
        while len(symbols) > 1:
            best = None
            best_rank = None
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best is None:
                break
            pair = (symbols[best], symbols[best + 1])
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(pair[0] + pair[1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return symbols

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        for word in pretokenize(text):
            out.extend(self.segment_word(word))
        return out

    def encode_ids(self, text: str) -> list[int]:
        return [self.id_of(p) for p in self.tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        parts = []
        for i in ids:
            if i == PAD_ID:
                continue
            parts.append(self.pieces[i])
        return "".join(parts).replace(BOUNDARY, " ").strip()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        lines = [f"{_HEADER_PREFIX} size={self.target_size} coverage={self.coverage!r}"]
        lines += [f"{p}\t{i}" for i, p in enumerate(self.pieces)]
        lines.append(_MERGES_MARKER)
        lines += [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "SubwordVocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith(_HEADER_PREFIX + " "):
            raise DataError("not a bpe v1 vocabulary file")
        try:
            fields = dict(kv.split("=", 1) for kv in lines[0][len(_HEADER_PREFIX) + 1:].split())
            target_size = int(fields["size"])
            coverage = float(fields["coverage"])
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed vocabulary header: {lines[0]!r}") from exc
        pieces: list[str] = []
        merges: list[tuple[str, str]] = []
        in_merges = False
        for lineno, line in enumerate(lines[1:], start=2):
            if not in_merges and line == _MERGES_MARKER:
                in_merges = True
                continue
            if in_merges:
                parts = line.split(" ")
                if len(parts) != 2:
                    raise DataError(f"vocabulary line {lineno}: malformed merge {line!r}")
                merges.append((parts[0], parts[1]))
            else:
                piece, sep, idx = line.rpartition("\t")
                if not sep or int(idx) != len(pieces):
                    raise DataError(f"vocabulary line {lineno}: malformed piece {line!r}")
                pieces.append(piece)
        return cls(pieces, merges, target_size, coverage)

    @classmethod
    def load(cls, path) -> "SubwordVocab":
        p = Path(path)
        if not p.exists():
            raise DataError(f"vocabulary file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"))


def _retained_chars(char_counts: Counter, coverage: float) -> list[str]:
    ordered = sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(char_counts.values())
    kept = []
    running = 0
    for ch, n in ordered:
        if kept and running / total >= coverage:
            break
        kept.append(ch)
        running += n
    return kept


def bpe_train(corpus: Sequence[str], target_size: int, coverage: float = 1.0) -> SubwordVocab:
    """Learn a BPE vocabulary of at most ``target_size`` pieces.

    Characters are ranked by frequency and the most frequent ones covering a
    ``coverage`` fraction of all character occurrences are kept; the rest map
    to the unknown piece. Merging stops when the vocabulary is full or no pair
    occurs at least twice.
    """
    if not corpus:
        raise ValueError("cannot train a vocabulary on an empty corpus")
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must be in (0, 1], got {coverage}")

    word_counts: Counter = Counter()
    for sentence in corpus:
        word_counts.update(pretokenize(sentence))
    if not word_counts:
        raise ValueError("corpus contains no words")

    char_counts: Counter = Counter()
    for word, n in word_counts.items():
        for ch in _word_symbols(word):
            char_counts[ch] += n
    base = _retained_chars(char_counts, coverage)
    if target_size < 2 + len(base):
        raise ValueError(
            f"target_size {target_size} smaller than base piece count {2 + len(base)} "
            f"(pad, unk and {len(base)} characters)")

    pieces = [PAD, UNK, *base]
    known = set(pieces)
    retained = set(base)

    words = []
    freqs = []
    for word, n in sorted(word_counts.items()):
        words.append([s if s in retained else UNK for s in _word_symbols(word)])
        freqs.append(n)

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)

    def add_pairs(wi: int, sign: int, touched: set) -> None:
        syms = words[wi]
        n = freqs[wi] * sign
        for a, b in zip(syms, syms[1:]):
            if a == UNK or b == UNK:
                continue
            pair_counts[(a, b)] += n
            touched.add((a, b))
            if sign > 0:
                where[(a, b)].add(wi)

    touched: set = set()
    for wi in range(len(words)):
        add_pairs(wi, +1, touched)
    # lazy max-heap keyed by (-count, pair): stale entries are skipped on pop
    heap = [(-n, pair) for pair, n in pair_counts.items() if n >= 2]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(pieces) < target_size:
        best = None
        while heap:
            neg_n, pair = heapq.heappop(heap)
            if pair_counts.get(pair, 0) == -neg_n:
                best = pair
                break
        if best is None:
            break
        merges.append(best)
        new_piece = best[0] + best[1]
        if new_piece not in known:
            pieces.append(new_piece)
            known.add(new_piece)
        touched = set()
        for wi in sorted(where.pop(best, ())):
            syms = words[wi]
            if len(syms) < 2:
                continue
            add_pairs(wi, -1, touched)
            merged = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == best[0] and syms[i + 1] == best[1]:
                    merged.append(new_piece)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi] = merged
            add_pairs(wi, +1, touched)
        for pair in touched:
            n = pair_counts.get(pair, 0)
            if n <= 0:
                pair_counts.pop(pair, None)
            elif n >= 2:
                heapq.heappush(heap, (-n, pair))

    return SubwordVocab(pieces, merges, target_size, coverage)


@dataclass(frozen=True)
class SeqEncoding:
    ids: np.ndarray
    length: int


def encode(v: SubwordVocab, text: str, n_max: int) -> SeqEncoding:
    """Segment, truncate to ``n_max`` and right-pad with the pad id."""
    ids = v.encode_ids(text)
    out = np.zeros(n_max, dtype=np.int64)
    keep = ids[:n_max]
    out[:len(keep)] = keep
    return SeqEncoding(out, len(ids))


def encode_batch(v: SubwordVocab, texts: Sequence[str], n_max: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(texts), n_max), dtype=np.int64)
    lengths = np.zeros(len(texts), dtype=np.int64)
    for i, text in enumerate(texts):
        enc = encode(v, text, n_max)
        ids[i] = enc.ids
        lengths[i] = enc.length
    return ids, lengths


def char_coverage(v: SubwordVocab, corpus: Sequence[str]) -> float:
    """Fraction of character occurrences (boundary markers included) not mapped to unknown."""
    if not corpus:
        raise ValueError("empty corpus")
    total = 0
    covered = 0
    for sentence in corpus:
        for word in pretokenize(sentence):
            for ch in _word_symbols(word):
                total += 1
                covered += v.has_piece(ch)
    if total == 0:
        raise ValueError("corpus contains no characters")
    return covered / total
