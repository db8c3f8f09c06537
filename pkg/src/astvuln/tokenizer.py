"""Byte-level BPE tokenizer.

Input bytes are first cut into pre-tokens at transitions between three
byte classes (ASCII alphanumeric, whitespace, everything else); merges never
cross a pre-token boundary. Training greedily merges the most frequent
adjacent pair, breaking ties by the smallest ``(left, right)`` byte strings.

Ids ``0..255`` are the raw bytes, ``256..259`` the special tokens and merge
units follow from ``260`` on, so special ids do not depend on the merge count.
"""

from __future__ import annotations

import hashlib
import heapq
import re
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidInputError

BASE_SIZE = 256
SPECIAL_TOKENS = ("bos", "eos", "pad", "unk_node")
DEFAULT_VOCAB_SIZE = 8192

_PRETOKEN_RE = re.compile(rb"[A-Za-z0-9]+|[ \t\n\r\x0b\x0c]+|[^A-Za-z0-9 \t\n\r\x0b\x0c]+")
_HEADER = "#bpe-vocab v1"


def pretokenize(source: bytes) -> list[tuple[int, int]]:
    """Half-open byte spans of the pre-tokens of ``source``."""
    return [m.span() for m in _PRETOKEN_RE.finditer(source)]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...] = ()
    spans: tuple[tuple[int, int], ...] = ()

    def __len__(self):
        return len(self.ids)

    def with_specials(self, vocab: "Vocabulary") -> "TokenSequence":
        """Wrap in sequence-start / sequence-end tokens (empty spans)."""
        return TokenSequence(
            (vocab.bos_id, *self.ids, vocab.eos_id),
            ((0, 0), *self.spans, (0, 0)),
        )


@dataclass
class Vocabulary:
    """Ordered merge table plus the unit -> id mapping derived from it."""

    merges: list[tuple[bytes, bytes]] = field(default_factory=list)
    base_size: int = BASE_SIZE

    def __post_init__(self):
        self.special_ids = {name: self.base_size + i for i, name in enumerate(SPECIAL_TOKENS)}
        units = [bytes([b]) for b in range(self.base_size)]
        units += [b""] * len(SPECIAL_TOKENS)
        table = {u: i for i, u in enumerate(units[: self.base_size])}
        self.ranks = {}
        for rank, (left, right) in enumerate(self.merges):
            if left not in table or right not in table:
                raise InvalidInputError(f"merge {rank} references an unknown unit")
            self.ranks.setdefault((left, right), rank)
            merged = left + right
            if merged not in table:
                table[merged] = len(units)
                units.append(merged)
        self.token_table = table
        self.units = units
        self._cache: dict[bytes, tuple[int, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.units)

    @property
    def bos_id(self) -> int:
        return self.special_ids["bos"]

    @property
    def eos_id(self) -> int:
        return self.special_ids["eos"]

    @property
    def pad_id(self) -> int:
        return self.special_ids["pad"]

    @property
    def unk_node_id(self) -> int:
        return self.special_ids["unk_node"]

    def is_special(self, token_id: int) -> bool:
        return self.base_size <= token_id < self.base_size + len(SPECIAL_TOKENS)

    def token_bytes(self, token_id: int) -> bytes:
        if not 0 <= token_id < len(self.units):
            raise InvalidInputError(f"unknown token id {token_id}")
        return self.units[token_id]

    def token_str(self, token_id: int) -> str:
        if self.is_special(token_id):
            return f"<{SPECIAL_TOKENS[token_id - self.base_size]}>"
        return self.units[token_id].decode("utf-8", errors="backslashreplace")

    # -- serialization -----------------------------------------------------

    def dumps(self) -> str:
        specials = " ".join(f"{k}={v}" for k, v in self.special_ids.items())
        lines = [f"{_HEADER} base_size={self.base_size} {specials}"]
        lines += [f"{_escape(a)} {_escape(b)}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        header = lines[0].split()
        if " ".join(header[:2]) != _HEADER:
            raise InvalidInputError("not a vocabulary file")
        fields = dict(item.split("=", 1) for item in header[2:])
        vocab_merges = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise InvalidInputError(f"line {lineno}: expected two units")
            vocab_merges.append((_unescape(parts[0]), _unescape(parts[1])))
        vocab = cls(vocab_merges, base_size=int(fields["base_size"]))
        for name, value in vocab.special_ids.items():
            if name in fields and int(fields[name]) != value:
                raise InvalidInputError(f"special id mismatch for {name}")
        return vocab

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="ascii", newline="\n") as fh:
            return cls.loads(fh.read())

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("ascii")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and (self.merges, self.base_size) == (
            other.merges,
            other.base_size,
        )


def _escape(unit: bytes) -> str:
    return "".join(
        chr(b) if 0x21 <= b <= 0x7E and b != 0x5C else f"\\x{b:02x}" for b in unit
    )


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if text[i + 1] != "x":
                raise InvalidInputError(f"bad escape in {text!r}")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


# -- training ----------------------------------------------------------------


def _count_pretokens(corpus: Sequence[bytes]) -> Counter:
    counts: Counter = Counter()
    for doc in corpus:
        counts.update(m.group() for m in _PRETOKEN_RE.finditer(doc))
    return counts


def count_pretokens(corpus: Sequence[bytes], n_jobs: int = 1) -> Counter:
    """Pre-token frequencies, optionally sharded across processes.

    Shard results are summed, so the count equals the single-process count.
    """
    if n_jobs <= 1 or len(corpus) < 2 * n_jobs:
        return _count_pretokens(corpus)
    shards = [corpus[i::n_jobs] for i in range(n_jobs)]
    total: Counter = Counter()
    with ProcessPoolExecutor(n_jobs) as pool:
        for part in pool.map(_count_pretokens, shards):
            total.update(part)
    return total


def train_bpe(corpus: Sequence[bytes], num_merges: int, n_jobs: int = 1) -> Vocabulary:
    """Learn up to ``num_merges`` merges from ``corpus``.

    Stops early once no adjacent pair remains inside any pre-token.
    """
    if not corpus:
        raise InvalidInputError("corpus is empty")
    if num_merges < 0:
        raise InvalidInputError("num_merges must be >= 0")
    corpus = [bytes(doc) for doc in corpus]
    word_counts = count_pretokens(corpus, n_jobs=n_jobs)

    words = [[bytes([b]) for b in w] for w in word_counts]
    freqs = list(word_counts.values())
    pair_counts: defaultdict = defaultdict(int)
    pair_words: defaultdict = defaultdict(set)
    for wi, units in enumerate(words):
        for pair in zip(units, units[1:]):
            pair_counts[pair] += freqs[wi]
            pair_words[pair].add(wi)

    heap = [(-c, a, b) for (a, b), c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[bytes, bytes]] = []

    while len(merges) < num_merges and heap:
        neg, a, b = heapq.heappop(heap)
        if pair_counts.get((a, b), 0) != -neg or neg == 0:
            continue
        merges.append((a, b))
        merged = a + b
        touched = set()
        for wi in sorted(pair_words.pop((a, b), ())):
            units = words[wi]
            freq = freqs[wi]
            for pair in zip(units, units[1:]):
                pair_counts[pair] -= freq
                touched.add(pair)
            new_units = _merge_pair(units, a, b, merged)
            words[wi] = new_units
            for pair in zip(new_units, new_units[1:]):
                pair_counts[pair] += freq
                pair_words[pair].add(wi)
                touched.add(pair)
        for pair in touched:
            count = pair_counts[pair]
            if count > 0:
                heapq.heappush(heap, (-count, pair[0], pair[1]))
            else:
                pair_counts.pop(pair, None)
                pair_words.pop(pair, None)
        pair_counts.pop((a, b), None)
    return Vocabulary(merges)


def _merge_pair(units, a, b, merged):
    out = []
    i = 0
    n = len(units)
    while i < n:
        if i + 1 < n and units[i] == a and units[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(units[i])
            i += 1
    return out


# -- encode / decode -----------------------------------------------------------


def _encode_pretoken(vocab: Vocabulary, piece: bytes) -> tuple[int, ...]:
    cached = vocab._cache.get(piece)
    if cached is not None:
        return cached
    units = [piece[i : i + 1] for i in range(len(piece))]
    ranks = vocab.ranks
    while len(units) > 1:
        best = None
        best_rank = None
        for pair in zip(units, units[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        units = _merge_pair(units, best[0], best[1], best[0] + best[1])
    table = vocab.token_table
    ids = tuple(table[u] for u in units)
    if len(vocab._cache) < 200_000:
        vocab._cache[piece] = ids
    return ids


def encode(vocab: Vocabulary, source: bytes) -> TokenSequence:
    """Tokenize ``source``; spans tile the input exactly."""
    source = bytes(source)
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for m in _PRETOKEN_RE.finditer(source):
        start, end = m.span()
        if end - start == 1:
            ids.append(source[start])
            spans.append((start, end))
            continue
        pos = start
        for tid in _encode_pretoken(vocab, m.group()):
            width = len(vocab.units[tid])
            ids.append(tid)
            spans.append((pos, pos + width))
            pos += width
    return TokenSequence(tuple(ids), tuple(spans))


def decode(vocab: Vocabulary, tokens: TokenSequence | Iterable[int]) -> bytes:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return b"".join(vocab.token_bytes(i) for i in ids)


class BPETokenizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns merges, ``transform`` encodes.

    ``vocab_size`` counts the 256 byte units and the special tokens, so
    ``vocab_size=260`` yields a tokenizer without merges.
    """

    def __init__(self, vocab_size=DEFAULT_VOCAB_SIZE, n_jobs=1):
        self.vocab_size = vocab_size
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        corpus = [_as_bytes(x) for x in X]
        num_merges = self.vocab_size - BASE_SIZE - len(SPECIAL_TOKENS)
        if num_merges < 0:
            raise InvalidInputError(
                f"vocab_size must be >= {BASE_SIZE + len(SPECIAL_TOKENS)}"
            )
        self.vocabulary_ = train_bpe(corpus, num_merges, n_jobs=self.n_jobs)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return [encode(self.vocabulary_, _as_bytes(x)) for x in X]

    def inverse_transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return [decode(self.vocabulary_, seq) for seq in X]


def _as_bytes(x) -> bytes:
    if isinstance(x, str):
        return x.encode("utf-8")
    if isinstance(x, (bytes, bytearray, memoryview)):
        return bytes(x)
    raise InvalidInputError(f"expected bytes or str, got {type(x).__name__}")
