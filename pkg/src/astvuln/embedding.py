"""Token feature matrices: word + position + token-type + AST-path embedding.

The AST-path term of a token sums one learned vector per node *kind* along
the root-to-leaf path of the leaf holding the token's first byte. Two
summation modes exist:

``literal``
    Sum both endpoints of every edge on the path. Interior nodes are counted
    twice, the root and the leaf once, and a single-node path has no edges
    (zero vector).
``dedup``
    Sum every node on the path once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .syntax import AstPath, SyntaxTree, path_for_offset
from .tokenizer import TokenSequence

logger = logging.getLogger(__name__)

UNKNOWN_KIND = "<unk>"
AST_MODES = ("literal", "dedup")


def build_kind_vocab(kinds: Iterable[str]) -> dict[str, int]:
    """Index 0 is reserved for unknown kinds; the rest are sorted."""
    vocab = {UNKNOWN_KIND: 0}
    for k in sorted(set(kinds) - {UNKNOWN_KIND}):
        vocab[k] = len(vocab)
    return vocab


def kinds_of_trees(trees: Iterable[SyntaxTree]) -> set[str]:
    return {node.kind for tree in trees for node in tree.nodes}


@dataclass
class EmbeddingConfig:
    model_dim: int = 256
    max_positions: int = 1024
    num_token_types: int = 1
    node_kind_vocab: dict[str, int] = field(default_factory=lambda: {UNKNOWN_KIND: 0})
    ast_mode: str = "literal"
    use_ast: bool = True

    def __post_init__(self):
        if self.model_dim <= 0:
            raise ValueError("model_dim must be positive")
        if self.node_kind_vocab.get(UNKNOWN_KIND) is None:
            raise ValueError(f"node_kind_vocab needs an {UNKNOWN_KIND!r} entry")
        if self.ast_mode not in AST_MODES:
            raise ValueError(f"ast_mode must be one of {AST_MODES}")


@dataclass
class EmbeddingTables:
    word: np.ndarray
    position: np.ndarray
    token_type: np.ndarray
    node_kind: np.ndarray

    def __post_init__(self):
        dims = {m.shape[1] for m in (self.word, self.position, self.token_type, self.node_kind)}
        if len(dims) != 1:
            raise ValueError("all embedding tables must share the model dimension")

    @classmethod
    def random(cls, vocab_size: int, config: EmbeddingConfig, seed: int = 0, scale: float = 0.02):
        rng = np.random.default_rng(seed)
        d = config.model_dim
        return cls(
            rng.normal(0, scale, (vocab_size, d)),
            rng.normal(0, scale, (config.max_positions, d)),
            rng.normal(0, scale, (config.num_token_types, d)),
            rng.normal(0, scale, (len(config.node_kind_vocab), d)),
        )


@dataclass
class FeatureMatrix:
    values: np.ndarray
    truncated: int = 0


def _kind_row(kind: str, kind_vocab: dict[str, int]) -> int:
    return kind_vocab.get(kind, kind_vocab[UNKNOWN_KIND])


def ast_path_embedding(
    path: AstPath,
    tables: EmbeddingTables,
    mode: str = "literal",
    kind_vocab: dict[str, int] | None = None,
) -> np.ndarray:
    if not path.kinds:
        raise ValueError("path must be non-empty")
    if kind_vocab is None:
        kind_vocab = {UNKNOWN_KIND: 0}
    vec = tables.node_kind
    out = np.zeros(vec.shape[1], dtype=vec.dtype)
    rows = [_kind_row(k, kind_vocab) for k in path.kinds]
    if mode == "literal":
        for parent, child in zip(rows, rows[1:]):
            out += vec[parent]
            out += vec[child]
    elif mode == "dedup":
        for r in rows:
            out += vec[r]
    else:
        raise ValueError(f"unknown ast mode {mode!r}")
    return out


def path_kind_counts(path: AstPath, mode: str, kind_vocab: dict[str, int]) -> dict[int, int]:
    """Multiplicity of each node-kind row in the path's embedding sum."""
    rows = [_kind_row(k, kind_vocab) for k in path.kinds]
    counts: dict[int, int] = {}
    if mode == "literal":
        if len(rows) < 2:
            return counts
        for pos, r in enumerate(rows):
            weight = 1 if pos in (0, len(rows) - 1) else 2
            counts[r] = counts.get(r, 0) + weight
    else:
        for r in rows:
            counts[r] = counts.get(r, 0) + 1
    return counts


def align_tokens_to_paths(tokens: TokenSequence, tree: SyntaxTree) -> list[AstPath | None]:
    """Path of the leaf holding each token's first byte; ``None`` for specials."""
    root = tree.nodes[tree.root]
    paths: list[AstPath | None] = []
    cache: dict[int, AstPath] = {}
    for start, end in tokens.spans:
        if end <= start or not root.start <= start < root.end:
            paths.append(None)
            continue
        p = cache.get(start)
        if p is None:
            p = cache[start] = path_for_offset(tree, start)
        paths.append(p)
    return paths


def embed_sequence(
    tokens: TokenSequence,
    paths: Sequence[AstPath | None],
    tables: EmbeddingTables,
    config: EmbeddingConfig,
    token_types: Sequence[int] | None = None,
) -> FeatureMatrix:
    n = len(tokens.ids)
    truncated = max(0, n - config.max_positions)
    if truncated:
        logger.warning("truncating sequence of %d tokens to %d", n, config.max_positions)
    n -= truncated
    ids = np.asarray(tokens.ids[:n], dtype=np.int64)
    types = np.zeros(n, dtype=np.int64) if token_types is None else np.asarray(token_types[:n])
    values = tables.word[ids] + tables.position[:n] + tables.token_type[types]
    if config.use_ast:
        for i in range(n):
            if paths[i] is not None:
                values[i] += ast_path_embedding(
                    paths[i], tables, config.ast_mode, config.node_kind_vocab
                )
    return FeatureMatrix(values, truncated)


class EmbeddingLayer(nn.Module):
    """Batched torch counterpart of :func:`embed_sequence`.

    The AST term arrives as a ``(batch, length, n_kinds)`` multiplicity
    tensor (see :func:`path_kind_counts`) and is multiplied into the
    node-kind table. With ``use_ast=False`` the node-kind table is absent.
    """

    def __init__(self, vocab_size: int, config: EmbeddingConfig):
        super().__init__()
        d = config.model_dim
        self.use_ast = config.use_ast
        self.word = nn.Embedding(vocab_size, d)
        self.position = nn.Embedding(config.max_positions, d)
        self.token_type = nn.Embedding(config.num_token_types, d)
        if config.use_ast:
            self.node_kind = nn.Parameter(torch.zeros(len(config.node_kind_vocab), d))
        else:
            self.register_parameter("node_kind", None)

    def forward(self, ids, kind_counts=None, token_types=None):
        length = ids.shape[1]
        positions = torch.arange(length, device=ids.device)
        if token_types is None:
            token_types = torch.zeros_like(ids)
        out = self.word(ids) + self.position(positions)[None] + self.token_type(token_types)
        if self.use_ast and kind_counts is not None:
            out = out + kind_counts.to(out.dtype) @ self.node_kind
        return out
