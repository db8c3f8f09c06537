"""Sliding-window attention with dilation and global tokens.

Row ``i`` may attend to column ``j`` when ``j - i = k * dilation`` for some
``|k| <= window // 2``, when either position is global, or when ``i == j``.

:func:`sparse_attention` never materialises the ``L x L`` score matrix for
non-global rows: keys are gathered into ``window + 1`` banded slots plus one
slot per global column. :func:`dense_reference_attention` is the quadratic
masked oracle it is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .exceptions import InvalidInputError

DEFAULT_WINDOW = 64


@dataclass(frozen=True)
class AttentionPattern:
    seq_len: int
    window: int = DEFAULT_WINDOW
    dilation: int = 1
    global_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.window < 2 or self.window % 2:
            raise InvalidInputError("window must be an even integer >= 2")
        if self.dilation < 1:
            raise InvalidInputError("dilation must be >= 1")
        object.__setattr__(self, "global_indices", frozenset(self.global_indices))
        if any(not 0 <= g < self.seq_len for g in self.global_indices):
            raise InvalidInputError("global index outside the sequence")

    @classmethod
    def full(cls, seq_len: int) -> "AttentionPattern":
        """Dense self-attention expressed as a pattern (every token global)."""
        window = max(2, 2 * max(seq_len - 1, 1))
        return cls(seq_len, window + window % 2, 1, frozenset(range(seq_len)))


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray  # (L, L) bool


def build_mask(pattern: AttentionPattern) -> AttentionMask:
    n = pattern.seq_len
    diff = np.arange(n)[None, :] - np.arange(n)[:, None]
    reach = pattern.dilation * (pattern.window // 2)
    allowed = (diff % pattern.dilation == 0) & (np.abs(diff) <= reach)
    if pattern.global_indices:
        g = np.fromiter(sorted(pattern.global_indices), dtype=np.int64)
        allowed[g, :] = True
        allowed[:, g] = True
    return AttentionMask(allowed)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.from_numpy(np.asarray(x)), True


def _check_qkv(q, k, v):
    if q.dim() != 2 or q.shape != k.shape or k.shape != v.shape:
        raise InvalidInputError(
            f"Q, K, V must share shape (L, d); got {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}"
        )


def dense_reference_attention(Q, K, V, mask: AttentionMask, scale: float):
    q, was_np = _as_tensor(Q)
    k, _ = _as_tensor(K)
    v, _ = _as_tensor(V)
    _check_qkv(q, k, v)
    allowed = torch.from_numpy(np.asarray(mask.allowed, dtype=bool))
    if allowed.shape != (q.shape[0], q.shape[0]):
        raise InvalidInputError("mask shape does not match sequence length")
    scores = (q @ k.T) * scale
    scores = scores.masked_fill(~allowed, float("-inf"))
    out = torch.softmax(scores, dim=-1) @ v
    return out.numpy() if was_np else out


def sparse_attention(Q, K, V, pattern: AttentionPattern, scale: float):
    """Single-head windowed attention on ``(L, d)`` inputs."""
    q, was_np = _as_tensor(Q)
    k, _ = _as_tensor(K)
    v, _ = _as_tensor(V)
    _check_qkv(q, k, v)
    n = q.shape[0]
    if n != pattern.seq_len:
        raise InvalidInputError("pattern length does not match Q")
    is_global = torch.zeros(1, n, dtype=torch.bool)
    if pattern.global_indices:
        is_global[0, sorted(pattern.global_indices)] = True
    out, _ = windowed_attention(
        q[None, None], k[None, None], v[None, None], pattern.window, pattern.dilation, is_global, scale
    )
    out = out[0, 0]
    return out.numpy() if was_np else out


@dataclass
class AttentionWeights:
    """Weights of one forward pass in banded form.

    ``band`` is ``(B, H, L, S)`` over the key positions ``index`` (``(B, L, S)``,
    ``-1`` marks unused slots); ``dense`` holds ``(B, H, G, L)`` full rows for the
    global query positions ``global_rows`` (``(B, G)``, ``-1`` padded).
    """

    band: torch.Tensor
    index: torch.Tensor
    dense: torch.Tensor
    global_rows: torch.Tensor

    def triples(self, batch: int = 0, head: int = 0) -> list[tuple[int, int, float]]:
        """Non-zero ``(i, j, weight)`` entries for one sample and head."""
        out: dict[tuple[int, int], float] = {}
        band = self.band[batch, head].detach().double().cpu().numpy()
        index = self.index[batch].cpu().numpy()
        for i in range(index.shape[0]):
            for s in range(index.shape[1]):
                j = int(index[i, s])
                if j >= 0 and band[i, s] > 0:
                    out[(i, j)] = float(band[i, s])
        rows = self.global_rows[batch].cpu().numpy()
        dense = self.dense[batch, head].detach().double().cpu().numpy()
        for g, i in enumerate(rows):
            if i < 0:
                continue
            for key in [key for key in out if key[0] == i]:
                del out[key]
            for j in np.nonzero(dense[g] > 0)[0]:
                out[(int(i), int(j))] = float(dense[g, j])
        return sorted((i, j, w) for (i, j), w in out.items())


def windowed_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    window: int,
    dilation: int,
    is_global: torch.Tensor,
    scale: float,
    key_valid: torch.Tensor | None = None,
    need_weights: bool = False,
):
    """Batched multi-head windowed attention.

    ``q``, ``k``, ``v``: ``(B, H, L, dh)``; ``is_global`` and ``key_valid``:
    ``(B, L)`` bool. Invalid (padding) keys get zero weight except on the
    diagonal, which keeps every row's softmax well defined.
    """
    bsz, heads, n, dh = q.shape
    device = q.device
    if key_valid is None:
        key_valid = torch.ones(bsz, n, dtype=torch.bool, device=device)
    half = window // 2
    offsets = dilation * torch.arange(-half, half + 1, device=device)
    rows = torch.arange(n, device=device)
    band_cols = rows[:, None] + offsets[None, :]  # (L, W)
    band_ok = (band_cols >= 0) & (band_cols < n)
    band_cols = band_cols.clamp(0, n - 1).expand(bsz, n, -1)
    band_ok = band_ok.expand(bsz, n, -1)
    diag = (offsets == 0).expand(bsz, n, -1)
    band_ok = band_ok & (key_valid.gather(1, band_cols.reshape(bsz, -1)).view(bsz, n, -1) | diag)

    # global columns, padded to the largest count in the batch
    n_glob = int(is_global.sum(1).max()) if n else 0
    glob_cols = torch.full((bsz, n_glob), -1, dtype=torch.long, device=device)
    for b in range(bsz):
        cols = torch.nonzero(is_global[b] & key_valid[b]).flatten()
        glob_cols[b, : len(cols)] = cols
    g_cols = glob_cols[:, None, :].expand(bsz, n, n_glob)
    rel = g_cols - rows[None, :, None]
    in_band = (rel % dilation == 0) & (rel.abs() <= dilation * half)
    g_ok = (g_cols >= 0) & ~in_band

    index = torch.cat([band_cols, g_cols.clamp(min=0)], dim=2)  # (B, L, S)
    valid = torch.cat([band_ok, g_ok], dim=2)

    batch_idx = torch.arange(bsz, device=device)[:, None, None]
    kk = k.permute(0, 2, 1, 3)[batch_idx, index]  # (B, L, S, H, dh)
    vv = v.permute(0, 2, 1, 3)[batch_idx, index]
    scores = torch.einsum("bhld,blshd->bhls", q, kk) * scale
    scores = scores.masked_fill(~valid[:, None], float("-inf"))
    band_w = torch.softmax(scores, dim=-1)
    out = torch.einsum("bhls,blshd->bhld", band_w, vv)

    # global query rows attend to every valid key
    glob_rows = torch.full((bsz, n_glob), -1, dtype=torch.long, device=device)
    for b in range(bsz):
        r = torch.nonzero(is_global[b]).flatten()
        glob_rows[b, : len(r)] = r
    dense_w = q.new_zeros(bsz, heads, n_glob, n)
    if n_glob:
        rows_c = glob_rows.clamp(min=0)
        qg = q[batch_idx[:, :, 0], :, rows_c]  # (B, G, H, dh)
        qg = qg.permute(0, 2, 1, 3)
        g_scores = (qg @ k.transpose(-1, -2)) * scale  # (B, H, G, L)
        key_ok = key_valid[:, None, :].expand(bsz, n_glob, n).clone()
        key_ok[torch.arange(bsz)[:, None], torch.arange(n_glob)[None, :], rows_c] = True
        g_scores = g_scores.masked_fill(~key_ok[:, None], float("-inf"))
        dense_w = torch.softmax(g_scores, dim=-1)
        g_out = dense_w @ v  # (B, H, G, dh)
        row_used = glob_rows >= 0
        sel = torch.zeros(bsz, n_glob, n, dtype=q.dtype, device=device)
        sel[torch.arange(bsz)[:, None], torch.arange(n_glob)[None, :], rows_c] = row_used.to(q.dtype)
        replaced = sel.sum(1) > 0  # (B, L)
        out = torch.where(replaced[:, None, :, None], torch.einsum("bgl,bhgd->bhld", sel, g_out), out)

    weights = None
    if need_weights:
        index = torch.where(valid, index, torch.full_like(index, -1))
        weights = AttentionWeights(band_w, index, dense_w, glob_rows)
    return out, weights


def default_global_policy(tokens, paths: Sequence, tree=None, max_depth: int = 2) -> set[int]:
    """Sequence-start token plus the first token of every node at depth <= ``max_depth``.

    ``tokens`` is a :class:`~astvuln.tokenizer.TokenSequence` whose first
    entry is the sequence-start token. Without a tree only that token is
    global.
    """
    result = {0} if len(tokens.ids) else set()
    if tree is None:
        return result
    level = [tree.root]
    starts = []
    for _ in range(max_depth):
        starts += [tree.nodes[i].start for i in level if tree.nodes[i].end > tree.nodes[i].start]
        level = [c for i in level for c in tree.nodes[i].children]
    starts.sort()
    spans = tokens.spans
    j = 0
    for s in starts:
        while j < len(spans) and (spans[j][1] <= spans[j][0] or spans[j][1] <= s):
            j += 1
        if j < len(spans) and paths[j] is not None:
            result.add(j)
    return result
