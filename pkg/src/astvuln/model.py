"""Transformer classifier over BPE tokens with AST-path embeddings.

Pipeline per sample: parse -> tokenize (with sequence-start/-end tokens) ->
align tokens to AST paths -> embedding layer -> encoder layers with windowed
attention -> linear head on the sequence-start state -> sigmoid.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .attention import DEFAULT_WINDOW, AttentionWeights, default_global_policy, windowed_attention
from .embedding import (
    EmbeddingConfig,
    EmbeddingLayer,
    align_tokens_to_paths,
    build_kind_vocab,
    path_kind_counts,
)
from .exceptions import IncompatibleArtifactError, InvalidDatasetError, InvalidInputError
from .objective import FocalConfig, cross_entropy_with_logits, focal_loss_with_logits
from .syntax import parse
from .tokenizer import Vocabulary, encode

logger = logging.getLogger(__name__)

LOSSES = ("focal", "cross_entropy")
CHECKPOINT_MAGIC = b"ASTVCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    window: int = DEFAULT_WINDOW
    # one value for every layer, or one per layer
    dilation: int | list[int] = 1
    max_positions: int = 1024
    dropout: float = 0.1
    use_ast: bool = True
    long_attention: bool = True
    loss: str = "focal"
    alpha: float = 0.25
    gamma: float = 2.0
    ast_mode: str = "literal"
    lr: float = 1e-4
    warmup: float = 0.1
    epochs: int = 10
    batch_size: int = 8
    max_steps: int | None = None
    threshold: float = 0.5
    language: str = "c"
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise InvalidInputError("model_dim must be divisible by heads")
        if self.window < 2 or self.window % 2:
            raise InvalidInputError("window must be an even integer >= 2")
        if self.loss not in LOSSES:
            raise InvalidInputError(f"loss must be one of {LOSSES}")
        if isinstance(self.dilation, (list, tuple)):
            if len(self.dilation) != self.layers:
                raise InvalidInputError("dilation schedule needs one entry per layer")
            self.dilation = [int(d) for d in self.dilation]

    def layer_dilation(self, layer: int) -> int:
        if isinstance(self.dilation, list):
            return self.dilation[layer]
        return int(self.dilation)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# -- features -------------------------------------------------------------------


class Features(NamedTuple):
    ids: np.ndarray  # (L,) int64
    kinds: list[dict[int, int]]  # per-token node-kind multiplicities
    is_global: np.ndarray  # (L,) bool
    tokens: object  # TokenSequence (for explanations)


def featurize(
    source: bytes,
    vocab: Vocabulary,
    kind_vocab: dict[str, int],
    config: ModelConfig,
    language: str | None = None,
    global_policy=default_global_policy,
) -> Features:
    source = bytes(source)
    tree = parse(source, language or config.language)
    tokens = encode(vocab, source).with_specials(vocab)
    if len(tokens.ids) > config.max_positions:
        logger.debug("truncating %d tokens to %d", len(tokens.ids), config.max_positions)
        tokens = type(tokens)(tokens.ids[: config.max_positions], tokens.spans[: config.max_positions])
    paths = align_tokens_to_paths(tokens, tree)
    kinds = [
        {} if p is None else path_kind_counts(p, config.ast_mode, kind_vocab) for p in paths
    ]
    is_global = np.zeros(len(tokens.ids), dtype=bool)
    is_global[sorted(global_policy(tokens, paths, tree))] = True
    return Features(np.asarray(tokens.ids, dtype=np.int64), kinds, is_global, tokens)


class Batch(NamedTuple):
    ids: torch.Tensor
    kind_counts: torch.Tensor
    is_global: torch.Tensor
    key_valid: torch.Tensor


def collate(features: Sequence[Features], pad_id: int, n_kinds: int, dtype=torch.float32) -> Batch:
    bsz = len(features)
    length = max(len(f.ids) for f in features)
    ids = torch.full((bsz, length), pad_id, dtype=torch.long)
    counts = torch.zeros(bsz, length, n_kinds, dtype=dtype)
    is_global = torch.zeros(bsz, length, dtype=torch.bool)
    valid = torch.zeros(bsz, length, dtype=torch.bool)
    for b, f in enumerate(features):
        n = len(f.ids)
        ids[b, :n] = torch.from_numpy(f.ids)
        is_global[b, :n] = torch.from_numpy(f.is_global)
        valid[b, :n] = True
        for i, kc in enumerate(f.kinds):
            for row, c in kc.items():
                counts[b, i, row] = c
    return Batch(ids, counts, is_global, valid)


# -- network --------------------------------------------------------------------


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig, dilation: int):
        super().__init__()
        d = config.model_dim
        self.heads = config.heads
        self.window = config.window
        self.dilation = dilation
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, config.ffn_dim)
        self.ffn_out = nn.Linear(config.ffn_dim, d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x, is_global, key_valid, need_weights=False):
        bsz, n, d = x.shape
        dh = d // self.heads

        def split(t):
            return t.view(bsz, n, self.heads, dh).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        ctx, weights = windowed_attention(
            q, k, v, self.window, self.dilation, is_global, 1.0 / math.sqrt(dh), key_valid, need_weights
        )
        ctx = ctx.transpose(1, 2).reshape(bsz, n, d)
        x = self.norm1(x + self.drop(self.out(ctx)))
        h = self.ffn_out(self.drop(torch.nn.functional.gelu(self.ffn_in(x))))
        x = self.norm2(x + self.drop(h))
        return x, weights


class VulnerabilityModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int, kind_vocab: dict[str, int], pad_id: int):
        super().__init__()
        self.config = config
        self.pad_id = pad_id
        self.kind_vocab = dict(kind_vocab)
        self.embed_config = EmbeddingConfig(
            model_dim=config.model_dim,
            max_positions=config.max_positions,
            node_kind_vocab=self.kind_vocab,
            ast_mode=config.ast_mode,
            use_ast=config.use_ast,
        )
        self.embeddings = EmbeddingLayer(vocab_size, self.embed_config)
        self.embed_norm = nn.LayerNorm(config.model_dim)
        self.embed_drop = nn.Dropout(config.dropout)
        self.layers = nn.ModuleList(
            EncoderLayer(config, config.layer_dilation(i)) for i in range(config.layers)
        )
        self.head = nn.Linear(config.model_dim, 1)
        self._init_weights()

    def _init_weights(self):
        gen = torch.Generator().manual_seed(self.config.seed)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if "norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)

    def forward(self, batch: Batch, need_weights: bool = False):
        """Positive-class logits ``(B,)`` and, on request, per-layer weights."""
        x = self.embeddings(batch.ids, batch.kind_counts.to(self.head.weight.dtype))
        x = self.embed_drop(self.embed_norm(x))
        is_global = batch.is_global
        if not self.config.long_attention:
            is_global = batch.key_valid.clone()
        all_weights: list[AttentionWeights | None] = []
        for layer in self.layers:
            x, w = layer(x, is_global, batch.key_valid, need_weights)
            all_weights.append(w)
        logits = self.head(x[:, 0]).squeeze(-1)
        return (logits, all_weights) if need_weights else logits

    def loss(self, logits, labels):
        if self.config.loss == "focal":
            return focal_loss_with_logits(logits, labels, FocalConfig(self.config.alpha, self.config.gamma))
        return cross_entropy_with_logits(logits, labels)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- checkpoints ------------------------------------------------------------------


@dataclass
class Checkpoint:
    state: dict[str, torch.Tensor]
    config: ModelConfig
    vocab_hash: str
    kind_vocab: dict[str, int]
    step: int = 0
    metrics: list[dict] = field(default_factory=list)

    def build_model(self, vocab: Vocabulary) -> VulnerabilityModel:
        if vocab.content_hash() != self.vocab_hash:
            raise IncompatibleArtifactError("vocabulary does not match the checkpoint")
        model = VulnerabilityModel(self.config, vocab.vocab_size, self.kind_vocab, vocab.pad_id)
        model.load_state_dict({k: v.to(torch.float32) for k, v in self.state.items()})
        model.eval()
        return model

    def to_bytes(self) -> bytes:
        table = []
        blobs = []
        offset = 0
        for name, tensor in self.state.items():
            data = tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
            table.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
        manifest = {
            "config": self.config.to_dict(),
            "kind_vocab": self.kind_vocab,
            "step": self.step,
            "tensors": table,
            "vocab_hash": self.vocab_hash,
        }
        head = json.dumps(manifest, sort_keys=True).encode("utf-8")
        return (
            CHECKPOINT_MAGIC
            + struct.pack("<IQ", CHECKPOINT_VERSION, len(head))
            + head
            + b"".join(blobs)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(CHECKPOINT_MAGIC):
            raise IncompatibleArtifactError("not a checkpoint file (bad magic)")
        pos = len(CHECKPOINT_MAGIC)
        version, head_len = struct.unpack_from("<IQ", data, pos)
        if version != CHECKPOINT_VERSION:
            raise IncompatibleArtifactError(f"unsupported checkpoint version {version}")
        pos += struct.calcsize("<IQ")
        manifest = json.loads(data[pos : pos + head_len].decode("utf-8"))
        base = pos + head_len
        state = {}
        for entry in manifest["tensors"]:
            start = base + entry["offset"]
            arr = np.frombuffer(data[start : start + entry["nbytes"]], dtype="<f4")
            state[entry["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(entry["shape"]))
        return cls(
            state,
            ModelConfig.from_dict(manifest["config"]),
            manifest["vocab_hash"],
            manifest["kind_vocab"],
            manifest["step"],
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def make_checkpoint(model: VulnerabilityModel, vocab: Vocabulary, step: int = 0) -> Checkpoint:
    state = {k: v.detach().clone().to(torch.float32) for k, v in model.state_dict().items()}
    return Checkpoint(state, model.config, vocab.content_hash(), model.kind_vocab, step)


# -- training / inference ---------------------------------------------------------


class Example(NamedTuple):
    source: bytes
    label: int
    language: str | None = None


def _as_examples(items: Iterable) -> list[Example]:
    out = []
    for it in items:
        if isinstance(it, Example):
            out.append(it)
        elif hasattr(it, "source") and hasattr(it, "target"):
            out.append(Example(bytes(it.source), int(it.target), getattr(it, "language", None)))
        elif hasattr(it, "source") and hasattr(it, "label"):
            out.append(Example(bytes(it.source), int(it.label), getattr(it, "language", None)))
        else:
            out.append(Example(bytes(it[0]), int(it[1]), it[2] if len(it) > 2 else None))
    return out


def fit_kind_vocab(examples: Sequence[Example], config: ModelConfig) -> dict[str, int]:
    kinds = set()
    for ex in examples:
        tree = parse(ex.source, ex.language or config.language)
        kinds.update(n.kind for n in tree.nodes)
    return build_kind_vocab(kinds)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, size):
        yield order[i : i + size]


@torch.no_grad()
def predict_logits(model: VulnerabilityModel, features: Sequence[Features], batch_size: int = 16) -> np.ndarray:
    model.eval()
    dtype = model.head.weight.dtype
    out = []
    for idx in _batches(len(features), batch_size, None):
        batch = collate([features[i] for i in idx], model.pad_id, len(model.kind_vocab), dtype)
        out.append(model(batch).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def _binary_metrics(probs: np.ndarray, labels: np.ndarray, threshold: float) -> dict:
    pred = probs >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    acc = float(np.mean(pred == (labels == 1))) if len(labels) else 0.0
    return {"accuracy": acc, "precision": precision, "recall": recall, "f1": f1}


def train(
    train_set: Iterable,
    validation_set: Iterable,
    config: ModelConfig,
    vocab: Vocabulary,
    kind_vocab: dict[str, int] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train from scratch; returns the best-validation-F1 checkpoint and a log.

    ``train_set``/``validation_set`` items are ``(source, label[, language])``
    tuples or objects with ``source``/``label`` attributes. The log holds one
    dict per epoch (including the per-step losses of that epoch).
    """
    examples = _as_examples(train_set)
    val_examples = _as_examples(validation_set)
    if not examples:
        raise InvalidDatasetError("training set is empty")
    labels = np.array([e.label for e in examples])
    if len(set(labels.tolist())) < 2:
        raise InvalidDatasetError("training set must contain both classes")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if kind_vocab is None:
        kind_vocab = fit_kind_vocab(examples, config)
    model = VulnerabilityModel(config, vocab.vocab_size, kind_vocab, vocab.pad_id)
    feats = [featurize(e.source, vocab, kind_vocab, config, e.language) for e in examples]
    val_feats = [featurize(e.source, vocab, kind_vocab, config, e.language) for e in val_examples]
    val_labels = np.array([e.label for e in val_examples])

    steps_per_epoch = math.ceil(len(feats) / config.batch_size)
    total = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    warmup = max(1, int(round(config.warmup * total))) if config.warmup > 0 else 0
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    def lr_lambda(step):
        if warmup and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total - step) / max(1, total - warmup))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)

    log: list[dict] = []
    best: Checkpoint | None = None
    best_f1 = -1.0
    step = 0
    n_kinds = len(kind_vocab)
    for epoch in range(config.epochs):
        model.train()
        losses = []
        for idx in _batches(len(feats), config.batch_size, rng):
            if step >= total:
                break
            batch = collate([feats[i] for i in idx], vocab.pad_id, n_kinds)
            y = torch.as_tensor(labels[idx], dtype=torch.float32)
            loss = model.loss(model(batch), y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(loss.item())
            step += 1
        if not losses:
            break
        train_probs = _sigmoid(predict_logits(model, feats, config.batch_size))
        entry = {
            "epoch": epoch,
            "step": step,
            "loss": float(np.mean(losses)),
            "step_losses": losses,
            "train": _binary_metrics(train_probs, labels, config.threshold),
        }
        if val_feats:
            val_probs = _sigmoid(predict_logits(model, val_feats, config.batch_size))
            entry["validation"] = _binary_metrics(val_probs, val_labels, config.threshold)
            score = entry["validation"]["f1"]
        else:
            score = entry["train"]["f1"]
        log.append(entry)
        logger.info("epoch %d step %d loss %.5f f1 %.4f", epoch, step, entry["loss"], score)
        if score >= best_f1:
            best_f1 = score
            best = make_checkpoint(model, vocab, step)
    assert best is not None
    best.metrics = log
    return best, log


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def load_model(checkpoint: Checkpoint, vocab: Vocabulary) -> VulnerabilityModel:
    return checkpoint.build_model(vocab)


def predict_proba(checkpoint: Checkpoint, vocab: Vocabulary, sources: Sequence, languages=None) -> np.ndarray:
    model = load_model(checkpoint, vocab)
    feats = [
        featurize(src, vocab, checkpoint.kind_vocab, checkpoint.config, None if languages is None else languages[i])
        for i, src in enumerate(sources)
    ]
    return _sigmoid(predict_logits(model, feats, checkpoint.config.batch_size))


def predict(checkpoint: Checkpoint, vocab: Vocabulary, samples: Sequence) -> list[tuple[str, float]]:
    """Rank ``(sample_id, source[, language])`` items by vulnerability probability."""
    samples = list(samples)
    if not samples:
        return []
    ids = [s[0] for s in samples]
    langs = [s[2] if len(s) > 2 else None for s in samples]
    probs = predict_proba(checkpoint, vocab, [s[1] for s in samples], langs)
    ranked = sorted(zip(ids, probs.tolist()), key=lambda t: (-t[1], t[0]))
    return ranked
