"""Ranking metrics, metric reports and attention heatmap export."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidInputError

DEFAULT_KS = (50, 100, 200, 500)
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class RankedPredictions:
    """``(sample_id, probability, label)`` entries by descending probability."""

    entries: tuple[tuple[str, float, int], ...]

    @classmethod
    def from_scores(cls, ids: Sequence[str], probs: Sequence[float], labels: Sequence[int]):
        if not len(ids) == len(probs) == len(labels):
            raise InvalidInputError("ids, probabilities and labels differ in length")
        if len(set(ids)) != len(ids):
            raise InvalidInputError("sample ids must be unique")
        rows = sorted(zip(ids, map(float, probs), map(int, labels)), key=lambda r: (-r[1], r[0]))
        return cls(tuple(rows))

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=int)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=float)


@dataclass
class MetricsReport:
    hits: dict[int, int]
    recall: float
    precision: float
    f1: float
    positives: int
    negatives: int
    threshold: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = asdict(self)
        data["hits"] = {str(k): v for k, v in self.hits.items()}
        return json.dumps(data, sort_keys=True)

    def table(self, name: str = "model") -> str:
        headers = ["Model"] + [f"hits@{k}" for k in self.hits] + ["recall", "f1"]
        row = [name] + [str(v) for v in self.hits.values()] + [f"{self.recall:.4f}", f"{self.f1:.4f}"]
        widths = [max(len(h), len(c)) for h, c in zip(headers, row)]
        line = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        body = "  ".join(c.rjust(w) for c, w in zip(row, widths))
        foot = f"threshold={self.threshold}  positives={self.positives}  negatives={self.negatives}"
        return "\n".join([line, "-" * len(line), body, foot]) + "\n"


def hits_at_k(ranked: RankedPredictions, k: int) -> int:
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    return int(ranked.labels[:k].sum())


def recall_f1(ranked: RankedPredictions, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float, float]:
    """``(recall, precision, f1)`` with ``prediction = probability >= threshold``."""
    if not 0 <= threshold <= 1:
        raise InvalidInputError("threshold must lie in [0, 1]")
    labels = ranked.labels.astype(bool)
    pred = ranked.probabilities >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return recall, precision, f1


def report(
    ranked: RankedPredictions,
    ks: Iterable[int] = DEFAULT_KS,
    threshold: float = DEFAULT_THRESHOLD,
) -> MetricsReport:
    if not len(ranked):
        raise InvalidInputError("no predictions to report on")
    recall, precision, f1 = recall_f1(ranked, threshold)
    positives = int(ranked.labels.sum())
    return MetricsReport(
        {k: hits_at_k(ranked, k) for k in ks},
        recall,
        precision,
        f1,
        positives,
        len(ranked) - positives,
        threshold,
    )


def heatmap_weights(triples: Iterable[tuple[int, int, float]], n_tokens: int) -> np.ndarray:
    """Attention received per token (column sums), scaled so the maximum is 1."""
    col = np.zeros(n_tokens)
    for _, j, w in triples:
        col[j] += w
    top = col.max() if n_tokens else 0.0
    return col / top if top > 0 else col


def export_heatmap(triples: Iterable[tuple[int, int, float]], tokens: Sequence[str], path=None) -> str:
    """Tab-separated ``index, token, weight`` rows; written to ``path`` if given."""
    weights = heatmap_weights(triples, len(tokens))
    lines = ["index\ttoken\tweight"]
    for i, (tok, w) in enumerate(zip(tokens, weights)):
        lines.append(f"{i}\t{json.dumps(tok)}\t{w:.6f}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
