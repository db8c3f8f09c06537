"""scikit-learn compatible wrapper around the full training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_consistent_length, check_is_fitted, column_or_1d

from . import model as _model
from .exceptions import InvalidInputError
from .tokenizer import BPETokenizer, Vocabulary, _as_bytes


def _check_sources(X) -> list[bytes]:
    if isinstance(X, (str, bytes)):
        raise InvalidInputError("X must be a sequence of source strings, not a single string")
    return [_as_bytes(x) for x in X]


class VulnerabilityClassifier(ClassifierMixin, BaseEstimator):
    """Binary vulnerable / non-vulnerable classifier for function sources.

    ``X`` is a sequence of function sources (``str`` or ``bytes``) in
    ``language``. When ``vocabulary`` is ``None`` a BPE vocabulary of
    ``vocab_size`` units is learned from the training sources first.
    The remaining parameters mirror :class:`astvuln.model.ModelConfig`.
    """

    def __init__(
        self,
        language="c",
        vocabulary=None,
        vocab_size=8192,
        layers=4,
        heads=4,
        model_dim=256,
        ffn_dim=1024,
        window=64,
        dilation=1,
        max_positions=1024,
        dropout=0.1,
        use_ast=True,
        long_attention=True,
        loss="focal",
        alpha=0.25,
        gamma=2.0,
        ast_mode="literal",
        lr=1e-4,
        warmup=0.1,
        epochs=10,
        batch_size=8,
        max_steps=None,
        threshold=0.5,
        random_state=0,
    ):
        self.language = language
        self.vocabulary = vocabulary
        self.vocab_size = vocab_size
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ffn_dim = ffn_dim
        self.window = window
        self.dilation = dilation
        self.max_positions = max_positions
        self.dropout = dropout
        self.use_ast = use_ast
        self.long_attention = long_attention
        self.loss = loss
        self.alpha = alpha
        self.gamma = gamma
        self.ast_mode = ast_mode
        self.lr = lr
        self.warmup = warmup
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.threshold = threshold
        self.random_state = random_state

    def _model_config(self) -> _model.ModelConfig:
        params = self.get_params()
        for name in ("vocabulary", "vocab_size", "random_state"):
            params.pop(name)
        return _model.ModelConfig(seed=int(self.random_state or 0), **params)

    def fit(self, X, y, X_val=None, y_val=None):
        sources = _check_sources(X)
        y = column_or_1d(y, warn=True)
        check_consistent_length(sources, y)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise InvalidInputError("exactly two classes are required")
        targets = (y == self.classes_[1]).astype(int)

        if self.vocabulary is None:
            self.vocabulary_ = BPETokenizer(self.vocab_size).fit(sources).vocabulary_
        elif isinstance(self.vocabulary, Vocabulary):
            self.vocabulary_ = self.vocabulary
        else:
            self.vocabulary_ = Vocabulary.load(self.vocabulary)

        train_set = list(zip(sources, targets))
        if X_val is None:
            val_set = []
        else:
            val_sources = _check_sources(X_val)
            y_val = column_or_1d(y_val)
            check_consistent_length(val_sources, y_val)
            val_set = list(zip(val_sources, (y_val == self.classes_[1]).astype(int)))
        self.checkpoint_, self.history_ = _model.train(
            train_set, val_set, self._model_config(), self.vocabulary_
        )
        self.model_ = _model.load_model(self.checkpoint_, self.vocabulary_)
        self.n_parameters_ = _model.count_parameters(self.model_)
        return self

    def _features(self, X):
        check_is_fitted(self, "model_")
        cfg = self.checkpoint_.config
        return [
            _model.featurize(s, self.vocabulary_, self.checkpoint_.kind_vocab, cfg)
            for s in _check_sources(X)
        ]

    def decision_function(self, X) -> np.ndarray:
        return _model.predict_logits(self.model_, self._features(X), self.batch_size)

    def predict_proba(self, X) -> np.ndarray:
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return self.classes_[(self.predict_proba(X)[:, 1] >= self.threshold).astype(int)]
