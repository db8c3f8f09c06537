"""AST-aware vulnerability detection for function-level source code."""

from .estimators import VulnerabilityClassifier
from .exceptions import (
    DumpParseError,
    IncompatibleArtifactError,
    InvalidDatasetError,
    InvalidInputError,
    InvalidSplitError,
    OutOfRangeError,
    UnreconstructableError,
    UnsupportedLanguageError,
)
from .tokenizer import BPETokenizer, Vocabulary, decode, encode, train_bpe

__version__ = "0.1.0"

__all__ = [
    "BPETokenizer",
    "DumpParseError",
    "IncompatibleArtifactError",
    "InvalidDatasetError",
    "InvalidInputError",
    "InvalidSplitError",
    "OutOfRangeError",
    "UnreconstructableError",
    "UnsupportedLanguageError",
    "Vocabulary",
    "VulnerabilityClassifier",
    "decode",
    "encode",
    "train_bpe",
]
