"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class UnsupportedLanguageError(KeyError):
    """No parser provider is registered for the requested language tag."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unsupported language"


class OutOfRangeError(IndexError):
    pass


class UnreconstructableError(ValueError):
    """A diff does not apply cleanly to the supplied pre-image."""


class InvalidDatasetError(ValueError):
    pass


class InvalidSplitError(ValueError):
    pass


class IncompatibleArtifactError(ValueError):
    """A checkpoint was produced with a different vocabulary or format."""


class DumpParseError(ValueError):
    """Malformed advisory dump; ``index`` is the zero-based record index."""

    def __init__(self, message, index):
        super().__init__(f"record {index}: {message}")
        self.index = index
