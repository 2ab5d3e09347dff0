"""Exception hierarchy shared by every module of the package."""


class CsranError(Exception):
    """Base class for all package errors."""


class DimensionError(CsranError, ValueError):
    """Operand shapes are incompatible with an operation."""


class DegenerateSliceError(CsranError, ValueError):
    """A normalisation slice has no unmasked entry."""


class ContractError(CsranError, RuntimeError):
    """A caller violated an operation's precondition."""


class VocabularyError(CsranError, IndexError):
    """An id is outside the vocabulary range."""


class DataError(CsranError, ValueError):
    """Input data is malformed (bad masks, labels, empty files...)."""


class FormatError(DataError):
    """A file line does not follow the expected format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(CsranError, ValueError):
    """A configuration value is missing or out of range."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingError(CsranError, RuntimeError):
    """Training diverged (non-finite loss)."""
