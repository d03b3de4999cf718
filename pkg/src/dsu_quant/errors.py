"""Exception hierarchy shared across the toolkit."""


class DsuQuantError(Exception):
    """Base class for all toolkit errors."""


class FileFormatError(DsuQuantError):
    """A binary container (DSUF/DSUC/DSUN) is structurally invalid."""


class BadMagicError(FileFormatError):
    """Wrong magic bytes or unsupported format version."""


class TruncatedFileError(FileFormatError):
    """The payload is shorter (or longer) than the header declares."""


class InvalidDataError(DsuQuantError):
    """A value violates a domain-type invariant."""


class NonFiniteDataError(InvalidDataError):
    """NaN or Inf encountered where only finite values are allowed."""


class AlignmentError(DsuQuantError):
    """An alignment TSV is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ManifestError(DsuQuantError):
    """A corpus manifest is malformed or references missing files."""


class UnknownSplitError(DsuQuantError):
    """A split label outside {train, validation, test} was requested."""


class InsufficientDataError(DsuQuantError):
    """Fewer data points than the operation requires (e.g. N < K)."""


class DimensionMismatchError(DsuQuantError):
    """Input dimensionality does not match the fitted model."""


class DegenerateSegmentError(DsuQuantError):
    """A zero-length segment reached an operation that needs frames."""


class DivergenceError(DsuQuantError):
    """Training produced a non-finite loss; aborted with diagnostics."""


class InvalidConfigError(DsuQuantError):
    """A configuration object violates its invariants."""


class RepresentationError(DsuQuantError):
    """A fit/probe failure, annotated with the representation name."""

    def __init__(self, representation: str, message: str):
        super().__init__(f"representation '{representation}': {message}")
        self.representation = representation
