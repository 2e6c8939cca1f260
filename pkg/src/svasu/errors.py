"""Exception hierarchy shared by every stage of the pipeline."""


class SvasuError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"


class PreconditionError(SvasuError, ValueError):
    """An argument violates a documented precondition."""

    kind = "precondition"


class DimensionMismatchError(SvasuError, ValueError):
    """Two matrices that must be conformable are not."""

    kind = "dimension_mismatch"


class FileFormatError(SvasuError):
    """A file on disk is missing or does not follow the documented format.

    Attributes
    ----------
    field : str
        Name of the offending header field, file or CSV location.
    """

    kind = "file_format"

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingFileError(FileFormatError):
    kind = "missing_file"


class HeaderError(FileFormatError):
    kind = "bad_header"


class SizeMismatchError(FileFormatError):
    kind = "size_mismatch"


class NonFiniteError(FileFormatError):
    kind = "non_finite"


class CsvFormatError(FileFormatError):
    kind = "bad_csv"


class NoPureNeighborhoodError(SvasuError):
    kind = "no_pure_neighborhoods"


class SolverError(SvasuError, ArithmeticError):
    """The solver produced a non-finite intermediate value."""

    kind = "solver"

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration
