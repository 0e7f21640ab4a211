"""Exception types raised across the package.

Everything derives from :class:`CountyIRError` so callers (and the CLI) can
separate input problems from genuine runtime failures.
"""


class CountyIRError(Exception):
    """Base class for all package errors."""


class InputError(CountyIRError, ValueError):
    """Bad input data or configuration. The CLI maps these to exit code 2."""


class SchemaError(InputError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class ParseError(InputError):
    def __init__(self, message, row=None, column=None, path=None):
        self.row = row
        self.column = column
        self.path = path
        loc = []
        if path:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        prefix = ", ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class DuplicateKeyError(InputError):
    def __init__(self, key, path=None):
        self.key = key
        where = f" in {path}" if path else ""
        super().__init__(f"duplicate key {key!r}{where}")


class TaxonomyError(InputError):
    pass


class AlignmentError(InputError):
    pass


class DomainError(InputError):
    pass


class ShapeError(InputError):
    pass


class ParameterError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class UnknownIdError(InputError):
    """An adjacency edge or join key references an id that is not loaded."""


class FormatError(InputError):
    pass


class DegenerateGeometryError(InputError):
    pass


class ColumnTypeError(InputError, TypeError):
    """A non-numeric column was given where numeric class breaks are needed."""


class SingularityError(CountyIRError):
    pass


class DegenerateError(CountyIRError):
    """A statistic is undefined for the given input (e.g. constant field)."""


class RenderError(CountyIRError):
    pass


class ConvergenceError(CountyIRError):
    """Coordinate descent ran out of sweeps.

    The last iterate and the number of sweeps performed are kept on the
    exception so callers can inspect or resume.
    """

    def __init__(self, beta, sweeps, max_change):
        self.beta = beta
        self.sweeps = sweeps
        self.max_change = max_change
        super().__init__(
            f"no convergence after {sweeps} sweeps (last max change {max_change:.3g})"
        )


class StageError(CountyIRError):
    """Wraps a failure with the pipeline stage or fold it happened in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
