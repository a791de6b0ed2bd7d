"""Exception types shared across the toolkit.

Every error carries an ``exit_code`` so the command-line front end can map
failures to distinct process statuses without a lookup table.
"""


class TrlError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


# --- input / data errors (exit code 3) -------------------------------------


class InputError(TrlError):
    exit_code = 3


class MissingFile(InputError):
    pass


class SchemaError(InputError):
    """A column is absent, untypeable, or a row violates a field invariant."""

    def __init__(self, message, *, file=None, row=None, column=None):
        self.file = file
        self.row = row
        self.column = column
        where = []
        if file is not None:
            where.append(str(file))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where) + ": " if where else ""
        super().__init__(prefix + message)


class DuplicateKey(InputError):
    def __init__(self, message, rows=()):
        self.rows = tuple(rows)
        super().__init__(message)


class ReferentialError(InputError):
    pass


class EmptyHorizon(InputError):
    pass


class UnknownRegion(InputError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown region"


class IncompleteSeries(InputError):
    pass


class MissingCounty(InputError):
    pass


class WindowOutOfRange(InputError):
    pass


# --- numeric guards (exit code 4) -------------------------------------------


class NumericError(TrlError, ValueError):
    exit_code = 4


class ZeroBaseline(NumericError):
    pass


class InvalidCoordinate(NumericError):
    pass


class EmptyPath(NumericError):
    pass


class EmptySeries(NumericError):
    pass


class ConstantColumn(NumericError):
    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class RankDeficient(NumericError):
    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class RankDeficientDesign(RankDeficient):
    pass


class NonPositiveResponse(NumericError):
    pass


class ZeroTotalVariance(NumericError):
    pass


class BadParams(NumericError):
    pass


# --- model fitting (exit codes 5, 6) -----------------------------------------


class SingleGroup(TrlError):
    exit_code = 5


class NoConvergence(TrlError, RuntimeError):
    exit_code = 6


# --- warnings ----------------------------------------------------------------


class BoundaryKeyMismatch(UserWarning):
    """A region has no matching feature in the boundary file."""
