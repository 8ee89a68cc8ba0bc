"""Exception hierarchy shared across the package."""


class RejectedInputError(ValueError):
    """Input failed validation (shape mismatch, out-of-range value, empty data)."""


class ParseError(RejectedInputError):
    """A CSV or config file could not be parsed.

    ``row`` and ``column`` locate the offending cell when known (1-based data
    row, column name).
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalFailureError(ArithmeticError):
    """A computation produced non-finite values or could not be completed."""


class SingularityError(NumericalFailureError):
    """Normal-equation matrix is singular and no regularization was given."""
