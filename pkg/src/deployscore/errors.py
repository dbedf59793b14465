"""Exception hierarchy shared by the library and the CLI.

Every error carries an ``exit_code`` so the CLI can map failure classes onto
process exit statuses without inspecting messages.
"""

from __future__ import annotations

import warnings


class DeployScoreError(Exception):
    """Base class for all library errors."""

    exit_code = 2
    kind = "error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class InvalidArgumentError(DeployScoreError, ValueError):
    kind = "invalid-argument"


class DataError(DeployScoreError, ValueError):
    """Input data violates a schema or a domain rule.

    ``row`` and ``column`` locate the offending cell when the input is tabular
    (1-based row numbers counting the header as row 1).
    """

    kind = "data"

    def __init__(self, message: str, *, row: int | None = None, column: str | int | None = None):
        self.row = row
        self.column = column
        if row is not None or column is not None:
            where = ", ".join(
                part
                for part in (
                    f"row {row}" if row is not None else "",
                    f"column {column!r}" if column is not None else "",
                )
                if part
            )
            message = f"{message} ({where})"
        super().__init__(message)

    def to_dict(self) -> dict:
        out = super().to_dict()
        if self.row is not None:
            out["row"] = self.row
        if self.column is not None:
            out["column"] = self.column
        return out


class InsufficientDataError(DataError):
    kind = "insufficient-data"


class DegenerateItemError(DataError):
    kind = "degenerate-item"

    def __init__(self, item_id: str, value: int):
        self.item_id = item_id
        self.value = value
        super().__init__(f"item {item_id!r} is constant ({value}) across all rows")


class SchemaError(DataError):
    kind = "schema"


class IncompatibleVersionError(SchemaError):
    kind = "incompatible-version"


class IncompleteMeshError(DataError):
    kind = "incomplete-mesh"

    def __init__(self, message: str, service_id: str | None = None):
        self.service_id = service_id
        super().__init__(message)


class NumericalError(DeployScoreError, ArithmeticError):
    exit_code = 3
    kind = "numerical"


class UndefinedCorrelationError(NumericalError):
    kind = "undefined-correlation"


class ConvergenceWarning(UserWarning):
    """Emitted when EM stops at ``max_iter`` without meeting the tolerance."""


def warn_not_converged(iterations: int, change: float) -> None:
    warnings.warn(
        f"EM did not converge after {iterations} iterations "
        f"(last max parameter change {change:.3g})",
        ConvergenceWarning,
        stacklevel=3,
    )
