"""Exception types shared across the package.

I/O failures are reported through the builtin ``OSError`` family; everything
else derives from :class:`ColvirtError` so callers can catch the package's
errors with one clause.
"""

from __future__ import annotations


class ColvirtError(Exception):
    """Base class for all colvirt-specific errors."""


class FormatError(ColvirtError, ValueError):
    """Malformed CSV input: missing header, ragged row, reserved column name."""


class InvalidArgument(ColvirtError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInput(ColvirtError, ValueError):
    """A fit was requested on fewer than one row."""


class NoUsableRows(ColvirtError, RuntimeError):
    """Every sample row was excluded (null target or null reference)."""


class MissingReference(ColvirtError, KeyError):
    """A regressor's support column was not supplied to the evaluator."""


class CorruptAux(ColvirtError, RuntimeError):
    """Auxiliary columns violate a reconstruction invariant."""


class PlanMismatch(ColvirtError, ValueError):
    """A function plan references columns absent from the table being written."""


class MetadataError(ColvirtError, ValueError):
    """Footer metadata is malformed or violates a schema invariant."""


class UnknownColumn(ColvirtError, KeyError):
    """A scan or read referenced a column that does not exist."""
