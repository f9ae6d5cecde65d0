"""Typed columnar tables with exact decimal semantics.

CSV columns are ingested into scaled 64-bit integers (``value * 10**p`` for a
column-wide fractional precision ``p``) so that every numeric cell can be
re-rendered exactly.  Binary floats are kept only for columns that cannot be
represented that way (scientific notation, too many significant digits, or
int64 overflow); such columns are stored as doubles and never virtualized.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InvalidArgument
from .numeric import INT64_MAX, pow10, round_half_away_from_zero

DEFAULT_NULL_TOKENS: tuple[str, ...] = ("", "NaN", "nan", "NA")

# Suffixes reserved for auxiliary columns in virtual files; source columns
# carrying them would collide with the writer's naming scheme.
RESERVED_SUFFIXES: tuple[str, ...] = ("__offset", "__switch", "__outlier", "__isnan")

# Fixed-point tokens with more significant digits than this are treated as
# binary floats: they exceed what a double can carry exactly anyway.
MAX_DECIMAL_DIGITS = 15

_FIXED_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)\Z")
_SCI_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)[eE][+-]?\d+\Z")


class Kind(str, Enum):
    INTEGER = "integer"
    DECIMAL = "decimal"
    FLOAT = "float"
    STRING = "string"
    BOOLEAN = "boolean"
    OTHER = "other"


@dataclass(frozen=True)
class ColumnMeta:
    """Name, kind, fractional decimal precision and nullability of a column."""

    name: str
    kind: Kind
    precision: int = 0
    nullable: bool = False

    def __post_init__(self) -> None:
        if self.precision < 0:
            raise InvalidArgument("precision must be non-negative")
        if self.kind is Kind.INTEGER and self.precision != 0:
            raise InvalidArgument("integer columns have precision 0")


class ScaledColumn:
    """One column of a :class:`Table`.

    ``values`` holds int64 scaled integers for integer/decimal columns,
    float64 for float columns and Python strings (object dtype) for string
    columns.  ``null_bitmap[i]`` is True where the cell is null; ``values[i]``
    is meaningful only where it is False (null slots are zero-filled).

    Float columns that are exactly representable as scaled decimals keep an
    ``exact_scaled`` int64 view (with its own ``exact_precision``) so they can
    still serve as regression references.
    """

    __slots__ = ("meta", "values", "null_bitmap", "exact_scaled", "exact_precision")

    def __init__(
        self,
        meta: ColumnMeta,
        values: np.ndarray,
        null_bitmap: np.ndarray,
        exact_scaled: np.ndarray | None = None,
        exact_precision: int | None = None,
    ) -> None:
        if len(values) != len(null_bitmap):
            raise InvalidArgument("values and null_bitmap lengths differ")
        self.meta = meta
        self.values = values
        self.null_bitmap = np.asarray(null_bitmap, dtype=bool)
        self.exact_scaled = exact_scaled
        self.exact_precision = exact_precision

    def __len__(self) -> int:
        return len(self.values)

    @property
    def name(self) -> str:
        return self.meta.name

    def is_target_eligible(self) -> bool:
        """Integer/decimal columns can be virtualized."""
        return self.meta.kind in (Kind.INTEGER, Kind.DECIMAL)

    def scaled_pair(self) -> tuple[np.ndarray, int] | None:
        """(int64 scaled values, precision) when usable in exact arithmetic."""
        if self.meta.kind in (Kind.INTEGER, Kind.DECIMAL):
            return self.values, self.meta.precision
        if self.meta.kind is Kind.FLOAT and self.exact_scaled is not None:
            return self.exact_scaled, int(self.exact_precision or 0)
        return None

    def render_token(self, i: int) -> str | None:
        """Cell rendered back to CSV text; None where the cell is null."""
        if self.null_bitmap[i]:
            return None
        kind = self.meta.kind
        if kind is Kind.INTEGER:
            return str(int(self.values[i]))
        if kind is Kind.DECIMAL:
            return render_scaled(int(self.values[i]), self.meta.precision)
        if kind is Kind.FLOAT:
            return repr(float(self.values[i]))
        return str(self.values[i])


def render_scaled(v: int, p: int) -> str:
    """Render a scaled integer at precision p ("-250", 2 -> "-2.50")."""
    if p == 0:
        return str(v)
    sign = "-" if v < 0 else ""
    a = abs(v)
    scale = 10**p
    return f"{sign}{a // scale}.{a % scale:0{p}d}"


@dataclass
class Table:
    """An ordered collection of equally long columns with unique names."""

    columns: list[ScaledColumn]
    row_count: int

    _by_name: dict[str, ScaledColumn] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_name = {}
        for col in self.columns:
            if len(col) != self.row_count:
                raise InvalidArgument(
                    f"column {col.name!r} has {len(col)} rows, expected {self.row_count}"
                )
            if col.name in self._by_name:
                raise FormatError(f"duplicate column name {col.name!r}")
            self._by_name[col.name] = col

    @classmethod
    def from_columns(cls, columns: Sequence[ScaledColumn]) -> "Table":
        rows = len(columns[0]) if columns else 0
        return cls(list(columns), rows)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> ScaledColumn:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


@dataclass(frozen=True)
class Sample:
    """Distinct row indices drawn without replacement from a parent table."""

    row_indices: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.row_indices)


def infer_column_meta(
    tokens: Sequence[str],
    name: str,
    null_tokens: Iterable[str] = DEFAULT_NULL_TOKENS,
) -> ColumnMeta:
    """Classify a column of CSV tokens.

    integer: every non-null token is optional-sign digits and fits int64.
    decimal: every non-null token is fixed-point with at most
    MAX_DECIMAL_DIGITS significant digits and the scaled values fit int64.
    float: otherwise-numeric columns (scientific notation, digit budget or
    int64 overflow).  Everything else is a string column.
    """
    col = build_column(name, tokens, null_tokens)
    return col.meta


def build_column(
    name: str,
    tokens: Sequence[str],
    null_tokens: Iterable[str] = DEFAULT_NULL_TOKENS,
) -> ScaledColumn:
    """Infer the column meta and materialize the value arrays in one pass."""
    null_set = frozenset(null_tokens)
    n = len(tokens)
    null_bitmap = np.fromiter((t in null_set for t in tokens), dtype=bool, count=n)
    non_null = [t for t in tokens if t not in null_set]
    nullable = bool(null_bitmap.any())

    if _all_integer(non_null):
        ints = [int(t) for t in non_null]
        if all(-INT64_MAX <= v <= INT64_MAX for v in ints):
            meta = ColumnMeta(name, Kind.INTEGER, 0, nullable)
            return ScaledColumn(meta, _fill(ints, null_bitmap, np.int64), null_bitmap)
        return _float_column(name, tokens, non_null, null_bitmap, nullable)

    if _all_fixed_within_budget(non_null):
        precision = max((_frac_digits(t) for t in non_null), default=0)
        scaled = [_scale_fixed(t, precision) for t in non_null]
        if all(-INT64_MAX <= v <= INT64_MAX for v in scaled):
            meta = ColumnMeta(name, Kind.DECIMAL, precision, nullable)
            return ScaledColumn(meta, _fill(scaled, null_bitmap, np.int64), null_bitmap)
        return _float_column(name, tokens, non_null, null_bitmap, nullable)

    if non_null and all(_FIXED_RE.match(t) or _SCI_RE.match(t) for t in non_null):
        return _float_column(name, tokens, non_null, null_bitmap, nullable)

    meta = ColumnMeta(name, Kind.STRING, 0, nullable)
    values = np.array([("" if t in null_set else t) for t in tokens], dtype=object)
    return ScaledColumn(meta, values, null_bitmap)


def _all_integer(tokens: list[str]) -> bool:
    for t in tokens:
        s = t[1:] if t[:1] in "+-" else t
        if not (s and s.isascii() and s.isdigit()):
            return False
    return True


def _all_fixed_within_budget(tokens: list[str]) -> bool:
    for t in tokens:
        if not _FIXED_RE.match(t):
            return False
        if _significant_digits(t) > MAX_DECIMAL_DIGITS:
            return False
    return True


def _significant_digits(token: str) -> int:
    s = token.lstrip("+-").replace(".", "").lstrip("0")
    return len(s)


def _frac_digits(token: str) -> int:
    dot = token.find(".")
    return 0 if dot < 0 else len(token) - dot - 1


def _scale_fixed(token: str, precision: int) -> int:
    sign = -1 if token.startswith("-") else 1
    s = token.lstrip("+-")
    dot = s.find(".")
    if dot < 0:
        ipart, fpart = s, ""
    else:
        ipart, fpart = s[:dot], s[dot + 1 :]
    digits = (ipart or "0") + fpart + "0" * (precision - len(fpart))
    return sign * int(digits)


def _fill(values: list, null_bitmap: np.ndarray, dtype) -> np.ndarray:
    out = np.zeros(len(null_bitmap), dtype=dtype)
    if values:
        out[~null_bitmap] = np.asarray(values, dtype=dtype)
    return out


def _float_column(
    name: str,
    tokens: Sequence[str],
    non_null: list[str],
    null_bitmap: np.ndarray,
    nullable: bool,
) -> ScaledColumn:
    meta = ColumnMeta(name, Kind.FLOAT, 0, nullable)
    floats = [float(t) for t in non_null]
    values = _fill(floats, null_bitmap, np.float64)
    exact_scaled, exact_p = _try_exact_scaled(non_null, floats)
    if exact_scaled is not None:
        col_scaled = _fill(exact_scaled, null_bitmap, np.int64)
        return ScaledColumn(meta, values, null_bitmap, col_scaled, exact_p)
    return ScaledColumn(meta, values, null_bitmap)


def _try_exact_scaled(
    tokens: list[str], floats: list[float]
) -> tuple[list[int] | None, int]:
    """Exact scaled-integer view of a float column, when one exists.

    Requires every token to be an exact decimal that fits int64 at the
    column-wide precision, and the stored double to round back to the same
    scaled integer (so writer and reader derive identical values from the
    doubles that actually live in the file).
    """
    if not tokens:
        return None, 0
    try:
        decimals = [Decimal(t) for t in tokens]
    except InvalidOperation:
        return None, 0
    precision = max(max(0, -d.as_tuple().exponent) for d in decimals)
    if precision > 18:
        return None, 0
    scaled: list[int] = []
    for d, f in zip(decimals, floats):
        v = int(d.scaleb(precision))
        if not -INT64_MAX <= v <= INT64_MAX:
            return None, 0
        if int(round_half_away_from_zero(f * pow10(precision))) != v:
            return None, 0
        scaled.append(v)
    return scaled, precision


def ingest_csv(
    path: str | Path,
    row_limit: int = 1_000_000,
    *,
    delimiter: str = ",",
    null_tokens: Iterable[str] = DEFAULT_NULL_TOKENS,
) -> Table:
    """Read a headered CSV file into a typed Table.

    At most ``row_limit`` data rows are read; rows beyond the limit are not
    inspected.  Raises FormatError on a missing header, a ragged row, a
    duplicate column name, or a column name ending in a reserved suffix.
    """
    if row_limit <= 0:
        raise InvalidArgument("row_limit must be positive")
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: no header row") from None
        _check_header(header, path)
        width = len(header)
        rows: list[list[str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(
                    f"{path}:{lineno}: expected {width} fields, found {len(row)}"
                )
            rows.append(row)
            if len(rows) >= row_limit:
                break

    if rows:
        col_tokens = list(zip(*rows))
    else:
        col_tokens = [() for _ in header]
    columns = [
        build_column(name, tokens, null_tokens)
        for name, tokens in zip(header, col_tokens)
    ]
    return Table(columns, len(rows))


def _check_header(header: list[str], path: Path) -> None:
    seen: set[str] = set()
    for name in header:
        if name in seen:
            raise FormatError(f"{path}: duplicate column name {name!r}")
        seen.add(name)
        for suffix in RESERVED_SUFFIXES:
            if name.endswith(suffix):
                raise FormatError(
                    f"{path}: column name {name!r} uses reserved suffix {suffix!r}"
                )


def write_csv(
    table: Table,
    path: str | Path,
    *,
    delimiter: str = ",",
    null_token: str = "",
) -> None:
    """Render a Table back to CSV (inverse of ingest up to token formatting)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(table.column_names)
        cols = table.columns
        for i in range(table.row_count):
            row = [c.render_token(i) for c in cols]
            writer.writerow([null_token if t is None else t for t in row])


def sample_rows(table: Table, n: int, seed: int) -> Sample:
    """Uniform sample of min(n, row_count) distinct row indices.

    Deterministic in (table size, n, seed); indices are returned sorted.
    """
    if n <= 0:
        raise InvalidArgument("sample size must be positive")
    k = min(n, table.row_count)
    if k == 0:
        return Sample(np.empty(0, dtype=np.int64), seed)
    rng = np.random.default_rng(seed)
    idx = rng.choice(table.row_count, size=k, replace=False)
    return Sample(np.sort(idx).astype(np.int64), seed)


def column_from_scaled(
    name: str,
    scaled: np.ndarray | Sequence[int],
    precision: int = 0,
    null_bitmap: np.ndarray | None = None,
) -> ScaledColumn:
    """Build an integer/decimal column directly from scaled values."""
    values = np.asarray(scaled, dtype=np.int64).copy()
    if null_bitmap is None:
        null_bitmap = np.zeros(len(values), dtype=bool)
    null_bitmap = np.asarray(null_bitmap, dtype=bool)
    values[null_bitmap] = 0
    kind = Kind.DECIMAL if precision > 0 else Kind.INTEGER
    meta = ColumnMeta(name, kind, precision, bool(null_bitmap.any()))
    return ScaledColumn(meta, values, null_bitmap)


def column_from_floats(
    name: str,
    values: np.ndarray | Sequence[float],
    null_bitmap: np.ndarray | None = None,
) -> ScaledColumn:
    """Build a float column (stored as doubles, excluded from virtualization)."""
    vals = np.asarray(values, dtype=np.float64).copy()
    if null_bitmap is None:
        null_bitmap = np.zeros(len(vals), dtype=bool)
    null_bitmap = np.asarray(null_bitmap, dtype=bool)
    vals[null_bitmap] = 0.0
    meta = ColumnMeta(name, Kind.FLOAT, 0, bool(null_bitmap.any()))
    return ScaledColumn(meta, vals, null_bitmap)


def column_from_strings(
    name: str,
    values: Sequence[str],
    null_bitmap: np.ndarray | None = None,
) -> ScaledColumn:
    vals = np.array(list(values), dtype=object)
    if null_bitmap is None:
        null_bitmap = np.zeros(len(vals), dtype=bool)
    meta = ColumnMeta(name, Kind.STRING, 0, bool(np.asarray(null_bitmap).any()))
    return ScaledColumn(meta, vals, np.asarray(null_bitmap, dtype=bool))
