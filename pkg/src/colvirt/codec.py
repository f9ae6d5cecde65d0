"""Materialize and invert virtualized columns, and aggregate over them.

The prediction contract is the backbone of losslessness: both the writer and
the reader compute, in IEEE-754 double precision,

    acc = sum over weights in metadata key order of w_c * (ref_c / 10**p_c)
    acc += intercept
    prediction = round_half_away_from_zero(acc * 10**p_target)

with the accumulation strictly left-to-right, so the two sides always agree
bit for bit.  Offsets are stored as scaled int64; two's-complement wraparound
in ``y - prediction`` is tolerated because the reconstruction ``prediction +
offset`` wraps back identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Protocol

import numpy as np

from .discovery import KRegressionCandidate, RegressorModel
from .errors import CorruptAux, MissingReference, UnknownColumn
from .numeric import pow10, round_half_away_to_int64
from .tables import ColumnMeta, Kind, ScaledColumn, Table


@dataclass
class VirtualizedColumn:
    """Auxiliary columns replacing one target column.

    ``switch`` is None when the candidate has a single regressor.
    ``outlier_values[i]`` holds the original scaled value only where
    ``outlier_mask[i]`` is True (some reference was null at row i).
    """

    target: str
    precision: int
    offset: np.ndarray
    switch: np.ndarray | None
    outlier_values: np.ndarray
    outlier_mask: np.ndarray
    is_nan: np.ndarray

    def __len__(self) -> int:
        return len(self.offset)


def evaluate_prediction(
    model: RegressorModel,
    refs: Mapping[str, int],
    precisions: Mapping[str, int],
    target_precision: int,
) -> int:
    """Scaled-integer prediction for a single row.

    This is the scalar form of the normative contract above; the vectorized
    paths used by the writer and reader perform the identical operation
    sequence per row.
    """
    acc = np.float64(0.0)
    for name, w in model.weights.items():
        if name not in refs:
            raise MissingReference(name)
        acc = acc + np.float64(w) * (np.float64(refs[name]) / np.float64(pow10(precisions[name])))
    acc = acc + np.float64(model.intercept)
    return int(round_half_away_to_int64(acc * np.float64(pow10(target_precision))))


def predict_scaled(
    models: Iterable[RegressorModel],
    ref_arrays: Mapping[str, np.ndarray],
    precisions: Mapping[str, int],
    target_precision: int,
    n_rows: int,
) -> np.ndarray:
    """(K, n) int64 predictions, one row-slice per model."""
    models = list(models)
    out = np.empty((len(models), n_rows), dtype=np.int64)
    scale = np.float64(pow10(target_precision))
    for i, model in enumerate(models):
        acc = np.zeros(n_rows, dtype=np.float64)
        for name, w in model.weights.items():
            if name not in ref_arrays:
                raise MissingReference(name)
            acc = acc + np.float64(w) * (ref_arrays[name] / np.float64(pow10(precisions[name])))
        acc = acc + np.float64(model.intercept)
        out[i] = round_half_away_to_int64(acc * scale)
    return out


def _reference_data(
    candidate: KRegressionCandidate,
    ref_columns: Mapping[str, ScaledColumn],
) -> tuple[dict[str, np.ndarray], dict[str, int], np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    precisions: dict[str, int] = {}
    any_null: np.ndarray | None = None
    for name in candidate.references:
        if name not in ref_columns:
            raise MissingReference(name)
        col = ref_columns[name]
        pair = col.scaled_pair()
        if pair is None:
            raise MissingReference(f"{name} has no exact scaled representation")
        arrays[name], precisions[name] = pair
        any_null = col.null_bitmap.copy() if any_null is None else any_null | col.null_bitmap
    if any_null is None:
        any_null = np.zeros(0, dtype=bool)
    return arrays, precisions, any_null


def virtualize_column(table: Table, candidate: KRegressionCandidate) -> VirtualizedColumn:
    """Encode a target column as offset/switch/outlier/is_nan.

    Per row: a null target sets is_nan; a null in any reference stores the
    original scaled value in the outlier column; otherwise the row records
    the closest regressor (lowest index on ties) and the scaled offset to it.
    """
    tgt = table.column(candidate.target)
    pair = tgt.scaled_pair()
    if pair is None:
        raise MissingReference(f"target {candidate.target!r} is not numeric")
    y, precision = pair
    n = len(tgt)

    ref_cols = {name: table.column(name) for name in candidate.references}
    arrays, precisions, any_ref_null = _reference_data(candidate, ref_cols)
    if len(candidate.references) == 0:
        any_ref_null = np.zeros(n, dtype=bool)

    is_nan = tgt.null_bitmap.copy()
    outlier_mask = ~is_nan & any_ref_null
    normal = ~is_nan & ~outlier_mask

    preds = predict_scaled(candidate.models, arrays, precisions, precision, n)
    with np.errstate(over="ignore"):
        diffs = np.abs(y[None, :] - preds)
    k_star = np.argmin(diffs, axis=0)

    offset = np.zeros(n, dtype=np.int64)
    with np.errstate(over="ignore"):
        offset[normal] = y[normal] - preds[k_star[normal], np.nonzero(normal)[0]]

    switch = None
    if candidate.k > 1:
        switch = np.zeros(n, dtype=np.int8)
        switch[normal] = k_star[normal].astype(np.int8)

    outlier_values = np.zeros(n, dtype=np.int64)
    outlier_values[outlier_mask] = y[outlier_mask]

    return VirtualizedColumn(
        target=candidate.target,
        precision=precision,
        offset=offset,
        switch=switch,
        outlier_values=outlier_values,
        outlier_mask=outlier_mask,
        is_nan=is_nan,
    )


def reconstruct_column(
    virt: VirtualizedColumn,
    candidate: KRegressionCandidate,
    ref_columns: Mapping[str, ScaledColumn] | Table,
) -> ScaledColumn:
    """Exact inverse of :func:`virtualize_column`.

    ``ref_columns`` may be the original table or a mapping of already
    materialized (possibly themselves reconstructed) reference columns.
    """
    if isinstance(ref_columns, Table):
        ref_columns = {name: ref_columns.column(name) for name in candidate.references}
    _validate_aux(virt, candidate)

    n = len(virt)
    arrays, precisions, _ = _reference_data(candidate, ref_columns)
    preds = predict_scaled(candidate.models, arrays, precisions, virt.precision, n)

    if virt.switch is None:
        chosen = preds[0]
    else:
        chosen = preds[virt.switch.astype(np.int64), np.arange(n)]
    with np.errstate(over="ignore"):
        values = chosen + virt.offset
    values[virt.outlier_mask] = virt.outlier_values[virt.outlier_mask]
    values[virt.is_nan] = 0

    nullable = bool(virt.is_nan.any())
    kind = Kind.DECIMAL if virt.precision > 0 else Kind.INTEGER
    meta = ColumnMeta(virt.target, kind, virt.precision, nullable)
    return ScaledColumn(meta, values, virt.is_nan.copy())


def _validate_aux(virt: VirtualizedColumn, candidate: KRegressionCandidate) -> None:
    n = len(virt.offset)
    lengths = [len(virt.is_nan), len(virt.outlier_values), len(virt.outlier_mask)]
    if virt.switch is not None:
        lengths.append(len(virt.switch))
    if any(length != n for length in lengths):
        raise CorruptAux(f"{virt.target}: auxiliary column lengths differ")
    if virt.switch is not None:
        if virt.switch.min(initial=0) < 0 or virt.switch.max(initial=0) >= candidate.k:
            raise CorruptAux(f"{virt.target}: switch value out of range [0, {candidate.k})")
    if np.any(virt.offset[virt.is_nan] != 0):
        raise CorruptAux(f"{virt.target}: non-zero offset at is_nan rows")
    if np.any(virt.outlier_mask & virt.is_nan):
        raise CorruptAux(f"{virt.target}: outlier value present at is_nan rows")
    if np.any(virt.offset[virt.outlier_mask] != 0):
        raise CorruptAux(f"{virt.target}: non-zero offset at outlier rows")
    if virt.switch is not None and np.any(virt.switch[virt.outlier_mask] != 0):
        raise CorruptAux(f"{virt.target}: non-zero switch at outlier rows")


class ColumnStream(Protocol):
    """What the codec needs from a file reader to aggregate a column."""

    def stream_column(
        self, name: str, batch_size: int = 65536
    ) -> Iterator[tuple[np.ndarray, np.ndarray, ColumnMeta]]:
        """Yield (values, null_bitmap, meta) batches for a logical column."""
        ...

    def logical_column_names(self) -> list[str]: ...


@dataclass(frozen=True)
class ScanResult:
    """Aggregate over one column; ``value`` is exact for scaled columns."""

    column: str
    agg: str
    value: Fraction | int | float | None
    null_count: int
    row_count: int


def scan_aggregate(reader: ColumnStream, column: str, agg: str) -> ScanResult:
    """Streaming sum/avg/count over a (possibly virtual) column.

    Virtual columns are reconstructed batch by batch from their reference and
    auxiliary columns only.  Nulls are excluded from sum/avg and reported in
    ``null_count``; count returns the number of non-null cells.  Scaled
    columns aggregate exactly (the sum is kept in unbounded integers).
    """
    if agg not in ("sum", "avg", "count"):
        raise ValueError(f"unsupported aggregate {agg!r}")
    if column not in reader.logical_column_names():
        raise UnknownColumn(column)

    total_scaled = 0
    total_float = 0.0
    is_float = False
    precision = 0
    non_null = 0
    nulls = 0
    rows = 0

    for values, null_bitmap, meta in reader.stream_column(column):
        rows += len(values)
        nulls += int(null_bitmap.sum())
        keep = ~null_bitmap
        non_null += int(keep.sum())
        if agg == "count":
            continue
        if meta.kind is Kind.FLOAT:
            is_float = True
            total_float += float(np.sum(values[keep], dtype=np.float64))
        elif meta.kind in (Kind.INTEGER, Kind.DECIMAL):
            precision = meta.precision
            total_scaled += _exact_sum(values[keep])
        else:
            raise UnknownColumn(f"{column} is not an aggregatable column")

    if agg == "count":
        return ScanResult(column, agg, non_null, nulls, rows)

    if is_float:
        value: Fraction | float | None
        if agg == "sum":
            value = total_float
        else:
            value = total_float / non_null if non_null else None
    else:
        if agg == "sum":
            value = Fraction(total_scaled, 10**precision)
        elif non_null:
            value = Fraction(total_scaled, 10**precision * non_null)
        else:
            value = None
    return ScanResult(column, agg, value, nulls, rows)


def _exact_sum(values: np.ndarray) -> int:
    if len(values) == 0:
        return 0
    # int64 partial sums are safe unless magnitudes approach the type limit.
    if int(np.abs(values).max()) < 2**46:
        return int(np.sum(values, dtype=np.int64))
    return int(sum(int(v) for v in values))
