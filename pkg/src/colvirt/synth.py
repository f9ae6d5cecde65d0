"""Synthetic table generators for benchmarks, demos and tests.

All numeric columns are generated directly in scaled-integer space so planted
linear relations are exact at the declared precision.  Integer cluster
weights and scaled intercepts keep piecewise targets representable without
rounding.
"""

from __future__ import annotations

import numpy as np

from .tables import (
    ScaledColumn,
    Table,
    column_from_floats,
    column_from_scaled,
    column_from_strings,
)


def make_sum_table(
    rows: int,
    n_refs: int = 3,
    *,
    seed: int = 0,
    precision: int = 2,
    span: int = 1 << 16,
    residual_max: int = 0,
    n_noise: int = 0,
    target_name: str = "total",
) -> Table:
    """Target equals the sum of ``n_refs`` reference columns.

    ``residual_max`` > 0 adds a uniform scaled residual in [0, residual_max)
    so the relation is approximate but within one original unit when
    residual_max <= 10**precision.
    """
    rng = np.random.default_rng(seed)
    cols: list[ScaledColumn] = []
    total = np.zeros(rows, dtype=np.int64)
    for i in range(n_refs):
        vals = rng.integers(0, span, size=rows, dtype=np.int64)
        total = total + vals
        cols.append(column_from_scaled(f"part_{i}", vals, precision))
    if residual_max > 0:
        total = total + rng.integers(0, residual_max, size=rows, dtype=np.int64)
    cols.append(column_from_scaled(target_name, total, precision))
    for i in range(n_noise):
        vals = rng.integers(0, span, size=rows, dtype=np.int64)
        cols.append(column_from_scaled(f"noise_{i}", vals, precision))
    return Table.from_columns(cols)


def make_piecewise_table(
    rows: int,
    *,
    k: int = 2,
    n_refs: int = 2,
    n_noise: int = 2,
    seed: int = 0,
    precision: int = 2,
    span: int = 10_000,
    target_null_frac: float = 0.0,
    ref_null_frac: float = 0.0,
    target_name: str = "target",
) -> Table:
    """Planted K-cluster piecewise-linear target over reference columns.

    Cluster weights are small non-zero integers and intercepts are scaled
    integers, so the target is exact at the shared precision.  Nulls are
    injected after the target is computed: a null reference therefore
    corresponds to a row whose true value is still well defined (the outlier
    case), and a null target to a genuinely missing value.
    """
    rng = np.random.default_rng(seed)
    refs = [rng.integers(0, span, size=rows, dtype=np.int64) for _ in range(n_refs)]
    labels = rng.integers(0, k, size=rows)

    y = np.zeros(rows, dtype=np.int64)
    for c in range(k):
        weights = _nonzero_int_weights(rng, n_refs)
        intercept = int(rng.integers(-span, span))
        acc = np.zeros(rows, dtype=np.int64)
        for w, vals in zip(weights, refs):
            acc = acc + w * vals
        y = np.where(labels == c, acc + intercept, y)

    cols: list[ScaledColumn] = []
    for i, vals in enumerate(refs):
        nulls = rng.random(rows) < ref_null_frac
        cols.append(column_from_scaled(f"ref_{i}", vals, precision, nulls))
    tgt_nulls = rng.random(rows) < target_null_frac
    cols.append(column_from_scaled(target_name, y, precision, tgt_nulls))
    for i in range(n_noise):
        vals = rng.integers(0, span, size=rows, dtype=np.int64)
        cols.append(column_from_scaled(f"noise_{i}", vals, precision))
    return Table.from_columns(cols)


def _nonzero_int_weights(rng: np.random.Generator, n: int) -> list[int]:
    weights = []
    for _ in range(n):
        w = 0
        while w == 0:
            w = int(rng.integers(-3, 4))
        weights.append(w)
    return weights


def make_noise_table(rows: int, cols: int, *, seed: int = 0, precision: int = 0) -> Table:
    """Mutually independent numeric columns (no discoverable functions)."""
    rng = np.random.default_rng(seed)
    out = [
        column_from_scaled(f"col_{i}", rng.integers(0, 1 << 20, size=rows, dtype=np.int64), precision)
        for i in range(cols)
    ]
    return Table.from_columns(out)


def make_planted_table(seed: int) -> Table:
    """Randomized table for round-trip fuzzing.

    1e3..1e5 rows (log-uniform), 5-20 columns, one to three planted
    piecewise-linear targets with K in {1,2,3}, up to 10% nulls in targets
    and references, plus noise columns and occasionally a string and a
    scientific-notation float column.
    """
    rng = np.random.default_rng(seed)
    rows = int(10 ** rng.uniform(3, 5))
    precision = int(rng.integers(0, 4))
    span = int(rng.integers(100, 50_000))

    n_targets = int(rng.integers(1, 4))
    n_refs = int(rng.integers(2, 5))
    with_string = bool(rng.random() < 0.3)
    with_float = bool(rng.random() < 0.3)
    base_cols = n_targets + n_refs + with_string + with_float
    n_noise = max(0, int(rng.integers(5, 21)) - base_cols)

    refs = [rng.integers(0, span, size=rows, dtype=np.int64) for _ in range(n_refs)]
    cols: list[ScaledColumn] = []
    for i, vals in enumerate(refs):
        nulls = rng.random(rows) < rng.uniform(0.0, 0.10)
        cols.append(column_from_scaled(f"ref_{i}", vals, precision, nulls))

    for t in range(n_targets):
        k = int(rng.integers(1, 4))
        labels = rng.integers(0, k, size=rows)
        support = rng.choice(n_refs, size=int(rng.integers(1, n_refs + 1)), replace=False)
        y = np.zeros(rows, dtype=np.int64)
        for c in range(k):
            weights = _nonzero_int_weights(rng, len(support))
            intercept = int(rng.integers(-span, span))
            acc = np.zeros(rows, dtype=np.int64)
            for w, j in zip(weights, support):
                acc = acc + w * refs[j]
            y = np.where(labels == c, acc + intercept, y)
        nulls = rng.random(rows) < rng.uniform(0.0, 0.10)
        cols.append(column_from_scaled(f"planted_{t}", y, precision, nulls))

    for i in range(n_noise):
        vals = rng.integers(-span, span, size=rows, dtype=np.int64)
        cols.append(column_from_scaled(f"noise_{i}", vals, int(rng.integers(0, 3))))

    if with_float:
        vals = rng.normal(0.0, 1e6, size=rows)
        nulls = rng.random(rows) < 0.05
        cols.append(column_from_floats("measurement", vals, nulls))
    if with_string:
        words = np.array(["alpha", "beta", "gamma", "delta"], dtype=object)
        vals = words[rng.integers(0, len(words), size=rows)]
        cols.append(column_from_strings("label", list(vals)))

    order = rng.permutation(len(cols))
    return Table.from_columns([cols[i] for i in order])


def tile_table(table: Table, rows: int) -> Table:
    """Duplicate rows until the table reaches ``rows`` (for robust timing)."""
    if table.row_count == 0 or rows <= table.row_count:
        return table
    reps = -(-rows // table.row_count)
    cols = []
    for col in table.columns:
        values = np.tile(col.values, reps)[:rows]
        nulls = np.tile(col.null_bitmap, reps)[:rows]
        exact = None
        if col.exact_scaled is not None:
            exact = np.tile(col.exact_scaled, reps)[:rows]
        cols.append(ScaledColumn(col.meta, values, nulls, exact, col.exact_precision))
    return Table(cols, rows)
