"""Parquet persistence for virtualized tables.

A virtual file is ordinary Parquet: non-virtualized columns are stored as-is
(scaled int64 for integer/decimal columns, doubles for floats, UTF-8 for
strings) and each virtualized target is replaced in place by its auxiliary
columns ``<target>__offset``, ``<target>__switch`` (only when K > 1),
``<target>__outlier`` and ``<target>__isnan``.  The function metadata is a
JSON document stored under the footer key ``virtual.meta.v1`` and mirrored
byte-for-byte in a ``<path>.virtual.json`` sidecar.  Stock Parquet readers
see the physical schema; this module's reader re-exposes the logical one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from .codec import reconstruct_column, VirtualizedColumn, virtualize_column
from .discovery import KRegressionCandidate, RegressorModel
from .errors import MetadataError, PlanMismatch, UnknownColumn
from .numeric import pow10, round_half_away_to_int64
from .planner import FunctionPlan
from .tables import ColumnMeta, Kind, ScaledColumn, Table

FOOTER_KEY = b"virtual.meta.v1"
FIELD_KIND = b"virtual.kind"
FIELD_PRECISION = b"virtual.precision"
FIELD_EXACT_PRECISION = b"virtual.exact_precision"

AUX_SUFFIX = {"offset": "__offset", "switch": "__switch", "outlier": "__outlier", "is_nan": "__isnan"}


@dataclass
class WriterOptions:
    """Writer settings; identical for baseline and virtual files so size
    comparisons isolate virtualization."""

    compression: str = "snappy"
    row_group_size: int = 1 << 20
    use_dictionary: bool = True
    write_sidecar: bool = True


@dataclass
class WriteStats:
    path: Path
    total_bytes: int
    column_bytes: dict[str, int]
    row_count: int


@dataclass(frozen=True)
class VirtualColumnEntry:
    """Footer record for one virtualized column."""

    name: str
    precision: int
    k: int
    references: tuple[str, ...]
    models: tuple[RegressorModel, ...]
    aux_names: dict[str, str]

    def as_candidate(self) -> KRegressionCandidate:
        return KRegressionCandidate(
            target=self.name,
            references=self.references,
            k=self.k,
            models=self.models,
            lambda_=0.0,
            sample_max_abs_error=0.0,
            sample_sse=0.0,
            objective=0.0,
            objective_trace=(),
            n_fit_rows=0,
        )


@dataclass(frozen=True)
class VirtualFileMetadata:
    version: int
    virtual_columns: tuple[VirtualColumnEntry, ...]
    eval_order: tuple[str, ...]

    def entry(self, name: str) -> VirtualColumnEntry:
        for e in self.virtual_columns:
            if e.name == name:
                return e
        raise UnknownColumn(name)


def write_virtual_file(
    table: Table,
    plan: FunctionPlan | None,
    path: str | Path,
    options: WriterOptions | None = None,
) -> WriteStats:
    """Write the table with the plan's targets virtualized.

    An empty (or None) plan produces a plain Parquet file with no footer
    entry, byte-identical to the baseline writer output.
    """
    options = options or WriterOptions()
    path = Path(path)
    selected = {c.target: c for c in plan.selected} if plan else {}
    for cand in selected.values():
        if cand.target not in table:
            raise PlanMismatch(f"plan target {cand.target!r} not in table")
        for ref in cand.references:
            if ref not in table:
                raise PlanMismatch(f"plan reference {ref!r} not in table")

    fields: list[pa.Field] = []
    arrays: list[pa.Array] = []
    for col in table.columns:
        if col.name in selected:
            virt = virtualize_column(table, selected[col.name])
            for f, a in _aux_fields(virt):
                fields.append(f)
                arrays.append(a)
        else:
            f, a = _physical_field(col)
            fields.append(f)
            arrays.append(a)

    schema_metadata = None
    meta_bytes = b""
    if selected:
        meta_bytes = _metadata_bytes(plan, table)
        schema_metadata = {FOOTER_KEY: meta_bytes}
    schema = pa.schema(fields, metadata=schema_metadata)
    arrow_table = pa.Table.from_arrays(arrays, schema=schema)
    pq.write_table(
        arrow_table,
        path,
        compression=options.compression,
        row_group_size=options.row_group_size,
        use_dictionary=options.use_dictionary,
    )
    if selected and options.write_sidecar:
        Path(f"{path}.virtual.json").write_bytes(meta_bytes)

    return _collect_stats(path, table.row_count)


def _metadata_bytes(plan: FunctionPlan, table: Table) -> bytes:
    by_target = {c.target: c for c in plan.selected}
    entries = []
    for name in plan.eval_order:
        cand = by_target[name]
        pair = table.column(name).scaled_pair()
        precision = pair[1] if pair else 0
        aux = {"offset": f"{name}__offset"}
        if cand.k > 1:
            aux["switch"] = f"{name}__switch"
        aux["outlier"] = f"{name}__outlier"
        aux["is_nan"] = f"{name}__isnan"
        entries.append(
            {
                "name": name,
                "precision": precision,
                "k": cand.k,
                "references": list(cand.references),
                "models": [
                    {
                        "weights": {n: repr(w) for n, w in m.weights.items()},
                        "intercept": repr(m.intercept),
                    }
                    for m in cand.models
                ],
                "aux_names": aux,
            }
        )
    doc = {"version": 1, "virtual_columns": entries, "eval_order": list(plan.eval_order)}
    return json.dumps(doc, indent=2).encode()


def _physical_field(col: ScaledColumn) -> tuple[pa.Field, pa.Array]:
    kind = col.meta.kind
    meta = {FIELD_KIND: kind.value.encode()}
    if kind in (Kind.INTEGER, Kind.DECIMAL):
        meta[FIELD_PRECISION] = str(col.meta.precision).encode()
        arr = pa.array(col.values, type=pa.int64(), mask=col.null_bitmap)
        return pa.field(col.name, pa.int64(), metadata=meta), arr
    if kind is Kind.FLOAT:
        if col.exact_scaled is not None:
            meta[FIELD_EXACT_PRECISION] = str(col.exact_precision).encode()
        arr = pa.array(col.values, type=pa.float64(), mask=col.null_bitmap)
        return pa.field(col.name, pa.float64(), metadata=meta), arr
    if kind is Kind.BOOLEAN:
        arr = pa.array(col.values.astype(bool), type=pa.bool_(), mask=col.null_bitmap)
        return pa.field(col.name, pa.bool_(), metadata=meta), arr
    values = [None if null else str(v) for v, null in zip(col.values, col.null_bitmap)]
    arr = pa.array(values, type=pa.string())
    return pa.field(col.name, pa.string(), metadata=meta), arr


def _aux_fields(virt: VirtualizedColumn) -> list[tuple[pa.Field, pa.Array]]:
    t = virt.target
    int_meta = {FIELD_KIND: b"integer", FIELD_PRECISION: b"0"}
    out = [
        (
            pa.field(f"{t}__offset", pa.int64(), metadata=int_meta),
            pa.array(virt.offset, type=pa.int64()),
        )
    ]
    if virt.switch is not None:
        out.append(
            (
                pa.field(f"{t}__switch", pa.int8(), metadata=int_meta),
                pa.array(virt.switch, type=pa.int8()),
            )
        )
    out.append(
        (
            pa.field(f"{t}__outlier", pa.int64(), metadata=int_meta),
            pa.array(virt.outlier_values, type=pa.int64(), mask=~virt.outlier_mask),
        )
    )
    out.append(
        (
            pa.field(f"{t}__isnan", pa.bool_(), metadata={FIELD_KIND: b"boolean"}),
            pa.array(virt.is_nan, type=pa.bool_()),
        )
    )
    return out


def _collect_stats(path: Path, row_count: int) -> WriteStats:
    pf = pq.ParquetFile(path)
    sizes: dict[str, int] = {}
    fmeta = pf.metadata
    for rg in range(fmeta.num_row_groups):
        group = fmeta.row_group(rg)
        for ci in range(group.num_columns):
            chunk = group.column(ci)
            name = chunk.path_in_schema
            sizes[name] = sizes.get(name, 0) + chunk.total_compressed_size
    return WriteStats(path, path.stat().st_size, sizes, row_count)


@dataclass(frozen=True)
class LogicalField:
    name: str
    kind: Kind
    precision: int
    virtual: bool


class VirtualFile:
    """Reader over a (possibly) virtual Parquet file.

    Exposes the logical schema, whole-column reads with reconstruction, and
    batch streaming that touches only the transitive support of a column.
    """

    def __init__(
        self,
        path: Path,
        parquet: pq.ParquetFile,
        metadata: VirtualFileMetadata | None,
        raw_metadata: bytes | None,
    ) -> None:
        self.path = path
        self.parquet = parquet
        self.metadata = metadata
        self.raw_metadata = raw_metadata
        self._schema = parquet.schema_arrow
        self._virtual = {e.name: e for e in metadata.virtual_columns} if metadata else {}
        self._logical = self._build_logical()

    # -- schema ---------------------------------------------------------

    def _build_logical(self) -> list[LogicalField]:
        aux_owner: dict[str, str] = {}
        for e in self._virtual.values():
            for aux_name in e.aux_names.values():
                aux_owner[aux_name] = e.name
        out: list[LogicalField] = []
        for field in self._schema:
            owner = aux_owner.get(field.name)
            if owner is not None:
                if field.name == self._virtual[owner].aux_names["offset"]:
                    entry = self._virtual[owner]
                    kind = Kind.DECIMAL if entry.precision > 0 else Kind.INTEGER
                    out.append(LogicalField(owner, kind, entry.precision, True))
                continue
            kind, precision = _field_kind(field)
            out.append(LogicalField(field.name, kind, precision, False))
        return out

    def logical_column_names(self) -> list[str]:
        return [f.name for f in self._logical]

    def logical_field(self, name: str) -> LogicalField:
        for f in self._logical:
            if f.name == name:
                return f
        raise UnknownColumn(name)

    @property
    def physical_column_names(self) -> list[str]:
        return [f.name for f in self._schema]

    # -- whole-column reads ----------------------------------------------

    def read_column(self, name: str) -> ScaledColumn:
        cache: dict[str, ScaledColumn] = {}
        return self._materialize(name, cache)

    def read_table(self) -> Table:
        cache: dict[str, ScaledColumn] = {}
        cols = [self._materialize(f.name, cache) for f in self._logical]
        return Table(cols, len(cols[0]) if cols else 0)

    def _materialize(self, name: str, cache: dict[str, ScaledColumn]) -> ScaledColumn:
        if name in cache:
            return cache[name]
        if name in self._virtual:
            entry = self._virtual[name]
            refs = {r: self._materialize(r, cache) for r in entry.references}
            virt = self._read_aux(entry)
            col = reconstruct_column(virt, entry.as_candidate(), refs)
        else:
            field = self.logical_field(name)
            if field.virtual:
                raise UnknownColumn(name)
            tbl = self.parquet.read(columns=[name])
            col = _column_from_arrow(tbl.column(0), self._schema.field(name))
        cache[name] = col
        return col

    def _read_aux(self, entry: VirtualColumnEntry) -> VirtualizedColumn:
        names = list(entry.aux_names.values())
        tbl = self.parquet.read(columns=names)
        by_name = {n: tbl.column(tbl.schema.names.index(n)) for n in names}
        return _aux_from_arrow(entry, by_name)

    # -- streaming -------------------------------------------------------

    def stream_column(
        self, name: str, batch_size: int = 65536
    ) -> Iterator[tuple[np.ndarray, np.ndarray, ColumnMeta]]:
        """Yield (values, null_bitmap, meta) for a logical column, loading
        only the columns in its transitive support."""
        physical, virtual_chain = self._support_closure(name)
        for batch in self.parquet.iter_batches(batch_size=batch_size, columns=physical):
            cols: dict[str, ScaledColumn] = {}
            for i, pname in enumerate(batch.schema.names):
                cols[pname] = _column_from_arrow(batch.column(i), self._schema.field(pname))
            for vname in virtual_chain:
                entry = self._virtual[vname]
                virt = _aux_from_columns(entry, cols)
                refs = {r: cols[r] for r in entry.references}
                cols[vname] = reconstruct_column(virt, entry.as_candidate(), refs)
            col = cols[name]
            yield col.values, col.null_bitmap, col.meta

    def _support_closure(self, name: str) -> tuple[list[str], list[str]]:
        if name not in set(self.logical_column_names()):
            raise UnknownColumn(name)
        physical: set[str] = set()
        virtual: set[str] = set()

        def visit(col: str) -> None:
            if col in self._virtual:
                if col in virtual:
                    return
                virtual.add(col)
                entry = self._virtual[col]
                physical.update(entry.aux_names.values())
                for r in entry.references:
                    visit(r)
            else:
                physical.add(col)

        visit(name)
        order = [n for n in (self.metadata.eval_order if self.metadata else ()) if n in virtual]
        file_order = [f.name for f in self._schema if f.name in physical]
        return file_order, order

    def close(self) -> None:
        self.parquet.close()

    def __enter__(self) -> "VirtualFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_virtual_file(path: str | Path, *, on_error: str = "raise") -> VirtualFile:
    """Open a Parquet file, parsing and validating virtual metadata.

    Malformed or invariant-violating metadata raises MetadataError by
    default; with ``on_error="plain"`` the file is opened as plain Parquet
    (auxiliary columns exposed raw) after emitting a warning.
    """
    path = Path(path)
    parquet = pq.ParquetFile(path)
    raw = None
    kv = parquet.metadata.metadata or {}
    raw = kv.get(FOOTER_KEY)
    metadata = None
    if raw is not None:
        try:
            metadata = _parse_metadata(raw, parquet.schema_arrow)
        except MetadataError:
            if on_error != "plain":
                parquet.close()
                raise
            warnings.warn(
                f"{path}: invalid virtual metadata; reading as plain Parquet",
                stacklevel=2,
            )
            metadata = None
    return VirtualFile(path, parquet, metadata, raw)


def _parse_metadata(raw: bytes, schema: pa.Schema) -> VirtualFileMetadata:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MetadataError(f"footer JSON unreadable: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise MetadataError("unsupported metadata version")
    raw_cols = doc.get("virtual_columns")
    eval_order = doc.get("eval_order")
    if not isinstance(raw_cols, list) or not isinstance(eval_order, list):
        raise MetadataError("virtual_columns and eval_order must be lists")

    physical = set(schema.names)
    entries: list[VirtualColumnEntry] = []
    for item in raw_cols:
        entries.append(_parse_entry(item, physical))
    names = [e.name for e in entries]
    if sorted(names) != sorted(eval_order) or len(set(names)) != len(names):
        raise MetadataError("eval_order is not a permutation of the virtual columns")
    order_pos = {n: i for i, n in enumerate(eval_order)}
    for e in entries:
        for r in e.references:
            if r in physical:
                continue
            if r in order_pos and order_pos[r] < order_pos[e.name]:
                continue
            raise MetadataError(
                f"reference {r!r} of {e.name!r} is neither physical nor earlier in eval_order"
            )
    return VirtualFileMetadata(1, tuple(entries), tuple(eval_order))


def _parse_entry(item: object, physical: set[str]) -> VirtualColumnEntry:
    if not isinstance(item, dict):
        raise MetadataError("virtual column entry must be an object")
    try:
        name = item["name"]
        precision = item["precision"]
        k = item["k"]
        references = item["references"]
        models = item["models"]
        aux = item["aux_names"]
    except KeyError as exc:
        raise MetadataError(f"virtual column entry missing key {exc}") from exc
    if not isinstance(k, int) or k < 1:
        raise MetadataError(f"{name}: k must be a positive integer")
    if not isinstance(precision, int) or precision < 0:
        raise MetadataError(f"{name}: precision must be a non-negative integer")
    if not isinstance(references, list) or not isinstance(aux, dict):
        raise MetadataError(f"{name}: references must be a list and aux_names an object")
    if name in physical:
        raise MetadataError(f"{name}: virtual column also present physically")
    if ("switch" in aux) != (k > 1):
        raise MetadataError(f"{name}: switch auxiliary must be present exactly when k > 1")
    required = {"offset", "outlier", "is_nan"} | ({"switch"} if k > 1 else set())
    if set(aux) != required:
        raise MetadataError(f"{name}: aux_names keys must be {sorted(required)}")
    for aux_name in aux.values():
        if aux_name not in physical:
            raise MetadataError(f"{name}: auxiliary column {aux_name!r} missing from file")
    if not isinstance(models, list) or len(models) != k:
        raise MetadataError(f"{name}: expected {k} models")
    parsed_models = []
    refset = set(references)
    for m in models:
        try:
            weights = {str(n): float(v) for n, v in m["weights"].items()}
            intercept = float(m["intercept"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"{name}: malformed model: {exc}") from exc
        if not set(weights) <= refset:
            raise MetadataError(f"{name}: model weights outside the reference set")
        if any(w == 0.0 for w in weights.values()):
            raise MetadataError(f"{name}: zero coefficient stored in weights")
        parsed_models.append(RegressorModel(weights, intercept))
    return VirtualColumnEntry(
        name=str(name),
        precision=precision,
        k=k,
        references=tuple(str(r) for r in references),
        models=tuple(parsed_models),
        aux_names={str(a): str(b) for a, b in aux.items()},
    )


# -- arrow <-> columns -----------------------------------------------------


def _field_kind(field: pa.Field) -> tuple[Kind, int]:
    meta = field.metadata or {}
    if FIELD_KIND in meta:
        kind = Kind(meta[FIELD_KIND].decode())
        precision = int(meta.get(FIELD_PRECISION, b"0"))
        return kind, precision
    t = field.type
    if pa.types.is_integer(t):
        return Kind.INTEGER, 0
    if pa.types.is_floating(t):
        return Kind.FLOAT, 0
    if pa.types.is_string(t) or pa.types.is_large_string(t):
        return Kind.STRING, 0
    if pa.types.is_boolean(t):
        return Kind.BOOLEAN, 0
    return Kind.OTHER, 0


def _column_from_arrow(arr: pa.ChunkedArray | pa.Array, field: pa.Field) -> ScaledColumn:
    if isinstance(arr, pa.ChunkedArray):
        arr = arr.combine_chunks()
    kind, precision = _field_kind(field)
    null_bitmap = np.asarray(arr.is_null())
    meta = ColumnMeta(field.name, kind, precision, bool(null_bitmap.any()))
    if kind in (Kind.INTEGER, Kind.DECIMAL):
        values = np.asarray(arr.fill_null(0)).astype(np.int64)
        return ScaledColumn(meta, values, null_bitmap)
    if kind is Kind.FLOAT:
        values = np.asarray(arr.fill_null(0.0)).astype(np.float64)
        fmeta = field.metadata or {}
        exact_scaled = None
        exact_p = None
        if FIELD_EXACT_PRECISION in fmeta:
            exact_p = int(fmeta[FIELD_EXACT_PRECISION])
            exact_scaled = round_half_away_to_int64(values * pow10(exact_p))
            exact_scaled[null_bitmap] = 0
        return ScaledColumn(meta, values, null_bitmap, exact_scaled, exact_p)
    if kind is Kind.BOOLEAN:
        values = np.asarray(arr.fill_null(False)).astype(bool)
        return ScaledColumn(meta, values, null_bitmap)
    values = np.array(["" if v is None else str(v) for v in arr.to_pylist()], dtype=object)
    return ScaledColumn(meta, values, null_bitmap)


def _aux_from_arrow(
    entry: VirtualColumnEntry, columns: Mapping[str, pa.ChunkedArray]
) -> VirtualizedColumn:
    cols = {}
    for key, aux_name in entry.aux_names.items():
        arr = columns[aux_name]
        if isinstance(arr, pa.ChunkedArray):
            arr = arr.combine_chunks()
        cols[key] = arr
    return _aux_to_virtualized(entry, cols)


def _aux_from_columns(
    entry: VirtualColumnEntry, columns: Mapping[str, ScaledColumn | pa.Array]
) -> VirtualizedColumn:
    cols = {key: columns[aux_name] for key, aux_name in entry.aux_names.items()}
    offset = cols["offset"]
    if isinstance(offset, ScaledColumn):
        outlier = cols["outlier"]
        is_nan = cols["is_nan"]
        switch = cols.get("switch")
        return VirtualizedColumn(
            target=entry.name,
            precision=entry.precision,
            offset=offset.values,
            switch=None if switch is None else switch.values.astype(np.int8),
            outlier_values=outlier.values,
            outlier_mask=~outlier.null_bitmap,
            is_nan=is_nan.values.astype(bool),
        )
    return _aux_to_virtualized(entry, cols)


def _aux_to_virtualized(
    entry: VirtualColumnEntry, cols: Mapping[str, pa.Array]
) -> VirtualizedColumn:
    offset = np.asarray(cols["offset"].fill_null(0)).astype(np.int64)
    outlier_arr = cols["outlier"]
    outlier_mask = ~np.asarray(outlier_arr.is_null())
    outlier_values = np.asarray(outlier_arr.fill_null(0)).astype(np.int64)
    is_nan = np.asarray(cols["is_nan"].fill_null(False)).astype(bool)
    switch = None
    if "switch" in cols:
        switch = np.asarray(cols["switch"].fill_null(0)).astype(np.int8)
    return VirtualizedColumn(
        target=entry.name,
        precision=entry.precision,
        offset=offset,
        switch=switch,
        outlier_values=outlier_values,
        outlier_mask=outlier_mask,
        is_nan=is_nan,
    )
