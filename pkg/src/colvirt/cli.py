"""Command-line front end: compress, decompress, verify, scan, stats, bench.

Machine-readable JSON reports go to stdout; human-readable progress and
warnings go to stderr.  Every command is deterministic for a fixed --seed
except wall-clock timings.  The VIRTUAL_THREADS environment variable caps
the worker threads used during discovery.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .codec import scan_aggregate
from .discovery import DrillConfig
from .errors import ColvirtError, FormatError, MetadataError, UnknownColumn
from .pipeline import compress_table
from .storage import read_virtual_file
from .tables import DEFAULT_NULL_TOKENS, Kind, Table, ingest_csv, write_csv


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(report: dict) -> None:
    print(json.dumps(report, indent=2))


def fraction_repr(value) -> str | None:
    """Exact decimal text for a Fraction when the denominator is 10**k."""
    if value is None:
        return None
    if isinstance(value, Fraction):
        num, den = value.numerator, value.denominator
        digits = 0
        while den % 10 == 0:
            den //= 10
            digits += 1
        while den % 2 == 0:
            den //= 2
            num *= 5
            digits += 1
        while den % 5 == 0:
            den //= 5
            num *= 2
            digits += 1
        if den == 1:
            from .tables import render_scaled

            return render_scaled(num, digits)
        return f"{value.numerator}/{value.denominator}"
    return repr(value)


def _scan_value_json(value):
    if value is None:
        return None
    if isinstance(value, Fraction):
        return float(value)
    return value


# -- compress ----------------------------------------------------------------


def _drill_config(args: argparse.Namespace) -> DrillConfig:
    lam = None if args.lambda_ == "auto" else float(args.lambda_)
    return DrillConfig(
        k_max=args.k_max,
        lambda_=lam,
        sample_n=args.sample,
        error_threshold=args.error_threshold,
        restarts=args.restarts,
        seed=args.seed,
        max_support=args.max_support,
    )


def cmd_compress(args: argparse.Namespace) -> int:
    null_tokens = args.null_token if args.null_token is not None else list(DEFAULT_NULL_TOKENS)
    warnings: list[str] = []
    t_start = time.perf_counter()
    try:
        t0 = time.perf_counter()
        table = ingest_csv(
            args.input,
            args.row_limit,
            delimiter=args.delimiter,
            null_tokens=null_tokens,
        )
        ingest_s = time.perf_counter() - t0
    except (OSError, FormatError) as exc:
        _err(f"error: {exc}")
        return 1

    config = _drill_config(args)
    skip = table.row_count < args.min_rows
    if skip:
        warnings.append(
            f"below min-rows: table has {table.row_count} rows (< {args.min_rows}); "
            "writing plain Parquet"
        )
        _err(f"warning: {warnings[-1]}")

    result = compress_table(
        table,
        args.output,
        config,
        max_chain_depth=args.max_chain_depth,
        skip_drill=skip,
    )

    selected_names = set(result.plan.targets)
    report = {
        "input": {
            "path": str(args.input),
            "rows": table.row_count,
            "columns": len(table.columns),
        },
        "config": {
            "row_limit": args.row_limit,
            "sample": args.sample,
            "k_max": args.k_max,
            "lambda": config.lambda_ if config.lambda_ is not None else "auto",
            "error_threshold": args.error_threshold,
            "restarts": args.restarts,
            "seed": args.seed,
            "min_rows": args.min_rows,
            "max_support": args.max_support,
            "max_chain_depth": args.max_chain_depth,
        },
        "candidates_found": len(result.candidates),
        "candidates_selected": len(result.plan),
        "targets": [
            {
                "target": cand.target,
                "k": cand.k,
                "references": list(cand.references),
                "sample_max_abs_error": cand.sample_max_abs_error,
                "net_bytes": result.plan.savings[cand.target].net_bytes,
            }
            for cand in result.plan.selected
        ],
        "eval_order": list(result.plan.eval_order),
        "baseline_bytes": result.baseline_bytes,
        "virtual_bytes": result.stats.total_bytes,
        "saving_fraction": result.saving_fraction,
        "output": str(args.output),
        "warnings": warnings,
        "timings": {
            "ingest_s": ingest_s,
            **result.timings,
            "total_s": time.perf_counter() - t_start,
        },
    }
    _emit(report)
    _err(
        f"{args.input}: {table.row_count} rows, {len(table.columns)} columns; "
        f"{len(result.candidates)} candidate(s), {len(result.plan)} selected "
        f"({sorted(selected_names) if selected_names else 'none'}); "
        f"saving {result.saving_fraction:.1%} over baseline"
    )
    return 0


# -- verify ------------------------------------------------------------------


def _column_differences(expected, actual, limit: int):
    """Indices where two columns differ (null mask or value)."""
    null_diff = expected.null_bitmap != actual.null_bitmap
    both = ~expected.null_bitmap & ~actual.null_bitmap
    if expected.meta.kind is Kind.STRING:
        value_diff = np.array(
            [bool(b) and ev != av for ev, av, b in zip(expected.values, actual.values, both)]
        )
    else:
        value_diff = np.zeros(len(expected.values), dtype=bool)
        value_diff[both] = expected.values[both] != actual.values[both]
    return np.nonzero(null_diff | value_diff)[0][:limit]


def cmd_verify(args: argparse.Namespace) -> int:
    null_tokens = args.null_token if args.null_token is not None else list(DEFAULT_NULL_TOKENS)
    try:
        expected = ingest_csv(
            args.input,
            args.row_limit,
            delimiter=args.delimiter,
            null_tokens=null_tokens,
        )
        reader = read_virtual_file(args.file)
        actual = reader.read_table()
        reader.close()
    except (OSError, FormatError, MetadataError, ColvirtError) as exc:
        _err(f"error: {exc}")
        return 1

    mismatches: list[tuple[int, str, str, str]] = []
    if expected.column_names != actual.column_names:
        _err(
            f"schema mismatch: csv columns {expected.column_names} "
            f"!= file columns {actual.column_names}"
        )
        return 2
    if expected.row_count != actual.row_count:
        _err(f"row count mismatch: csv {expected.row_count} != file {actual.row_count}")
        return 2

    for col in expected.columns:
        other = actual.column(col.name)
        exp_pair = col.scaled_pair()
        act_pair = other.scaled_pair()
        if exp_pair and act_pair and exp_pair[1] != act_pair[1]:
            _err(
                f"precision mismatch on {col.name!r}: csv p={exp_pair[1]}, file p={act_pair[1]}"
            )
            return 2
        for i in _column_differences(col, other, 10 - len(mismatches)):
            mismatches.append(
                (
                    int(i),
                    col.name,
                    _render(col, int(i)),
                    _render(other, int(i)),
                )
            )
        if len(mismatches) >= 10:
            break

    if mismatches:
        _err(f"verification failed: {len(mismatches)}+ differing cells")
        for row, name, exp, act in mismatches:
            _err(f"  row {row} column {name}: expected {exp}, actual {act}")
        return 2
    _err(f"verified: {expected.row_count} rows x {len(expected.columns)} columns identical")
    return 0


def _render(col, i: int) -> str:
    token = col.render_token(i)
    return "<null>" if token is None else token


# -- decompress / scan / stats ------------------------------------------------


def cmd_decompress(args: argparse.Namespace) -> int:
    try:
        reader = read_virtual_file(args.file)
        table = reader.read_table()
        reader.close()
        write_csv(table, args.output, delimiter=args.delimiter, null_token=args.null_token_out)
    except (OSError, ColvirtError) as exc:
        _err(f"error: {exc}")
        return 1
    _err(f"wrote {table.row_count} rows to {args.output}")
    return 0


def cmd_scan(args: argparse.Namespace) -> int:
    try:
        median_s, result = bench_mod.time_scan(
            Path(args.file), args.column, args.agg, repeats=args.repeat
        )
    except UnknownColumn as exc:
        _err(f"error: unknown column {exc}")
        return 1
    except (OSError, ColvirtError) as exc:
        _err(f"error: {exc}")
        return 1
    _emit(
        {
            "column": args.column,
            "agg": args.agg,
            "value": _scan_value_json(result.value),
            "value_exact": fraction_repr(result.value),
            "null_count": result.null_count,
            "row_count": result.row_count,
            "median_seconds": median_s,
            "repeats": args.repeat,
        }
    )
    _err(f"{args.agg}({args.column}) = {fraction_repr(result.value)} in {median_s * 1e3:.2f} ms (median)")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        reader = read_virtual_file(args.file, on_error="plain")
    except (OSError, ColvirtError) as exc:
        _err(f"error: {exc}")
        return 1
    pf = reader.parquet
    sizes: dict[str, int] = {}
    for rg in range(pf.metadata.num_row_groups):
        group = pf.metadata.row_group(rg)
        for ci in range(group.num_columns):
            chunk = group.column(ci)
            sizes[chunk.path_in_schema] = (
                sizes.get(chunk.path_in_schema, 0) + chunk.total_compressed_size
            )
    doc = None
    if reader.raw_metadata is not None:
        try:
            doc = json.loads(reader.raw_metadata.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            doc = None
    _emit(
        {
            "path": str(args.file),
            "total_bytes": Path(args.file).stat().st_size,
            "rows": pf.metadata.num_rows,
            "row_groups": pf.metadata.num_row_groups,
            "physical_columns": sizes,
            "logical_columns": reader.logical_column_names(),
            "virtual_metadata": doc,
        }
    )
    reader.close()
    return 0


# -- bench ---------------------------------------------------------------------


def cmd_bench(args: argparse.Namespace) -> int:
    refs = tuple(int(x) for x in args.refs.split(","))
    if args.suite == "scan":
        report = bench_mod.scan_suite(
            rows=args.rows,
            refs=refs,
            seed=args.seed,
            repeats=args.repeat,
            output_dir=args.output_dir,
        )
        _emit(report)
        for p in report["points"]:
            _err(f"refs={p['refs']}: slowdown {p['slowdown']:.2f}x")
        _err(f"slope {report['slope']:.4f}, R^2 {report['r_squared']:.3f}")
    else:
        report = bench_mod.compression_suite(
            rows=args.rows, seed=args.seed, output_dir=args.output_dir
        )
        _emit(report)
        for row in report["tables"]:
            _err(f"{row['table']}: saving {row['saving_fraction']:.1%}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colvirt",
        description=(
            "Losslessly compress relational tables by virtualizing numeric "
            "columns behind sparse cluster-wise linear functions."
        ),
        epilog="Set VIRTUAL_THREADS to cap discovery worker threads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_csv_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--row-limit", type=int, default=1_000_000)
        p.add_argument("--delimiter", default=",")
        p.add_argument(
            "--null-token",
            action="append",
            default=None,
            help="token treated as null (repeatable; default: '', NaN, nan, NA)",
        )

    p = sub.add_parser("compress", help="discover functions and write a virtual Parquet file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    add_csv_flags(p)
    p.add_argument("--sample", type=int, default=10_000)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--lambda", dest="lambda_", default="auto")
    p.add_argument("--error-threshold", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--min-rows", type=int, default=1000)
    p.add_argument("--max-support", type=int, default=8)
    p.add_argument("--max-chain-depth", type=int, default=2)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("verify", help="compare a virtual file cell-for-cell against its CSV")
    p.add_argument("input")
    p.add_argument("file")
    add_csv_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decompress", help="reconstruct a virtual file back to CSV")
    p.add_argument("file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--null-token-out", default="", help="token used to render nulls")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("scan", help="aggregate one column, timing the scan")
    p.add_argument("file")
    p.add_argument("--column", required=True)
    p.add_argument("--agg", choices=["sum", "avg", "count"], default="sum")
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("stats", help="print file metadata and column sizes")
    p.add_argument("file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="run the compression or scan benchmark suite")
    p.add_argument("--suite", choices=["compression", "scan"], required=True)
    p.add_argument("--rows", type=int, default=1_000_000)
    p.add_argument("--refs", default="1,2,4,8")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
