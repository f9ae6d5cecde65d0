"""Correlation-aware lossless columnar compression.

Numeric columns that are (piecewise) linear functions of other columns are
replaced by compact auxiliary columns plus function metadata inside an
ordinary Parquet file; scans and exact reconstruction work directly from the
virtualized file.
"""

from .codec import (
    ScanResult,
    VirtualizedColumn,
    evaluate_prediction,
    reconstruct_column,
    scan_aggregate,
    virtualize_column,
)
from .discovery import (
    DrillConfig,
    KRegressionCandidate,
    RegressorModel,
    drill,
    fit_models,
    init_assignments,
    k_regression,
    reassign,
    sparse_fit,
)
from .pipeline import CompressionResult, compress_table, plan_table
from .planner import FunctionPlan, SavingsEstimate, estimate_savings, greedy_select
from .storage import (
    VirtualFile,
    VirtualFileMetadata,
    WriterOptions,
    WriteStats,
    read_virtual_file,
    write_virtual_file,
)
from .tables import (
    ColumnMeta,
    Kind,
    Sample,
    ScaledColumn,
    Table,
    infer_column_meta,
    ingest_csv,
    sample_rows,
    write_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnMeta",
    "CompressionResult",
    "DrillConfig",
    "FunctionPlan",
    "Kind",
    "KRegressionCandidate",
    "RegressorModel",
    "Sample",
    "SavingsEstimate",
    "ScaledColumn",
    "ScanResult",
    "Table",
    "VirtualFile",
    "VirtualFileMetadata",
    "VirtualizedColumn",
    "WriteStats",
    "WriterOptions",
    "compress_table",
    "drill",
    "estimate_savings",
    "evaluate_prediction",
    "fit_models",
    "greedy_select",
    "infer_column_meta",
    "ingest_csv",
    "init_assignments",
    "k_regression",
    "plan_table",
    "reassign",
    "read_virtual_file",
    "reconstruct_column",
    "sample_rows",
    "scan_aggregate",
    "sparse_fit",
    "virtualize_column",
    "write_csv",
    "write_virtual_file",
]
