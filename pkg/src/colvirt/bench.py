"""Compression and scan benchmark harness.

The scan suite follows a duplicate-rows protocol: a small base table with a
planted sum target over ``r`` reference columns is tiled up to the requested
row count, written once as a virtual file and once as plain Parquet with
identical writer settings, and the same aggregate is timed on both.  Files
are pre-read into the page cache and medians are taken over several repeats
after a warm-up, so the numbers reflect decode plus compute rather than cold
I/O.  Timings are the only non-deterministic outputs.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import scan_aggregate
from .discovery import DrillConfig
from .pipeline import compress_table
from .storage import read_virtual_file
from .synth import make_noise_table, make_piecewise_table, make_sum_table, tile_table
from .tables import Table

SCAN_BASE_ROWS = 10_000


@dataclass
class ScanPoint:
    refs: int
    plain_seconds: float
    virtual_seconds: float

    @property
    def slowdown(self) -> float:
        return self.virtual_seconds / self.plain_seconds if self.plain_seconds else float("inf")


def time_scan(path: Path, column: str, agg: str = "sum", repeats: int = 5):
    """Median wall time of a streaming aggregate; one warm-up, cache pre-read."""
    path = Path(path)
    path.read_bytes()
    times = []
    result = None
    for i in range(repeats + 1):
        reader = read_virtual_file(path)
        t0 = time.perf_counter()
        result = scan_aggregate(reader, column, agg)
        elapsed = time.perf_counter() - t0
        reader.close()
        if i > 0:
            times.append(elapsed)
    return statistics.median(times), result


def scan_suite(
    *,
    rows: int = 1_000_000,
    refs: tuple[int, ...] = (1, 2, 4, 8),
    seed: int = 42,
    repeats: int = 5,
    output_dir: str | Path = ".",
    base_rows: int = SCAN_BASE_ROWS,
) -> dict:
    """Measure virtual-scan slowdown as a function of reference count."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    points: list[ScanPoint] = []

    for r in refs:
        base = make_sum_table(
            base_rows, r, seed=seed + r, precision=2, residual_max=100, target_name="total"
        )
        config = DrillConfig(k_max=1, seed=seed, sample_n=10_000)
        full = tile_table(base, rows)

        virtual_path = output_dir / f"scan_r{r}.virtual.parquet"
        plain_path = output_dir / f"scan_r{r}.plain.parquet"
        result = compress_table(full, virtual_path, config, measure_baseline=False)
        if len(result.plan) == 0:
            raise RuntimeError(f"scan suite: no function selected for r={r}")
        compress_table(full, plain_path, config, measure_baseline=False, skip_drill=True)

        virtual_s, virtual_val = time_scan(virtual_path, "total", "sum", repeats)
        plain_s, plain_val = time_scan(plain_path, "total", "sum", repeats)
        if virtual_val.value != plain_val.value:
            raise RuntimeError(f"scan suite: virtual and plain sums differ at r={r}")
        points.append(ScanPoint(r, plain_s, virtual_s))

    xs = np.array([p.refs for p in points], dtype=float)
    ys = np.array([p.slowdown for p in points], dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    report_csv = output_dir / "scan_report.csv"
    with report_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["refs", "plain_seconds", "virtual_seconds", "slowdown"])
        for p in points:
            writer.writerow([p.refs, f"{p.plain_seconds:.6f}", f"{p.virtual_seconds:.6f}", f"{p.slowdown:.4f}"])
    report_dat = output_dir / "scan_report.dat"
    with report_dat.open("w") as fh:
        fh.write("# refs slowdown\n")
        for p in points:
            fh.write(f"{p.refs} {p.slowdown:.6f}\n")

    return {
        "suite": "scan",
        "rows": rows,
        "points": [
            {
                "refs": p.refs,
                "plain_seconds": p.plain_seconds,
                "virtual_seconds": p.virtual_seconds,
                "slowdown": p.slowdown,
            }
            for p in points
        ],
        "slope": float(slope),
        "intercept": float(intercept),
        "r_squared": r2,
        "report_csv": str(report_csv),
        "report_dat": str(report_dat),
    }


def _compression_tables(rows: int, seed: int) -> list[tuple[str, Table]]:
    return [
        ("sum3_exact", make_sum_table(rows, 3, seed=seed, precision=2)),
        ("sum12_exact", make_sum_table(rows, 12, seed=seed + 1, precision=2)),
        (
            "sum3_residual",
            make_sum_table(rows, 3, seed=seed + 2, precision=2, residual_max=100),
        ),
        (
            "piecewise_k2",
            make_piecewise_table(rows, k=2, n_refs=3, n_noise=2, seed=seed + 3),
        ),
        ("independent_noise", make_noise_table(rows, 6, seed=seed + 4)),
    ]


def compression_suite(
    *,
    rows: int = 1_000_000,
    seed: int = 42,
    output_dir: str | Path = ".",
) -> dict:
    """Planted-correlation tables: report the saving over the plain baseline."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for name, table in _compression_tables(rows, seed):
        path = output_dir / f"compress_{name}.parquet"
        res = compress_table(table, path, DrillConfig(seed=seed))
        results.append(
            {
                "table": name,
                "rows": table.row_count,
                "selected": len(res.plan),
                "baseline_bytes": res.baseline_bytes,
                "virtual_bytes": res.stats.total_bytes,
                "saving_fraction": res.saving_fraction,
            }
        )

    report_csv = output_dir / "compression_report.csv"
    with report_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["table", "rows", "selected", "baseline_bytes", "virtual_bytes", "saving_fraction"]
        )
        for row in results:
            writer.writerow(
                [
                    row["table"],
                    row["rows"],
                    row["selected"],
                    row["baseline_bytes"],
                    row["virtual_bytes"],
                    f"{row['saving_fraction']:.4f}",
                ]
            )
    return {"suite": "compression", "tables": results, "report_csv": str(report_csv)}
