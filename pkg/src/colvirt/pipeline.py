"""End-to-end orchestration shared by the CLI and the benchmark harness."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .discovery import DrillConfig, KRegressionCandidate, drill
from .planner import FunctionPlan, estimate_savings, greedy_select
from .storage import WriterOptions, WriteStats, write_virtual_file
from .tables import Table, sample_rows


@dataclass
class CompressionResult:
    candidates: list[KRegressionCandidate]
    plan: FunctionPlan
    stats: WriteStats
    baseline_bytes: int
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def saving_fraction(self) -> float:
        if self.baseline_bytes == 0:
            return 0.0
        return 1.0 - self.stats.total_bytes / self.baseline_bytes


def plan_table(
    table: Table, config: DrillConfig, *, max_chain_depth: int = 2
) -> tuple[list[KRegressionCandidate], FunctionPlan]:
    """Run discovery and greedy selection for a table."""
    candidates = drill(table, config)
    sample = sample_rows(table, config.sample_n, config.seed)
    estimates = [estimate_savings(c, table, sample) for c in candidates]
    plan = greedy_select(estimates, max_chain_depth=max_chain_depth)
    return candidates, plan


def compress_table(
    table: Table,
    out_path: str | Path,
    config: DrillConfig | None = None,
    *,
    max_chain_depth: int = 2,
    options: WriterOptions | None = None,
    measure_baseline: bool = True,
    skip_drill: bool = False,
) -> CompressionResult:
    """Discover, select, and write; optionally measure the plain baseline.

    The baseline is the same table written by the identical writer with an
    empty plan.  When the plan itself is empty the virtual file *is* the
    baseline, so no second write happens.
    """
    config = config or DrillConfig()
    options = options or WriterOptions()
    out_path = Path(out_path)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    if skip_drill:
        candidates, plan = [], greedy_select([])
    else:
        candidates, plan = plan_table(table, config, max_chain_depth=max_chain_depth)
    timings["drill_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stats = write_virtual_file(table, plan, out_path, options)
    timings["write_s"] = time.perf_counter() - t0

    if len(plan) == 0:
        baseline_bytes = stats.total_bytes
    elif measure_baseline:
        t0 = time.perf_counter()
        tmp = out_path.with_name(out_path.name + ".baseline.tmp")
        baseline_options = WriterOptions(
            compression=options.compression,
            row_group_size=options.row_group_size,
            use_dictionary=options.use_dictionary,
            write_sidecar=False,
        )
        baseline = write_virtual_file(table, None, tmp, baseline_options)
        baseline_bytes = baseline.total_bytes
        os.unlink(tmp)
        timings["baseline_s"] = time.perf_counter() - t0
    else:
        baseline_bytes = 0

    return CompressionResult(candidates, plan, stats, baseline_bytes, timings)
