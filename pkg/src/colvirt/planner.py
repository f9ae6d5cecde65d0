"""Savings estimation and greedy selection of a valid candidate subset.

Discovery may propose a function for every column of an algebraic identity
(a = b + c also yields b = a - c); materializing both directions would make
reconstruction circular.  The planner estimates the storage saved by each
candidate from sample bit-widths, then accepts candidates greedily as long
as the reference->target graph stays acyclic, every target is virtualized at
most once, and reconstruction chains stay within a depth bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import predict_scaled
from .discovery import KRegressionCandidate
from .errors import InvalidArgument
from .numeric import zigzag_bitwidth
from .tables import Sample, Table

# Fixed stand-in for the page-level compression a real encoder adds on top
# of bit-packing; applied to both sides so rankings stay meaningful.
ENCODER_FACTOR = 0.7

OUTLIER_ROW_OVERHEAD = 8.0  # bookkeeping bytes per stored outlier row


@dataclass(frozen=True)
class SavingsEstimate:
    """Estimated bytes for storing a target raw versus virtualized."""

    candidate: KRegressionCandidate
    original_bytes: float
    aux_bytes: float

    @property
    def net_bytes(self) -> float:
        return self.original_bytes - self.aux_bytes


@dataclass(frozen=True)
class FunctionPlan:
    """Acyclic, conflict-free subset of candidates with a reconstruction order."""

    selected: tuple[KRegressionCandidate, ...]
    savings: dict[str, SavingsEstimate]
    dependency_edges: frozenset[tuple[str, str]]
    eval_order: tuple[str, ...]

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(c.target for c in self.selected)

    @property
    def total_net_bytes(self) -> float:
        return sum(e.net_bytes for e in self.savings.values())

    def __len__(self) -> int:
        return len(self.selected)


def estimate_savings(
    candidate: KRegressionCandidate, table: Table, sample: Sample
) -> SavingsEstimate:
    """Closed-form byte estimate from sample bit-widths.

    original = rows * bits(target span)/8 * encoder factor.  The auxiliary
    side charges the offset column the same way, a log2(K)-bit switch column
    when K > 1, a one-bit null flag column unless target and references are
    all non-nullable, and a per-row overhead for estimated outlier rows.
    Bit-widths cover the sampled min-max span as zig-zag integers.
    """
    tgt = table.column(candidate.target)
    pair = tgt.scaled_pair()
    if pair is None:
        raise InvalidArgument(f"{candidate.target!r} is not a numeric column")
    y, precision = pair
    n_rows = table.row_count
    idx = sample.row_indices

    tgt_null = tgt.null_bitmap[idx]
    ref_cols = [table.column(r) for r in candidate.references]
    ref_null = np.zeros(len(idx), dtype=bool)
    for col in ref_cols:
        ref_null |= col.null_bitmap[idx]

    non_null_idx = idx[~tgt_null]
    if len(non_null_idx):
        bits_target = zigzag_bitwidth(int(y[non_null_idx].min()), int(y[non_null_idx].max()))
    else:
        bits_target = 1
    original = n_rows * bits_target / 8.0 * ENCODER_FACTOR

    normal = ~tgt_null & ~ref_null
    normal_idx = idx[normal]
    if len(normal_idx):
        arrays = {}
        precisions = {}
        for col in ref_cols:
            vals, p = col.scaled_pair()
            arrays[col.name] = vals[normal_idx]
            precisions[col.name] = p
        preds = predict_scaled(candidate.models, arrays, precisions, precision, len(normal_idx))
        with np.errstate(over="ignore"):
            diffs = np.abs(y[normal_idx][None, :] - preds)
        closest = np.argmin(diffs, axis=0)
        with np.errstate(over="ignore"):
            offsets = y[normal_idx] - preds[closest, np.arange(len(normal_idx))]
        bits_offset = zigzag_bitwidth(int(offsets.min()), int(offsets.max()))
    else:
        bits_offset = 1

    aux = n_rows * bits_offset / 8.0 * ENCODER_FACTOR
    if candidate.k > 1:
        aux += n_rows * math.log2(candidate.k) / 8.0
    nullable = tgt.meta.nullable or any(c.meta.nullable for c in ref_cols)
    if nullable:
        aux += n_rows / 8.0
    if len(idx):
        outlier_rows = n_rows * float(np.count_nonzero(~tgt_null & ref_null)) / len(idx)
    else:
        outlier_rows = 0.0
    aux += outlier_rows * (OUTLIER_ROW_OVERHEAD + bits_target / 8.0)

    return SavingsEstimate(candidate, float(original), float(aux))


def _has_cycle(edges: set[tuple[str, str]]) -> bool:
    adjacency: dict[str, list[str]] = {}
    for src, dst in edges:
        adjacency.setdefault(src, []).append(dst)
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(node: str) -> bool:
        color[node] = GRAY
        for nxt in adjacency.get(node, ()):
            c = color.get(nxt, WHITE)
            if c == GRAY:
                return True
            if c == WHITE and visit(nxt):
                return True
        color[node] = BLACK
        return False

    for node in list(adjacency):
        if color.get(node, WHITE) == WHITE and visit(node):
            return True
    return False


def _chain_depths(selected: dict[str, KRegressionCandidate]) -> dict[str, int]:
    depths: dict[str, int] = {}

    def depth(name: str) -> int:
        if name in depths:
            return depths[name]
        cand = selected[name]
        d = 1 + max((depth(r) for r in cand.references if r in selected), default=0)
        depths[name] = d
        return d

    for name in selected:
        depth(name)
    return depths


def greedy_select(
    estimates: list[SavingsEstimate] | tuple[SavingsEstimate, ...],
    *,
    max_chain_depth: int = 2,
) -> FunctionPlan:
    """Pick a valid subset maximizing estimated savings, greedily.

    Candidates are visited by descending net bytes (ties: fewer references,
    then target name) and accepted when the net gain is positive, the target
    is not already virtualized, the dependency graph stays acyclic, and no
    reconstruction chain exceeds ``max_chain_depth``.
    """
    order = sorted(
        enumerate(estimates),
        key=lambda pair: (
            -pair[1].net_bytes,
            len(pair[1].candidate.references),
            pair[1].candidate.target,
            pair[0],
        ),
    )
    selected: dict[str, KRegressionCandidate] = {}
    savings: dict[str, SavingsEstimate] = {}
    accepted: list[KRegressionCandidate] = []
    edges: set[tuple[str, str]] = set()

    for _, est in order:
        cand = est.candidate
        if est.net_bytes <= 0 or cand.target in selected:
            continue
        new_edges = {(r, cand.target) for r in cand.references}
        trial = edges | new_edges
        if _has_cycle(trial):
            continue
        trial_selected = dict(selected)
        trial_selected[cand.target] = cand
        if max(_chain_depths(trial_selected).values(), default=0) > max_chain_depth:
            continue
        selected = trial_selected
        savings[cand.target] = est
        accepted.append(cand)
        edges = trial

    depths = _chain_depths(selected)
    eval_order = tuple(sorted(selected, key=lambda n: (depths[n], n)))
    return FunctionPlan(tuple(accepted), savings, frozenset(edges), eval_order)
