"""Discovery of sparse cluster-wise linear functions between numeric columns.

For each eligible target column the driller partitions sampled rows into K
clusters, fits one sparse linear model per cluster, and alternates row
reassignment with refitting until the penalized objective

    sum of squared residuals + lambda * (total number of non-zero weights)

stops improving.  Sparsity comes from greedy forward selection: a reference
column enters a cluster's model only if refitting the enlarged active set
lowers the cluster SSE by more than lambda.
"""

from __future__ import annotations

import concurrent.futures
import math
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidArgument, NoUsableRows
from .numeric import pow10
from .tables import Sample, ScaledColumn, Table, sample_rows

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

_JITTER = 1e-10


@dataclass(frozen=True)
class RegressorModel:
    """Sparse linear model for one cluster: weights over named references.

    ``weights`` maps reference-column names to strictly non-zero
    coefficients; its insertion order is the greedy selection order and is
    preserved verbatim by the codec's prediction contract.
    """

    weights: dict[str, float]
    intercept: float

    @property
    def support_size(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class KRegressionCandidate:
    """A target column together with its fitted K-cluster function."""

    target: str
    references: tuple[str, ...]
    k: int
    models: tuple[RegressorModel, ...]
    lambda_: float
    sample_max_abs_error: float
    sample_sse: float
    objective: float
    objective_trace: tuple[float, ...]
    n_fit_rows: int

    @property
    def total_support(self) -> int:
        return sum(m.support_size for m in self.models)


@dataclass
class DrillConfig:
    """Knobs for the discovery pass; defaults follow the CLI contract."""

    k_max: int = 4
    lambda_: float | None = None  # None -> error_threshold**2 * sample_size / 100
    sample_n: int = 10_000
    error_threshold: float = 1.0
    restarts: int = 3
    seed: int = 42
    max_support: int = 8
    max_iter: int = 50
    tol: float = 1e-6
    switch_penalty_per_byte: float = 1.0

    def resolved_lambda(self, sample_size: int) -> float:
        if self.lambda_ is not None:
            return self.lambda_
        return self.error_threshold**2 * sample_size / 100.0


def init_assignments(sample_size: int, k: int, seed: int) -> np.ndarray:
    """Random cluster labels in [0, k) with every cluster non-empty.

    Redraws a bounded number of times, then falls back to a round-robin
    fill; deterministic in the seed either way.
    """
    if k < 1:
        raise InvalidArgument("k must be at least 1")
    if sample_size < k:
        raise InvalidArgument(f"sample_size {sample_size} < k {k}")
    if k == 1:
        return np.zeros(sample_size, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        labels = rng.integers(0, k, size=sample_size)
        if len(np.unique(labels)) == k:
            return labels.astype(np.int64)
    return (np.arange(sample_size) % k).astype(np.int64)


def sparse_fit(
    X: np.ndarray,
    y: np.ndarray,
    lambda_: float,
    *,
    max_support: int = 8,
    column_names: list[str] | None = None,
) -> RegressorModel:
    """Greedy forward selection against the L0-penalized least-squares loss.

    Starts from the intercept-only model and repeatedly adds the single
    column whose inclusion (with an ordinary-least-squares refit of the whole
    active set) reduces the SSE the most, admitting it only if the reduction
    exceeds ``lambda_``.  Normal equations get a diagonal jitter of 1e-10
    when rank-deficient instead of failing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 1:
        raise DegenerateInput("sparse_fit needs at least one row")
    m = X.shape[1] if X.ndim == 2 else 0
    names = column_names if column_names is not None else [f"x{j}" for j in range(m)]

    ones = np.ones((n, 1))
    Xe = np.concatenate([ones, X], axis=1) if m else ones
    G = Xe.T @ Xe
    g = Xe.T @ y
    yy = float(y @ y)

    active = [0]
    theta = np.array([g[0] / G[0, 0]]) if n else np.zeros(1)
    sse = max(yy - float(theta[0] * g[0]), 0.0)
    remaining = list(range(1, m + 1))

    while remaining and len(active) - 1 < max_support:
        sse_cand, thetas = _batched_subset_sse(G, g, yy, active, remaining)
        gains = sse - sse_cand
        gains = np.where(np.isfinite(gains), gains, -np.inf)
        best = int(np.argmax(gains))
        if gains[best] <= lambda_:
            break
        j = remaining.pop(best)
        active.append(j)
        theta = thetas[best]
        sse = max(float(sse_cand[best]), 0.0)

    weights = {
        names[j - 1]: float(theta[pos])
        for pos, j in enumerate(active)
        if j != 0 and theta[pos] != 0.0
    }
    return RegressorModel(weights, float(theta[0]))


def _batched_subset_sse(
    G: np.ndarray,
    g: np.ndarray,
    yy: float,
    active: list[int],
    candidates: list[int],
) -> tuple[np.ndarray, np.ndarray]:
    """SSE and coefficients of OLS refits for active+[j], all j at once."""
    d0 = len(active)
    d = d0 + 1
    cand = np.asarray(candidates)
    nc = len(cand)
    A = np.empty((nc, d, d))
    A[:, :d0, :d0] = G[np.ix_(active, active)]
    cross = G[np.ix_(active, candidates)]  # (d0, nc)
    A[:, d0, :d0] = cross.T
    A[:, :d0, d0] = cross.T
    A[:, d0, d0] = G[cand, cand]
    b = np.empty((nc, d))
    b[:, :d0] = g[active]
    b[:, d0] = g[cand]
    rhs = b[:, :, None]
    try:
        theta = np.linalg.solve(A, rhs)[:, :, 0]
    except np.linalg.LinAlgError:
        A[:, np.arange(d), np.arange(d)] += _JITTER
        theta = np.linalg.solve(A, rhs)[:, :, 0]
    sse = yy - np.einsum("ij,ij->i", theta, b)
    return sse, theta


def fit_models(
    X: np.ndarray,
    y: np.ndarray,
    assignment: np.ndarray,
    lambda_: float,
    *,
    k: int,
    max_support: int = 8,
    column_names: list[str] | None = None,
) -> list[RegressorModel]:
    """One sparse fit per cluster; empty clusters get an intercept-only model
    at the global mean."""
    if len(assignment) != len(y):
        raise InvalidArgument("assignment length does not match rows")
    global_mean = float(np.mean(y)) if len(y) else 0.0
    models: list[RegressorModel] = []
    for c in range(k):
        rows = assignment == c
        if not rows.any():
            models.append(RegressorModel({}, global_mean))
            continue
        models.append(
            sparse_fit(
                X[rows],
                y[rows],
                lambda_,
                max_support=max_support,
                column_names=column_names,
            )
        )
    return models


def _predict_one(model: RegressorModel, X: np.ndarray, pos: dict[str, int]) -> np.ndarray:
    acc = np.zeros(X.shape[0])
    for name, w in model.weights.items():
        acc = acc + w * X[:, pos[name]]
    return acc + model.intercept


def _predictions(
    models: list[RegressorModel] | tuple[RegressorModel, ...],
    X: np.ndarray,
    column_names: list[str],
) -> np.ndarray:
    """(K, n) matrix of per-model predictions on de-scaled values."""
    pos = {name: j for j, name in enumerate(column_names)}
    out = np.empty((len(models), X.shape[0]))
    for i, model in enumerate(models):
        out[i] = _predict_one(model, X, pos)
    return out


def reassign(
    X: np.ndarray,
    y: np.ndarray,
    models: list[RegressorModel] | tuple[RegressorModel, ...],
    *,
    column_names: list[str] | None = None,
) -> np.ndarray:
    """Assign each row to the model with the smallest squared residual.

    Ties break toward the lowest cluster id.
    """
    if not models:
        raise InvalidArgument("reassign needs at least one model")
    names = column_names if column_names is not None else [f"x{j}" for j in range(X.shape[1])]
    preds = _predictions(models, X, names)
    res2 = (y[None, :] - preds) ** 2
    return np.argmin(res2, axis=0).astype(np.int64)


def _objective(
    X: np.ndarray,
    y: np.ndarray,
    labels: np.ndarray,
    models: list[RegressorModel] | tuple[RegressorModel, ...],
    lambda_: float,
    column_names: list[str],
) -> tuple[float, np.ndarray]:
    preds = _predictions(models, X, column_names)
    chosen = preds[labels, np.arange(len(y))]
    residuals = y - chosen
    sse = float(residuals @ residuals)
    support = sum(m.support_size for m in models)
    return sse + lambda_ * support, residuals


def k_regression(
    table: Table,
    sample: Sample,
    target: str,
    k: int,
    lambda_: float,
    *,
    max_iter: int = 50,
    tol: float = 1e-6,
    seed: int = 0,
    max_support: int = 8,
    references: list[str] | None = None,
) -> KRegressionCandidate:
    """Alternating assignment/refit for one target column on a row sample.

    Sample rows with a null target or a null in any candidate reference are
    excluded from fitting.  The objective trace it returns is non-increasing:
    a refit that would worsen the penalized objective is discarded and the
    alternation stops at the previous state.
    """
    ref_names = references if references is not None else eligible_references(table, target)
    tgt = table.column(target)
    tgt_pair = tgt.scaled_pair()
    if tgt_pair is None:
        raise InvalidArgument(f"target {target!r} is not a numeric column")

    idx = sample.row_indices
    usable = ~tgt.null_bitmap[idx]
    for name in ref_names:
        usable &= ~table.column(name).null_bitmap[idx]
    fit_idx = idx[usable]
    n_fit = len(fit_idx)
    if n_fit == 0:
        raise NoUsableRows(f"no usable sample rows for target {target!r}")
    if n_fit < k:
        raise InvalidArgument(f"{n_fit} usable rows < k={k}")

    y = tgt_pair[0][fit_idx] / pow10(tgt_pair[1])
    X = np.empty((n_fit, len(ref_names)))
    for j, name in enumerate(ref_names):
        pair = table.column(name).scaled_pair()
        if pair is None:
            raise InvalidArgument(f"reference {name!r} is not a numeric column")
        X[:, j] = pair[0][fit_idx] / pow10(pair[1])

    rows = np.arange(n_fit)
    pos = {name: j for j, name in enumerate(ref_names)}
    global_mean = float(np.mean(y))

    def fit_cluster(mask: np.ndarray) -> RegressorModel:
        if not mask.any():
            return RegressorModel({}, global_mean)
        return sparse_fit(
            X[mask], y[mask], lambda_, max_support=max_support, column_names=ref_names
        )

    labels = init_assignments(n_fit, k, seed)
    masks = [labels == c for c in range(k)]
    models = [fit_cluster(m) for m in masks]
    preds = _predictions(models, X, ref_names)
    support = sum(m.support_size for m in models)
    residuals = y - preds[labels, rows]
    objective = float(residuals @ residuals) + lambda_ * support
    trace = [objective]

    for _ in range(max_iter):
        res2 = (y[None, :] - preds) ** 2
        new_labels = np.argmin(res2, axis=0)
        mid_objective = float(res2[new_labels, rows].sum()) + lambda_ * support
        new_masks = [new_labels == c for c in range(k)]
        # Clusters whose row sets did not move keep their fitted model.
        changed = [c for c in range(k) if not np.array_equal(new_masks[c], masks[c])]
        new_models = list(models)
        new_preds = preds if not changed else preds.copy()
        for c in changed:
            new_models[c] = fit_cluster(new_masks[c])
            new_preds[c] = _predict_one(new_models[c], X, pos)
        new_support = sum(m.support_size for m in new_models)
        new_res = y - new_preds[new_labels, rows]
        new_objective = float(new_res @ new_res) + lambda_ * new_support
        stalled = False
        if new_objective > mid_objective:
            # A greedy refit is not guaranteed to dominate the incumbent
            # models; keep the better state and stop.
            new_models, new_preds, new_support = models, preds, support
            new_objective = mid_objective
            stalled = True
        unchanged = bool(np.array_equal(new_labels, labels))
        labels, models, preds, support = new_labels, new_models, new_preds, new_support
        masks = new_masks
        trace.append(new_objective)
        improved = objective - new_objective
        converged = objective == 0.0 or improved <= tol * max(abs(objective), 1e-30)
        objective = new_objective
        if stalled or unchanged or converged:
            break

    res2 = (y[None, :] - preds) ** 2
    labels = np.argmin(res2, axis=0)
    residuals = y - preds[labels, rows]
    support_union = {name for m in models for name in m.weights}
    refs = tuple(name for name in ref_names if name in support_union)
    return KRegressionCandidate(
        target=target,
        references=refs,
        k=k,
        models=tuple(models),
        lambda_=lambda_,
        sample_max_abs_error=float(np.max(np.abs(residuals))) if n_fit else 0.0,
        sample_sse=float(residuals @ residuals),
        objective=objective,
        objective_trace=tuple(trace),
        n_fit_rows=n_fit,
    )


def eligible_targets(table: Table, sample: Sample | None = None) -> list[str]:
    """Integer/decimal columns with at least one usable value."""
    out = []
    for col in table.columns:
        if not col.is_target_eligible():
            continue
        if _all_null_on(col, sample):
            continue
        out.append(col.name)
    return out


def eligible_references(table: Table, target: str, sample: Sample | None = None) -> list[str]:
    """Numeric columns other than the target that can back a regression.

    Columns whose sampled rows are entirely null are dropped from the pool:
    keeping them would exclude every fitting row.
    """
    out = []
    for col in table.columns:
        if col.name == target or col.scaled_pair() is None:
            continue
        if _all_null_on(col, sample):
            continue
        out.append(col.name)
    return out


def _all_null_on(col: ScaledColumn, sample: Sample | None) -> bool:
    if sample is None:
        return bool(col.null_bitmap.all()) and len(col) > 0
    if len(sample) == 0:
        return False
    return bool(col.null_bitmap[sample.row_indices].all())


def _restart_seed(seed: int, target: str, k: int, restart: int) -> int:
    return zlib.crc32(f"{seed}|{target}|{k}|{restart}".encode())


def _switch_penalty(config: DrillConfig, n_fit: int, k: int) -> float:
    if k <= 1:
        return 0.0
    return config.switch_penalty_per_byte * n_fit * math.log2(k) / 8.0


def _drill_target(
    table: Table,
    sample: Sample,
    target: str,
    config: DrillConfig,
    lambda_: float,
) -> KRegressionCandidate | None:
    refs = eligible_references(table, target, sample)
    pair = table.column(target).scaled_pair()
    exact_error = 0.5 / pow10(pair[1]) if pair else 0.0
    best: KRegressionCandidate | None = None
    best_score = math.inf
    for k in range(1, config.k_max + 1):
        restarts = 1 if k == 1 else max(1, config.restarts)
        exact = False
        for r in range(restarts):
            try:
                cand = k_regression(
                    table,
                    sample,
                    target,
                    k,
                    lambda_,
                    max_iter=config.max_iter,
                    tol=config.tol,
                    seed=_restart_seed(config.seed, target, k, r),
                    max_support=config.max_support,
                    references=refs,
                )
            except (NoUsableRows, InvalidArgument):
                continue
            score = cand.objective + _switch_penalty(config, cand.n_fit_rows, k)
            if score < best_score:
                best, best_score = cand, score
            if cand.sample_max_abs_error < exact_error:
                exact = True
        if exact:
            # Offsets already round to zero at storage precision; more
            # clusters can only add support and switch penalties.
            break
    if best is None:
        return None
    if best.sample_max_abs_error >= config.error_threshold:
        return None
    if not any(m.support_size > 0 for m in best.models):
        return None
    return best


def drill(table: Table, config: DrillConfig | None = None) -> list[KRegressionCandidate]:
    """Search every eligible target column for a usable K-regression.

    Sweeps K in 1..k_max with ``config.restarts`` random restarts each, keeps
    the best penalized objective per target (plus a per-byte switch-column
    penalty for K > 1), and emits only candidates whose max absolute sample
    residual is under the error threshold.  Results follow table column
    order regardless of worker scheduling.
    """
    config = config or DrillConfig()
    sample = sample_rows(table, config.sample_n, config.seed)
    if len(sample) == 0:
        return []
    lambda_ = config.resolved_lambda(len(sample))
    targets = eligible_targets(table, sample)

    workers = _worker_count()
    results: dict[str, KRegressionCandidate | None] = {}
    if workers > 1 and len(targets) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                t: pool.submit(_drill_target, table, sample, t, config, lambda_)
                for t in targets
            }
            results = {t: f.result() for t, f in futures.items()}
    else:
        results = {t: _drill_target(table, sample, t, config, lambda_) for t in targets}

    return [results[t] for t in targets if results[t] is not None]


def _worker_count() -> int:
    raw = os.environ.get("VIRTUAL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
