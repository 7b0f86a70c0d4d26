"""Prediction, metrics, cross-validation, and the sparsity harness.

Folds and sparsity repeats are independent jobs with their own random
streams derived from (seed, job), so results do not depend on whether
they run sequentially or on a thread pool.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .datamodel import FEATURE, MAIN, DatasetSpec, HmfModel, ObservedMatrix
from .errors import DataError
from .gibbs import (
    INIT_STREAM,
    SAMPLING_STREAM,
    DrawMode,
    PosteriorSummary,
    run,
)
from .initialization import InitStrategy, initialise_model
from .sampling import RngStream

__all__ = [
    "FoldPlan",
    "ExperimentResult",
    "predict",
    "predicted_matrix",
    "mse",
    "make_folds",
    "cross_validate",
    "sparsity_experiment",
    "np_nmf_baseline",
]

FoldMode = Literal["in_matrix", "out_of_matrix"]

# Stream id for train/test splitting (0 and 1 belong to init/sampling).
SPLIT_STREAM = 2

# Bounded retries when a sparsity split leaves an empty row or column.
MAX_SPLIT_RETRIES = 100


@dataclass
class FoldPlan:
    """Exact disjoint partition of observed cells (or rows) into folds."""

    mode: FoldMode
    folds: int
    seed: int
    cells: np.ndarray | None  # (n, 2) observed cells, in_matrix only
    assignments: np.ndarray  # fold index per cell or per row

    def members(self, fold: int) -> np.ndarray:
        """Cell array (in_matrix) or row indices (out_of_matrix) of a fold."""
        picked = self.assignments == fold
        if self.mode == "in_matrix":
            return self.cells[picked]
        return np.flatnonzero(picked)


@dataclass
class ExperimentResult:
    """Per-fold errors plus, for sparsity sweeps, the per-fraction series."""

    fold_mse: list[float]
    mean_mse: float
    series: list[tuple[float, float, float]] = field(default_factory=list)


def predicted_matrix(summary: PosteriorSummary, ds: DatasetSpec) -> np.ndarray:
    """Reconstruction of a dataset from posterior-mean factors."""
    f = summary.factor_means[ds.row_entity]
    s = summary.private_means[ds.name]
    if ds.kind == FEATURE:
        return f @ s.T
    other = ds.col_entity if ds.kind == MAIN else ds.row_entity
    return f @ s @ summary.factor_means[other].T


def predict(
    summary: PosteriorSummary, ds: DatasetSpec, cells: np.ndarray
) -> np.ndarray:
    """Predictions at (row, col) cells from posterior-mean factors."""
    cells = np.asarray(cells, dtype=int)
    if cells.size == 0:
        return np.empty(0)
    rows, cols = cells[:, 0], cells[:, 1]
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= ds.data.rows or cols.max() >= ds.data.cols:
        raise DataError(f"cell out of bounds for dataset {ds.name!r}")
    full = predicted_matrix(summary, ds)
    return full[rows, cols]


def mse(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Mean squared difference of two equal-length vectors."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise DataError("mse needs two equal-length nonempty vectors")
    diff = predicted - actual
    return float(np.mean(diff * diff))


def make_folds(ds: DatasetSpec, mode: FoldMode, folds: int, seed: int) -> FoldPlan:
    """Uniform random partition of observed cells or rows, fold sizes
    differing by at most one; deterministic in the seed."""
    if folds < 2:
        raise DataError("need at least 2 folds")
    gen = RngStream(seed, SPLIT_STREAM).generator
    if mode == "in_matrix":
        cells = np.argwhere(ds.data.mask)
        n = cells.shape[0]
        if n < folds:
            raise DataError(f"only {n} observed cells for {folds} folds")
        order = gen.permutation(n)
        assignments = np.empty(n, dtype=int)
        for f, chunk in enumerate(np.array_split(order, folds)):
            assignments[chunk] = f
        return FoldPlan(mode=mode, folds=folds, seed=seed, cells=cells, assignments=assignments)
    if mode == "out_of_matrix":
        n = ds.data.rows
        if n < folds:
            raise DataError(f"only {n} rows for {folds} folds")
        order = gen.permutation(n)
        assignments = np.empty(n, dtype=int)
        for f, chunk in enumerate(np.array_split(order, folds)):
            assignments[chunk] = f
        return FoldPlan(mode=mode, folds=folds, seed=seed, cells=None, assignments=assignments)
    raise DataError(f"unknown fold mode {mode!r}")


def _fit_and_score(
    model: HmfModel,
    target_name: str,
    heldout_cells: np.ndarray,
    strategy: InitStrategy,
    draw_mode: DrawMode,
    job: int,
    label: str,
) -> float:
    """Mask held-out cells in a cloned model, refit from scratch, and
    return the MSE at those cells against the original values."""
    clone = model.copy()
    target = clone.dataset(target_name)
    actual = target.data.values[heldout_cells[:, 0], heldout_cells[:, 1]].copy()
    target.data.mask[heldout_cells[:, 0], heldout_cells[:, 1]] = False
    if target.data.n_observed == 0:
        raise DataError(f"{label} empties the mask of dataset {target_name!r}")

    seed = model.schedule.seed
    initialise_model(clone, strategy, RngStream(seed, INIT_STREAM).child(job))
    summary = run(clone, draw_mode, rng=RngStream(seed, SAMPLING_STREAM).child(job))
    return mse(predict(summary, target, heldout_cells), actual)


def _run_jobs(jobs, threads: int) -> list[float]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: j(), jobs))
    return [j() for j in jobs]


def cross_validate(
    model: HmfModel,
    target: DatasetSpec,
    plan: FoldPlan,
    strategy: InitStrategy,
    draw_mode: DrawMode = "elementwise",
    threads: int = 1,
) -> ExperimentResult:
    """Refit the model once per fold with the fold's cells (or rows)
    hidden from the target dataset, scoring predictions against the
    held-back values.

    Out-of-matrix folds hide entire rows of the target only; other
    datasets keep observing those rows, which is what makes the
    prediction possible. Every fold re-initialises from scratch (warm
    starts would leak fold information through the state).
    """
    expected = target.data.n_observed if plan.mode == "in_matrix" else target.data.rows
    if plan.assignments.shape[0] != expected:
        raise DataError("fold plan does not match the target dataset")

    def job(f: int):
        def go() -> float:
            if plan.mode == "in_matrix":
                cells = plan.members(f)
            else:
                rows = plan.members(f)
                sub = target.data.mask[rows, :]
                cells = np.argwhere(sub)
                if cells.size == 0:
                    raise DataError(f"fold {f} holds out rows with no observed cells")
                cells = np.column_stack([rows[cells[:, 0]], cells[:, 1]])
            if cells.size == 0:
                raise DataError(f"fold {f} contains no held-out cells")
            return _fit_and_score(
                model, target.name, cells, strategy, draw_mode, f, f"fold {f}"
            )

        return go

    fold_mse = _run_jobs([job(f) for f in range(plan.folds)], threads)
    return ExperimentResult(fold_mse=fold_mse, mean_mse=float(np.mean(fold_mse)))


def split_train_test(
    ds: DatasetSpec, fraction: float, rng: RngStream
) -> np.ndarray:
    """Pick a random test set of ``fraction`` of the observed cells such
    that every row and column keeps at least one training entry."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie strictly inside (0, 1), got {fraction}")
    cells = np.argwhere(ds.data.mask)
    n = cells.shape[0]
    n_test = int(round(fraction * n))
    if n_test < 1 or n_test >= n:
        raise DataError(f"fraction {fraction} leaves no usable train/test split")
    for _ in range(MAX_SPLIT_RETRIES):
        picked = rng.generator.permutation(n)[:n_test]
        test_cells = cells[picked]
        train_mask = ds.data.mask.copy()
        train_mask[test_cells[:, 0], test_cells[:, 1]] = False
        if train_mask.any(axis=1).all() and train_mask.any(axis=0).all():
            return test_cells
    raise DataError(
        f"could not find a {fraction:.2f} split keeping every row and column "
        f"observed after {MAX_SPLIT_RETRIES} tries"
    )


def sparsity_experiment(
    model: HmfModel,
    target: DatasetSpec,
    fractions: list[float],
    repeats: int,
    strategy: InitStrategy,
    draw_mode: DrawMode = "elementwise",
    threads: int = 1,
) -> ExperimentResult:
    """Hold out each fraction of the target's observed entries across
    ``repeats`` random splits, reporting mean and standard deviation of
    the test MSE per fraction."""
    if repeats < 1:
        raise DataError("repeats must be at least 1")
    seed = model.schedule.seed

    def job(fi: int, ri: int):
        def go() -> float:
            jid = fi * repeats + ri
            test_cells = split_train_test(
                target, fractions[fi], RngStream(seed, SPLIT_STREAM).child(jid)
            )
            return _fit_and_score(
                model, target.name, test_cells, strategy, draw_mode, jid,
                f"split (fraction={fractions[fi]}, repeat={ri})",
            )

        return go

    jobs = [job(fi, ri) for fi in range(len(fractions)) for ri in range(repeats)]
    flat = _run_jobs(jobs, threads)
    series = []
    for fi, fraction in enumerate(fractions):
        chunk = np.array(flat[fi * repeats : (fi + 1) * repeats])
        sd = float(chunk.std(ddof=1)) if repeats > 1 else 0.0
        series.append((float(fraction), float(chunk.mean()), sd))
    return ExperimentResult(fold_mse=list(map(float, flat)), mean_mse=float(np.mean(flat)), series=series)


def masked_squared_error(data: ObservedMatrix, f: np.ndarray, g: np.ndarray) -> float:
    """Training objective of the multiplicative-update baseline."""
    diff = np.where(data.mask, data.values - f @ g.T, 0.0)
    return float(np.sum(diff * diff))


def np_nmf_baseline(
    data: ObservedMatrix,
    K: int,
    iterations: int,
    seed: int,
    objective_sink: list[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mask-aware multiplicative-update NMF (the non-probabilistic
    baseline): alternating Lee-Seung updates on the masked squared error.

    Entries whose update denominator is exactly zero (no observed data
    touches them) are left unchanged; tiny denominators are floored at
    1e-12. The masked training objective is non-increasing across
    iterations up to that flooring.
    """
    observed = data.values[data.mask]
    if observed.size and observed.min() < 0:
        raise DataError("multiplicative updates require nonnegative observed entries")
    gen = RngStream(seed, 0).generator
    i_rows, j_cols = data.values.shape
    f = gen.uniform(size=(i_rows, K))
    g = gen.uniform(size=(j_cols, K))
    m = data.mask.astype(float)
    d0 = data.observed_values()

    def ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = num / np.maximum(den, 1e-12)
        out[den == 0.0] = 1.0
        return out

    for _ in range(iterations):
        recon = m * (f @ g.T)
        f *= ratio(d0 @ g, recon @ g)
        recon = m * (f @ g.T)
        g *= ratio(d0.T @ f, recon.T @ f)
        if objective_sink is not None:
            objective_sink.append(masked_squared_error(data, f, g))
    return f, g
