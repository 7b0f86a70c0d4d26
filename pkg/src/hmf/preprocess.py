"""Data conditioning and similarity-kernel construction.

All operations are pure: they return new matrices and never read or
write mask-false cells except to pass them through unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import SIMILARITY, DatasetSpec, EntityType, ObservedMatrix
from .errors import ConfigurationError, DataError

__all__ = [
    "KernelMatrix",
    "cap",
    "rescale_rows_unit",
    "standardise_columns",
    "jaccard_kernel",
    "gaussian_kernel",
    "kernel_to_similarity_dataset",
]


@dataclass
class KernelMatrix:
    """Square pairwise-similarity grid; mask-false marks undefined pairs."""

    values: np.ndarray
    mask: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


def cap(matrix: ObservedMatrix, ceiling: float) -> ObservedMatrix:
    """Clip observed entries from above; masked cells pass through."""
    if not np.isfinite(ceiling):
        raise DataError(f"ceiling must be finite, got {ceiling!r}")
    values = np.where(matrix.mask, np.minimum(matrix.values, ceiling), matrix.values)
    return ObservedMatrix(values=values, mask=matrix.mask.copy())


def rescale_rows_unit(matrix: ObservedMatrix) -> ObservedMatrix:
    """Affinely map each row's observed values onto [0, 1].

    Rows whose observed values are all equal map to 0.5; a row with no
    observed entries is an error.
    """
    values = matrix.values.copy()
    for i in range(matrix.rows):
        row_mask = matrix.mask[i]
        if not row_mask.any():
            raise DataError(f"row {i} has no observed entries to rescale")
        observed = matrix.values[i, row_mask]
        lo, hi = observed.min(), observed.max()
        if hi > lo:
            values[i, row_mask] = (observed - lo) / (hi - lo)
        else:
            values[i, row_mask] = 0.5
    return ObservedMatrix(values=values, mask=matrix.mask.copy())


def standardise_columns(matrix: ObservedMatrix) -> ObservedMatrix:
    """Centre each column and scale to unit population standard deviation.

    Zero-variance columns are centred (left at 0) with a RuntimeWarning;
    scaling uses the population rather than sample deviation so repeated
    runs are reproducible against one fixed convention.
    """
    values = matrix.values.copy()
    for j in range(matrix.cols):
        col_mask = matrix.mask[:, j]
        if not col_mask.any():
            warnings.warn(f"column {j} has no observed entries", RuntimeWarning, stacklevel=2)
            continue
        observed = matrix.values[col_mask, j]
        mean = observed.mean()
        sd = observed.std()
        if sd > 0:
            values[col_mask, j] = (observed - mean) / sd
        else:
            values[col_mask, j] = 0.0
            warnings.warn(f"column {j} has zero variance", RuntimeWarning, stacklevel=2)
    return ObservedMatrix(values=values, mask=matrix.mask.copy())


def jaccard_kernel(binary_rows: ObservedMatrix) -> KernelMatrix:
    """Pairwise Jaccard similarity over columns observed for both rows.

    Two rows that are all-zero over their co-observed columns count as
    identical (similarity 1); a pair with no co-observed columns gets
    mask-false. Observed entries must be exactly 0 or 1.
    """
    bad = matrix_nonbinary_cell(binary_rows)
    if bad is not None:
        raise DataError(f"non-binary observed value at cell {bad}")
    a = binary_rows.observed_values()
    m = binary_rows.mask.astype(float)
    inter = a @ a.T
    union = a @ m.T + m @ a.T - inter
    co_observed = m @ m.T
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    mask = co_observed > 0
    values = np.where(mask, values, 0.0)
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, np.where(np.diag(mask), 1.0, 0.0))
    return KernelMatrix(values=values, mask=mask)


def matrix_nonbinary_cell(matrix: ObservedMatrix) -> tuple[int, int] | None:
    """First observed cell whose value is not exactly 0 or 1, if any."""
    ok = (matrix.values == 0.0) | (matrix.values == 1.0) | ~matrix.mask
    if ok.all():
        return None
    i, j = np.argwhere(~ok)[0]
    return int(i), int(j)


def gaussian_kernel(rows: ObservedMatrix, sigma2: float | None = None) -> KernelMatrix:
    """Pairwise RBF similarity exp(-||x_i - x_j||^2 / (2 sigma2)).

    Requires fully observed rows (standardise or impute upstream first);
    sigma2 defaults to the feature count.
    """
    if not rows.mask.all():
        raise DataError("gaussian kernel requires fully observed input rows")
    if sigma2 is None:
        sigma2 = float(rows.cols)
    if not sigma2 > 0:
        raise DataError(f"sigma2 must be positive, got {sigma2!r}")
    x = rows.values
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    d2 = np.maximum(0.5 * (d2 + d2.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    values = np.exp(-d2 / (2.0 * sigma2))
    return KernelMatrix(values=values, mask=np.ones_like(values, dtype=bool))


def kernel_to_similarity_dataset(
    kernel: KernelMatrix,
    entity: EntityType,
    name: str = "kernel",
    importance: float = 1.0,
) -> DatasetSpec:
    """Wrap a kernel as a similarity dataset with the diagonal masked out."""
    if kernel.size != entity.instances:
        raise ConfigurationError(
            f"kernel size {kernel.size} != {entity.instances} instances of "
            f"entity {entity.name!r}"
        )
    mask = kernel.mask.copy()
    np.fill_diagonal(mask, False)
    return DatasetSpec(
        name=name,
        kind=SIMILARITY,
        row_entity=entity.name,
        data=ObservedMatrix(values=kernel.values.copy(), mask=mask),
        private_factor=np.zeros((entity.factors, entity.factors)),
        importance=importance,
    )
