"""Initialisation strategies applied to a model before sampling.

Shared factors can start at the prior expectation, a prior draw, or a
K-means indicator matrix; private factors at the expectation, a draw, or
a pseudo-inverse least-squares fit. ARD vectors and noise precisions
always start at their prior expectations. The default pairing is
(kmeans, leastsquares), which generally converges fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .datamodel import FEATURE, MAIN, SIMILARITY, DatasetSpec, EntityType, HmfModel
from .errors import ConfigurationError
from .gibbs import INIT_STREAM
from .sampling import RngStream

__all__ = [
    "InitStrategy",
    "initialise_model",
    "init_expectation",
    "init_random",
    "init_kmeans",
    "init_least_squares",
]

# Indicator offset keeping truncated-normal posteriors well-conditioned
# after a K-means start.
KMEANS_OFFSET = 0.2

# Exactly-zero real-valued blocks collapse several posterior precisions
# on the first sweep, so gaussian expectations get a tiny jiggle.
EXPECTATION_JITTER = 1e-4

# Positivity floor applied to exponential-prior blocks after least squares.
LEAST_SQUARES_FLOOR = 1e-6


@dataclass(frozen=True)
class InitStrategy:
    """Named initialisation pairing for shared and private factors."""

    shared: Literal["expectation", "random", "kmeans"] = "kmeans"
    private: Literal["expectation", "random", "leastsquares"] = "leastsquares"


def _default_rng(model: HmfModel) -> RngStream:
    return RngStream(model.schedule.seed, INIT_STREAM)


def _expectation_state(model: HmfModel) -> None:
    hyper = model.hyper
    for entity in model.entity_types:
        entity.ard[:] = hyper.alpha_0 / hyper.beta_0
    for ds in model.datasets:
        ds.noise_precision = hyper.alpha_tau / hyper.beta_tau


def _expectation_block(shape, rates, exponential: bool, rng: RngStream) -> np.ndarray:
    if exponential:
        return np.broadcast_to(1.0 / np.asarray(rates, dtype=float), shape).copy()
    return rng.generator.uniform(-EXPECTATION_JITTER, EXPECTATION_JITTER, size=shape)


def _random_block(shape, rates, exponential: bool, rng: RngStream) -> np.ndarray:
    rates = np.broadcast_to(np.asarray(rates, dtype=float), shape)
    if exponential:
        return rng.generator.exponential(1.0 / rates)
    return rng.generator.standard_normal(shape) / np.sqrt(rates)


def _private_rates(ds: DatasetSpec, model: HmfModel):
    """Prior rates for the private block: ARD columns for loadings, a
    scalar for core matrices."""
    if ds.kind == FEATURE:
        return model.entity(ds.row_entity).ard[None, :]
    return ds.effective_lambda(model.hyper.lambda_private_default)


def _apply_cp(ds: DatasetSpec) -> None:
    if ds.cp_constrained:
        diag = np.diag(ds.private_factor).copy()
        ds.private_factor[:] = 0.0
        np.fill_diagonal(ds.private_factor, diag)


def init_expectation(model: HmfModel, rng: RngStream | None = None) -> HmfModel:
    """Set every variable to its prior mean (gaussian blocks jiggled)."""
    rng = rng or _default_rng(model)
    _expectation_state(model)
    for entity in model.entity_types:
        entity.F[:] = _expectation_block(
            entity.F.shape, entity.ard[None, :], entity.nonnegative, rng
        )
    for ds in model.datasets:
        ds.private_factor[:] = _expectation_block(
            ds.private_factor.shape,
            _private_rates(ds, model),
            ds.private_prior == "exponential",
            rng,
        )
        _apply_cp(ds)
    return model


def init_random(model: HmfModel, rng: RngStream) -> HmfModel:
    """Draw every factor entry once from its prior (ARD/noise stay at
    expectation)."""
    _expectation_state(model)
    for entity in model.entity_types:
        entity.F[:] = _random_block(
            entity.F.shape, entity.ard[None, :], entity.nonnegative, rng
        )
    for ds in model.datasets:
        ds.private_factor[:] = _random_block(
            ds.private_factor.shape,
            _private_rates(ds, model),
            ds.private_prior == "exponential",
            rng,
        )
        _apply_cp(ds)
    return model


def _mean_imputed(ds: DatasetSpec) -> np.ndarray:
    """Dataset values with unobserved cells replaced by the observed mean.

    Imputation feeds clustering and least squares only; imputed values
    never reach a Gibbs update.
    """
    observed = ds.data.values[ds.data.mask]
    fill = float(observed.mean()) if observed.size else 0.0
    return np.where(ds.data.mask, ds.data.values, fill)


def _entity_feature_rows(entity: EntityType, model: HmfModel) -> np.ndarray:
    blocks = []
    for ds in model.datasets:
        if ds.kind == MAIN and ds.row_entity == entity.name:
            blocks.append(_mean_imputed(ds))
        if ds.kind == MAIN and ds.col_entity == entity.name:
            blocks.append(_mean_imputed(ds).T)
        if ds.kind == FEATURE and ds.row_entity == entity.name:
            blocks.append(_mean_imputed(ds))
        if ds.kind == SIMILARITY and ds.row_entity == entity.name:
            blocks.append(_mean_imputed(ds))
    if not blocks:
        raise ConfigurationError(
            f"entity {entity.name!r} has no linked dataset to cluster on"
        )
    return np.concatenate(blocks, axis=1)


def _kmeans_assign(x: np.ndarray, k: int, rng: RngStream, max_iter: int = 100) -> np.ndarray:
    """Plain Lloyd clustering; empty clusters re-seed at the point
    farthest from its assigned centroid."""
    n = x.shape[0]
    gen = rng.generator
    start = gen.choice(n, size=k, replace=n < k)
    centroids = x[start].astype(float)
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        farthest = int(d2[np.arange(n), new_assign].argmax())
        moved = False
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                centroids[c] = x[farthest]
                moved = True
        if not moved and np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return assign


def init_kmeans(entity: EntityType, model: HmfModel, rng: RngStream) -> np.ndarray:
    """Cluster the entity's concatenated dataset rows into K_t groups and
    set F to the shifted indicator matrix (entries 0.2 or 1.2)."""
    rows = _entity_feature_rows(entity, model)
    assign = _kmeans_assign(rows, entity.factors, rng)
    f = np.full((entity.instances, entity.factors), KMEANS_OFFSET)
    f[np.arange(entity.instances), assign] += 1.0
    entity.F[:] = f
    return entity.F


def init_least_squares(ds: DatasetSpec, model: HmfModel) -> np.ndarray:
    """Fit the private factor by Moore-Penrose pseudo-inverse, given the
    already-initialised shared factors; exponential blocks are floored."""
    x = _mean_imputed(ds)
    row = model.entity(ds.row_entity)
    if ds.kind == MAIN:
        col = model.entity(ds.col_entity)
        fitted = np.linalg.pinv(row.F) @ x @ np.linalg.pinv(col.F.T)
    elif ds.kind == SIMILARITY:
        fitted = np.linalg.pinv(row.F) @ x @ np.linalg.pinv(row.F.T)
    else:
        fitted = (np.linalg.pinv(row.F) @ x).T
    ds.private_factor[:] = fitted
    _apply_cp(ds)
    if ds.private_prior == "exponential":
        if ds.cp_constrained:
            diag = np.maximum(np.diag(ds.private_factor), LEAST_SQUARES_FLOOR)
            np.fill_diagonal(ds.private_factor, diag)
        else:
            np.maximum(ds.private_factor, LEAST_SQUARES_FLOOR, out=ds.private_factor)
    return ds.private_factor


def initialise_model(
    model: HmfModel, strategy: InitStrategy, rng: RngStream | None = None
) -> HmfModel:
    """Apply one of the strategy pairings to the whole model."""
    rng = rng or _default_rng(model)
    _expectation_state(model)

    if strategy.shared == "expectation":
        for entity in model.entity_types:
            entity.F[:] = _expectation_block(
                entity.F.shape, entity.ard[None, :], entity.nonnegative, rng
            )
    elif strategy.shared == "random":
        for entity in model.entity_types:
            entity.F[:] = _random_block(
                entity.F.shape, entity.ard[None, :], entity.nonnegative, rng
            )
    elif strategy.shared == "kmeans":
        for entity in model.entity_types:
            init_kmeans(entity, model, rng)
    else:
        raise ConfigurationError(f"unknown shared init {strategy.shared!r}")

    if strategy.private == "leastsquares":
        for ds in model.datasets:
            init_least_squares(ds, model)
    elif strategy.private in ("expectation", "random"):
        block = _expectation_block if strategy.private == "expectation" else _random_block
        for ds in model.datasets:
            ds.private_factor[:] = block(
                ds.private_factor.shape,
                _private_rates(ds, model),
                ds.private_prior == "exponential",
                rng,
            )
            _apply_cp(ds)
    else:
        raise ConfigurationError(f"unknown private init {strategy.private!r}")
    return model
