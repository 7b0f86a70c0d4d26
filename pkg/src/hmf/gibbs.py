"""The joint Gibbs sampler over all entity and dataset factor blocks.

Every conditional posterior is exposed twice: as a pure parameter
computation (``*_params`` functions, used by the tests to cross-check
against naive loop transcriptions) and as a drawing update that mutates
the model in place. One :func:`sweep` resamples, in order: all noise
precisions, all ARD vectors, all shared factor matrices (entity
declaration order), then all private factors (dataset declaration order).

Single-matrix factorisation models (Bayesian MF/NMF/semi-NMF and their
tri-factorisation and similarity counterparts) are delivered as
degenerate one-dataset configurations of the same sweep, not as separate
code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .datamodel import (
    FEATURE,
    MAIN,
    SIMILARITY,
    DatasetSpec,
    EntityType,
    HmfModel,
    derive_index_sets,
    require_valid,
)
from .errors import NumericalError
from .sampling import (
    RngStream,
    sample_gamma,
    sample_multivariate_normal,
    sample_normal_vector,
    sample_truncated_normal_vector,
)

__all__ = [
    "DrawMode",
    "PosteriorSummary",
    "Diagnostics",
    "reconstruction",
    "masked_residual",
    "noise_params",
    "ard_params",
    "shared_column_params",
    "shared_row_params",
    "private_column_params",
    "private_entry_params",
    "private_row_params",
    "update_noise",
    "update_ard",
    "update_shared_factor",
    "update_private_factor",
    "sweep",
    "run",
    "log_joint",
]

DrawMode = Literal["elementwise", "rowwise"]

# Posterior precisions below this are clamped before inversion; exact
# zeros instead fall back to a prior draw (the conditional *is* the prior
# when nothing observed touches the entry).
PRECISION_FLOOR = 1e-14

# Stream ids carved out of the schedule seed.
INIT_STREAM = 0
SAMPLING_STREAM = 1


@dataclass
class Diagnostics:
    """Convergence/robustness counters surfaced to eval and the CLI."""

    log_joint_trace: list[float] = field(default_factory=list)
    clamp_count: int = 0
    prior_fallback_count: int = 0


@dataclass
class PosteriorSummary:
    """Running means over retained draws, keyed by entity/dataset name."""

    factor_means: dict[str, np.ndarray]
    private_means: dict[str, np.ndarray]
    noise_means: dict[str, float]
    ard_means: dict[str, np.ndarray]
    retained_draws: int


def _factor_pair(ds: DatasetSpec, model: HmfModel) -> tuple[np.ndarray, np.ndarray | None]:
    """Row factor and (for tri-factorisations) column factor of a dataset."""
    row = model.entity(ds.row_entity).F
    if ds.kind == MAIN:
        return row, model.entity(ds.col_entity).F
    if ds.kind == SIMILARITY:
        return row, row
    return row, None


def reconstruction(ds: DatasetSpec, model: HmfModel) -> np.ndarray:
    """Model reconstruction of a dataset from the current factor state."""
    row, col = _factor_pair(ds, model)
    if ds.kind == FEATURE:
        return row @ ds.private_factor.T
    return row @ ds.private_factor @ col.T


def masked_residual(ds: DatasetSpec, model: HmfModel) -> np.ndarray:
    """Data minus reconstruction, zeroed at unobserved cells."""
    return np.where(ds.data.mask, ds.data.values - reconstruction(ds, model), 0.0)


def _weight(ds: DatasetSpec) -> float:
    return ds.noise_precision * ds.importance


def _private_rate(ds: DatasetSpec, model: HmfModel) -> float:
    return ds.effective_lambda(model.hyper.lambda_private_default)


# ---------------------------------------------------------------------------
# Posterior parameters (pure functions of the current state)
# ---------------------------------------------------------------------------


def noise_params(ds: DatasetSpec, model: HmfModel) -> tuple[float, float]:
    """Gamma shape/rate of the dataset's noise precision conditional."""
    resid = masked_residual(ds, model)
    shape = model.hyper.alpha_tau + ds.importance * ds.data.n_observed / 2.0
    rate = model.hyper.beta_tau + ds.importance * 0.5 * float(np.sum(resid * resid))
    return shape, rate


def ard_params(entity: EntityType, model: HmfModel) -> tuple[np.ndarray, np.ndarray]:
    """Gamma shape/rate vectors for the entity's ARD precisions.

    Importance values never enter: the likelihood does not contain the
    ARD variables, only the factor priors do. Exponential blocks add one
    to the shape per row and first moments to the rate; gaussian blocks
    add a half and half second moments.
    """
    hyper = model.hyper
    k = entity.factors
    f = entity.F
    if entity.nonnegative:
        shape = np.full(k, hyper.alpha_0 + entity.instances)
        rate = hyper.beta_0 + f.sum(axis=0)
    else:
        shape = np.full(k, hyper.alpha_0 + entity.instances / 2.0)
        rate = hyper.beta_0 + 0.5 * (f * f).sum(axis=0)
    sets = derive_index_sets(model, entity)
    for l in sets.V_plus:
        g = model.datasets[l].private_factor
        shape += g.shape[0]
        rate = rate + g.sum(axis=0)
    for l in sets.V_minus:
        g = model.datasets[l].private_factor
        shape += g.shape[0] / 2.0
        rate = rate + 0.5 * (g * g).sum(axis=0)
    return shape, rate


def shared_column_params(
    entity: EntityType, model: HmfModel, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Numerator/precision of column k of the entity's factor matrix.

    Accumulates the four-way sum over datasets seeing the entity as main
    rows, main columns, feature rows, and similarity rows (the last
    contributing both a row and a column residual term). The prior enters
    as -ard[k] in the numerator for nonnegative entities and as +ard[k]
    in the precision for real ones. The conditional mean of entry (i, k)
    is num[i]/prec[i].
    """
    f = entity.F
    fk = f[:, k]
    num = np.zeros(entity.instances)
    prec = np.zeros(entity.instances)
    sets = derive_index_sets(model, entity)

    for n in sets.U1:
        ds = model.datasets[n]
        w = _weight(ds)
        other = model.entity(ds.col_entity).F
        q = other @ ds.private_factor[k, :]
        e = masked_residual(ds, model)
        contrib = w * (ds.data.mask @ (q * q))
        num += w * (e @ q) + fk * contrib
        prec += contrib
    for n in sets.U2:
        ds = model.datasets[n]
        w = _weight(ds)
        other = model.entity(ds.row_entity).F
        q = other @ ds.private_factor[:, k]
        e = masked_residual(ds, model)
        contrib = w * (ds.data.mask.T @ (q * q))
        num += w * (e.T @ q) + fk * contrib
        prec += contrib
    for l in sets.V:
        ds = model.datasets[l]
        w = _weight(ds)
        q = ds.private_factor[:, k]
        e = masked_residual(ds, model)
        contrib = w * (ds.data.mask @ (q * q))
        num += w * (e @ q) + fk * contrib
        prec += contrib
    for m in sets.W:
        ds = model.datasets[m]
        w = _weight(ds)
        q_row = f @ ds.private_factor[k, :]
        q_col = f @ ds.private_factor[:, k]
        e = masked_residual(ds, model)
        contrib = w * (ds.data.mask @ (q_row * q_row) + ds.data.mask.T @ (q_col * q_col))
        num += w * (e @ q_row + e.T @ q_col) + fk * contrib
        prec += contrib

    if entity.nonnegative:
        num -= entity.ard[k]
    else:
        prec += entity.ard[k]
    return num, prec


def shared_row_params(
    entity: EntityType, model: HmfModel, i: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance of row i under the multivariate draw."""
    k = entity.factors
    f = entity.F
    lam = np.diag(entity.ard)
    b = np.zeros(k)
    sets = derive_index_sets(model, entity)

    def accumulate(p: np.ndarray, mask_line: np.ndarray, data_line: np.ndarray, w: float):
        nonlocal lam, b
        weighted = p * mask_line[:, None]
        lam = lam + w * (weighted.T @ p)
        b = b + w * (p.T @ np.where(mask_line, data_line, 0.0))

    for n in sets.U1:
        ds = model.datasets[n]
        p = model.entity(ds.col_entity).F @ ds.private_factor.T
        accumulate(p, ds.data.mask[i, :], ds.data.values[i, :], _weight(ds))
    for n in sets.U2:
        ds = model.datasets[n]
        p = model.entity(ds.row_entity).F @ ds.private_factor
        accumulate(p, ds.data.mask[:, i], ds.data.values[:, i], _weight(ds))
    for l in sets.V:
        ds = model.datasets[l]
        accumulate(ds.private_factor, ds.data.mask[i, :], ds.data.values[i, :], _weight(ds))
    for m in sets.W:
        ds = model.datasets[m]
        w = _weight(ds)
        accumulate(f @ ds.private_factor.T, ds.data.mask[i, :], ds.data.values[i, :], w)
        accumulate(f @ ds.private_factor, ds.data.mask[:, i], ds.data.values[:, i], w)

    cov = np.linalg.inv(lam)
    return cov @ b, cov


def private_column_params(
    ds: DatasetSpec, model: HmfModel, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Numerator/precision of column k of a feature dataset's loadings."""
    if ds.kind != FEATURE:
        raise NumericalError("private_column_params applies to feature datasets")
    entity = model.entity(ds.row_entity)
    w = _weight(ds)
    q = entity.F[:, k]
    e = masked_residual(ds, model)
    gk = ds.private_factor[:, k]
    prec = w * (ds.data.mask.T @ (q * q))
    num = w * (e.T @ q) + gk * prec
    lam = entity.ard[k]
    if ds.private_prior == "exponential":
        num = num - lam
    else:
        prec = prec + lam
    return num, prec


def private_entry_params(
    ds: DatasetSpec, model: HmfModel, k: int, l: int
) -> tuple[float, float]:
    """Numerator/precision of core entry (k, l) of a tri-factorisation."""
    row, col = _factor_pair(ds, model)
    if col is None:
        raise NumericalError("private_entry_params applies to main/similarity datasets")
    w = _weight(ds)
    a = row[:, k]
    b = col[:, l]
    e = masked_residual(ds, model)
    prec = w * float((a * a) @ ds.data.mask @ (b * b))
    num = w * float(a @ e @ b) + ds.private_factor[k, l] * prec
    lam = _private_rate(ds, model)
    if ds.private_prior == "exponential":
        num -= lam
    else:
        prec += lam
    return num, prec


def private_row_params(
    ds: DatasetSpec, model: HmfModel, r: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mean/covariance for row r of the private factor (gaussian prior).

    For feature datasets r indexes loadings rows (one per feature); for
    main/similarity datasets it indexes core rows, conditioning on the
    other core rows at their current values.
    """
    row, col = _factor_pair(ds, model)
    w = _weight(ds)
    if ds.kind == FEATURE:
        entity = model.entity(ds.row_entity)
        mask_col = ds.data.mask[:, r]
        weighted = row * mask_col[:, None]
        lam = np.diag(entity.ard) + w * (weighted.T @ row)
        b = w * (row.T @ np.where(mask_col, ds.data.values[:, r], 0.0))
        cov = np.linalg.inv(lam)
        return cov @ b, cov

    lam_s = _private_rate(ds, model)
    a = row[:, r]
    weights = ds.data.mask.T @ (a * a)
    lam = lam_s * np.eye(col.shape[1]) + w * ((col * weights[:, None]).T @ col)
    e = masked_residual(ds, model)
    q = col @ ds.private_factor[r, :]
    b = w * (col.T @ (e.T @ a + q * weights))
    cov = np.linalg.inv(lam)
    return cov @ b, cov


# ---------------------------------------------------------------------------
# Drawing updates (mutate the model)
# ---------------------------------------------------------------------------


def _draw_block(
    num: np.ndarray,
    prec: np.ndarray,
    nonnegative: bool,
    fallback_rate: float | np.ndarray,
    rng: RngStream,
    diagnostics: Diagnostics | None,
) -> np.ndarray:
    """Draw a vector of entries from their univariate conditionals.

    Entries with exactly zero precision (only possible for exponential
    priors with empty likelihood sums) are drawn from the prior; tiny
    positive precisions are clamped to PRECISION_FLOOR and counted.
    """
    num = np.atleast_1d(np.asarray(num, dtype=float))
    prec = np.atleast_1d(np.asarray(prec, dtype=float))
    out = np.empty_like(num)
    fallback = prec == 0.0
    live = ~fallback
    if np.any(live):
        p = prec[live]
        clamped = np.maximum(p, PRECISION_FLOOR)
        n_clamped = int(np.sum(p < PRECISION_FLOOR))
        if diagnostics is not None and n_clamped:
            diagnostics.clamp_count += n_clamped
        mu = num[live] / clamped
        if nonnegative:
            out[live] = sample_truncated_normal_vector(mu, clamped, rng)
        else:
            out[live] = sample_normal_vector(mu, clamped, rng)
    if np.any(fallback):
        if not nonnegative:
            raise NumericalError("zero posterior precision for a gaussian-prior entry")
        rates = np.broadcast_to(np.asarray(fallback_rate, dtype=float), num.shape)[fallback]
        out[fallback] = rng.generator.exponential(1.0 / rates)
        if diagnostics is not None:
            diagnostics.prior_fallback_count += int(fallback.sum())
    return out


def update_noise(ds: DatasetSpec, model: HmfModel, rng: RngStream) -> float:
    """Resample the dataset's noise precision; returns the new value."""
    shape, rate = noise_params(ds, model)
    ds.noise_precision = sample_gamma(shape, rate, rng)
    return ds.noise_precision


def update_ard(entity: EntityType, model: HmfModel, rng: RngStream) -> np.ndarray:
    """Resample the entity's ARD vector; returns the new values."""
    shape, rate = ard_params(entity, model)
    for k in range(entity.factors):
        entity.ard[k] = sample_gamma(float(shape[k]), float(rate[k]), rng)
    return entity.ard


def update_shared_factor(
    entity: EntityType,
    model: HmfModel,
    mode: DrawMode,
    rng: RngStream,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Resample the entity's factor matrix.

    Elementwise draws scan columns in order; within a column, entries of
    entities linked to a similarity dataset are updated one at a time
    (they condition on each other through the symmetric reconstruction),
    while all other entities draw the whole column at once since its
    entries are conditionally independent. Row-wise draws apply only to
    real-valued entities and fall back to elementwise otherwise.
    """
    f = entity.F
    has_similarity = bool(derive_index_sets(model, entity).W)
    if mode == "rowwise" and not entity.nonnegative:
        for i in range(entity.instances):
            mean, cov = shared_row_params(entity, model, i)
            f[i, :] = sample_multivariate_normal(mean, cov, rng)
        return f
    for k in range(entity.factors):
        if has_similarity:
            for i in range(entity.instances):
                num, prec = shared_column_params(entity, model, k)
                f[i, k] = _draw_block(
                    num[i : i + 1],
                    prec[i : i + 1],
                    entity.nonnegative,
                    entity.ard[k],
                    rng,
                    diagnostics,
                )[0]
        else:
            num, prec = shared_column_params(entity, model, k)
            f[:, k] = _draw_block(
                num, prec, entity.nonnegative, entity.ard[k], rng, diagnostics
            )
    return f


def update_private_factor(
    ds: DatasetSpec,
    model: HmfModel,
    mode: DrawMode,
    rng: RngStream,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Resample the dataset's private factor block.

    CP-constrained cores update their diagonal entries only, in index
    order, leaving off-diagonals at exactly zero. Row-wise draws require
    a gaussian prior; core rows condition on the other rows' current
    values.
    """
    s = ds.private_factor
    nonneg = ds.private_prior == "exponential"
    if ds.kind == FEATURE:
        entity = model.entity(ds.row_entity)
        if mode == "rowwise" and not nonneg:
            for j in range(s.shape[0]):
                mean, cov = private_row_params(ds, model, j)
                s[j, :] = sample_multivariate_normal(mean, cov, rng)
            return s
        for k in range(entity.factors):
            num, prec = private_column_params(ds, model, k)
            s[:, k] = _draw_block(num, prec, nonneg, entity.ard[k], rng, diagnostics)
        return s

    lam = _private_rate(ds, model)
    if ds.cp_constrained:
        for k in range(s.shape[0]):
            num, prec = private_entry_params(ds, model, k, k)
            s[k, k] = _draw_block(num, prec, nonneg, lam, rng, diagnostics)[0]
        return s
    if mode == "rowwise" and not nonneg:
        for k in range(s.shape[0]):
            mean, cov = private_row_params(ds, model, k)
            s[k, :] = sample_multivariate_normal(mean, cov, rng)
        return s
    for l in range(s.shape[1]):
        for k in range(s.shape[0]):
            num, prec = private_entry_params(ds, model, k, l)
            s[k, l] = _draw_block(num, prec, nonneg, lam, rng, diagnostics)[0]
    return s


def sweep(
    model: HmfModel,
    mode: DrawMode,
    rng: RngStream,
    diagnostics: Diagnostics | None = None,
) -> HmfModel:
    """One full Gibbs scan; fixed update order for reproducibility."""
    for ds in model.datasets:
        update_noise(ds, model, rng)
    for entity in model.entity_types:
        update_ard(entity, model, rng)
    for entity in model.entity_types:
        update_shared_factor(entity, model, mode, rng, diagnostics)
    for ds in model.datasets:
        update_private_factor(ds, model, mode, rng, diagnostics)
    return model


def run(
    model: HmfModel,
    mode: DrawMode = "elementwise",
    diagnostics: Diagnostics | None = None,
    rng: RngStream | None = None,
) -> PosteriorSummary:
    """Execute the schedule and accumulate means over retained draws."""
    require_valid(model)
    sched = model.schedule
    if rng is None:
        rng = RngStream(sched.seed, SAMPLING_STREAM)

    f_sum = {e.name: np.zeros_like(e.F) for e in model.entity_types}
    ard_sum = {e.name: np.zeros_like(e.ard) for e in model.entity_types}
    s_sum = {d.name: np.zeros_like(d.private_factor) for d in model.datasets}
    tau_sum = {d.name: 0.0 for d in model.datasets}
    retained = 0

    for it in range(sched.iterations):
        sweep(model, mode, rng, diagnostics)
        if diagnostics is not None:
            diagnostics.log_joint_trace.append(log_joint(model))
        if it >= sched.burn_in and (it - sched.burn_in) % sched.thinning == 0:
            retained += 1
            for e in model.entity_types:
                f_sum[e.name] += e.F
                ard_sum[e.name] += e.ard
            for d in model.datasets:
                s_sum[d.name] += d.private_factor
                tau_sum[d.name] += d.noise_precision

    return PosteriorSummary(
        factor_means={k: v / retained for k, v in f_sum.items()},
        private_means={k: v / retained for k, v in s_sum.items()},
        noise_means={k: v / retained for k, v in tau_sum.items()},
        ard_means={k: v / retained for k, v in ard_sum.items()},
        retained_draws=retained,
    )


def _log_gamma_density(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def _log_block_prior(block: np.ndarray, rates: np.ndarray, exponential: bool) -> float:
    """Log prior of a factor block with per-column rates (broadcastable)."""
    rates = np.broadcast_to(np.asarray(rates, dtype=float), block.shape)
    if exponential:
        return float(np.sum(np.log(rates) - rates * block))
    return float(np.sum(0.5 * np.log(rates) - 0.5 * math.log(2 * math.pi) - 0.5 * rates * block * block))


def log_joint(model: HmfModel) -> float:
    """Importance-weighted log joint density of the current state.

    Used for convergence monitoring only. CP-pinned off-diagonal entries
    are structural zeros, not free parameters, so only the diagonal
    contributes prior terms there.
    """
    hyper = model.hyper
    total = 0.0
    for entity in model.entity_types:
        for lam in entity.ard:
            total += _log_gamma_density(float(lam), hyper.alpha_0, hyper.beta_0)
        total += _log_block_prior(entity.F, entity.ard[None, :], entity.nonnegative)
    for ds in model.datasets:
        total += _log_gamma_density(ds.noise_precision, hyper.alpha_tau, hyper.beta_tau)
        exponential = ds.private_prior == "exponential"
        if ds.kind == FEATURE:
            ard = model.entity(ds.row_entity).ard
            total += _log_block_prior(ds.private_factor, ard[None, :], exponential)
        else:
            lam = _private_rate(ds, model)
            block = np.diag(ds.private_factor) if ds.cp_constrained else ds.private_factor
            total += _log_block_prior(block, np.full(block.shape, lam), exponential)
        resid = masked_residual(ds, model)
        ssr = float(np.sum(resid * resid))
        n_obs = ds.data.n_observed
        loglik = 0.5 * n_obs * math.log(ds.noise_precision / (2 * math.pi))
        loglik -= 0.5 * ds.noise_precision * ssr
        total += ds.importance * loglik
    return total
