"""Shared builders for randomised model instances used across the tests."""

from __future__ import annotations

import numpy as np

from hmf.datamodel import (
    FEATURE,
    MAIN,
    SIMILARITY,
    DatasetSpec,
    EntityType,
    HmfModel,
    Hyperparameters,
    ObservedMatrix,
    SamplerSchedule,
)


def random_mask(gen, shape, density=0.8, no_diag=False):
    """Boolean mask with roughly the given density and at least one True."""
    mask = gen.random(shape) < density
    if no_diag:
        np.fill_diagonal(mask, False)
    if not mask.any():
        i = gen.integers(shape[0])
        j = gen.integers(shape[1])
        if no_diag and i == j:
            j = (j + 1) % shape[1]
        mask[i, j] = True
    return mask


def random_entity(gen, name, instances, factors, negativity="nonnegative"):
    if negativity == "nonnegative":
        f = gen.exponential(1.0, size=(instances, factors))
    else:
        f = gen.standard_normal((instances, factors))
    return EntityType(
        name=name,
        instances=instances,
        factors=factors,
        negativity=negativity,
        F=f,
        ard=gen.uniform(0.5, 2.0, size=factors),
    )


def _random_block(gen, shape, prior):
    if prior == "exponential":
        return gen.exponential(1.0, size=shape)
    return gen.standard_normal(shape)


def _random_data(gen, shape, density, no_diag=False):
    return ObservedMatrix(
        values=gen.standard_normal(shape),
        mask=random_mask(gen, shape, density, no_diag=no_diag),
    )


def feature_model(gen, instances=5, features=4, factors=2,
                  f_negativity="nonnegative", g_prior="exponential",
                  importance=1.0, density=0.8):
    """Single feature dataset: the two-matrix factorisation reduction."""
    entity = random_entity(gen, "rows", instances, factors, f_negativity)
    ds = DatasetSpec(
        name="feat",
        kind=FEATURE,
        row_entity="rows",
        data=_random_data(gen, (instances, features), density),
        private_prior=g_prior,
        private_factor=_random_block(gen, (features, factors), g_prior),
        importance=importance,
        noise_precision=gen.uniform(0.5, 2.0),
    )
    return HmfModel(entity_types=[entity], datasets=[ds],
                    hyper=Hyperparameters(), schedule=SamplerSchedule(seed=int(gen.integers(1 << 31))))


def main_model(gen, rows=5, cols=4, row_factors=2, col_factors=3,
               f_negativity="nonnegative", s_prior="exponential",
               importance=1.0, density=0.8, cp=False):
    """Single main dataset: the three-matrix factorisation reduction."""
    if cp:
        col_factors = row_factors
    row = random_entity(gen, "rows", rows, row_factors, f_negativity)
    col = random_entity(gen, "cols", cols, col_factors, f_negativity)
    s = _random_block(gen, (row_factors, col_factors), s_prior)
    if cp:
        s = np.diag(np.diag(s))
    ds = DatasetSpec(
        name="main",
        kind=MAIN,
        row_entity="rows",
        col_entity="cols",
        data=_random_data(gen, (rows, cols), density),
        private_prior=s_prior,
        private_factor=s,
        importance=importance,
        noise_precision=gen.uniform(0.5, 2.0),
        cp_constrained=cp,
    )
    return HmfModel(entity_types=[row, col], datasets=[ds],
                    hyper=Hyperparameters(), schedule=SamplerSchedule(seed=int(gen.integers(1 << 31))))


def similarity_model(gen, instances=5, factors=2,
                     f_negativity="nonnegative", s_prior="exponential",
                     importance=1.0, density=0.8):
    """Single similarity dataset (square, diagonal unobserved)."""
    entity = random_entity(gen, "items", instances, factors, f_negativity)
    values = gen.standard_normal((instances, instances))
    values = 0.5 * (values + values.T)
    ds = DatasetSpec(
        name="sim",
        kind=SIMILARITY,
        row_entity="items",
        data=ObservedMatrix(
            values=values,
            mask=random_mask(gen, (instances, instances), density, no_diag=True),
        ),
        private_prior=s_prior,
        private_factor=_random_block(gen, (factors, factors), s_prior),
        importance=importance,
        noise_precision=gen.uniform(0.5, 2.0),
    )
    return HmfModel(entity_types=[entity], datasets=[ds],
                    hyper=Hyperparameters(), schedule=SamplerSchedule(seed=int(gen.integers(1 << 31))))


def joint_model(gen, f_negativity="nonnegative", density=0.75):
    """Model exercising every role at once: the hub entity appears as main
    rows, main columns, feature rows, and similarity rows."""
    hub = random_entity(gen, "hub", 5, 2, f_negativity)
    other = random_entity(gen, "other", 4, 3, f_negativity)
    third = random_entity(gen, "third", 3, 2, f_negativity)
    sim_values = gen.standard_normal((5, 5))
    sim_values = 0.5 * (sim_values + sim_values.T)
    datasets = [
        DatasetSpec(
            name="r_rows", kind=MAIN, row_entity="hub", col_entity="other",
            data=_random_data(gen, (5, 4), density),
            private_prior="gaussian", private_factor=gen.standard_normal((2, 3)),
            importance=gen.uniform(0.5, 2.0), noise_precision=gen.uniform(0.5, 2.0),
        ),
        DatasetSpec(
            name="r_cols", kind=MAIN, row_entity="third", col_entity="hub",
            data=_random_data(gen, (3, 5), density),
            private_prior="exponential", private_factor=gen.exponential(1.0, size=(2, 2)),
            importance=gen.uniform(0.5, 2.0), noise_precision=gen.uniform(0.5, 2.0),
        ),
        DatasetSpec(
            name="feat_exp", kind=FEATURE, row_entity="hub",
            data=_random_data(gen, (5, 3), density),
            private_prior="exponential", private_factor=gen.exponential(1.0, size=(3, 2)),
            importance=gen.uniform(0.5, 2.0), noise_precision=gen.uniform(0.5, 2.0),
        ),
        DatasetSpec(
            name="feat_gauss", kind=FEATURE, row_entity="hub",
            data=_random_data(gen, (5, 4), density),
            private_prior="gaussian", private_factor=gen.standard_normal((4, 2)),
            importance=gen.uniform(0.5, 2.0), noise_precision=gen.uniform(0.5, 2.0),
        ),
        DatasetSpec(
            name="sim", kind=SIMILARITY, row_entity="hub",
            data=ObservedMatrix(
                values=sim_values,
                mask=random_mask(gen, (5, 5), density, no_diag=True),
            ),
            private_prior="gaussian", private_factor=gen.standard_normal((2, 2)),
            importance=gen.uniform(0.5, 2.0), noise_precision=gen.uniform(0.5, 2.0),
        ),
    ]
    return HmfModel(entity_types=[hub, other, third], datasets=datasets,
                    hyper=Hyperparameters(), schedule=SamplerSchedule(seed=int(gen.integers(1 << 31))))


def synthetic_tri_factor_data(seed, rows=50, cols=50, rank=3, tau=100.0,
                              density=1.0):
    """Noisy low-rank data R = F S G^T + N(0, 1/tau).

    Factors are Uniform(0.5, 1.5): strictly positive (so the
    multiplicative-update baseline can run on the data too) and
    well-conditioned (heavy-tailed factors occasionally produce
    near-collinear structure that any sampler mixes poorly on).
    """
    gen = np.random.default_rng(seed)
    f = gen.uniform(0.5, 1.5, size=(rows, rank))
    s = gen.uniform(0.5, 1.5, size=(rank, rank))
    g = gen.uniform(0.5, 1.5, size=(cols, rank))
    clean = f @ s @ g.T
    noisy = clean + gen.standard_normal((rows, cols)) / np.sqrt(tau)
    mask = np.ones((rows, cols), dtype=bool) if density >= 1.0 \
        else random_mask(gen, (rows, cols), density)
    return ObservedMatrix(values=noisy, mask=mask), clean


def mtf_model_for(data: ObservedMatrix, k_fit=10, seed=0, s_prior="gaussian",
                  cp=False, schedule=None) -> HmfModel:
    """Semi-nonnegative tri-factorisation model over one main dataset."""
    rows = EntityType(name="rows", instances=data.rows, factors=k_fit)
    cols = EntityType(name="cols", instances=data.cols, factors=k_fit)
    ds = DatasetSpec(
        name="target", kind=MAIN, row_entity="rows", col_entity="cols",
        data=data.copy(), private_prior=s_prior, cp_constrained=cp,
    )
    return HmfModel(entity_types=[rows, cols], datasets=[ds],
                    schedule=schedule or SamplerSchedule(seed=seed))


def clustered_tri_factor_data(seed, rows=50, cols=50, rank=3, tau=100.0,
                              n_cores=1):
    """Cluster-structured R^n = F S^n G^T + N(0, 1/tau), one matrix per core.

    Rows and columns each belong to one of ``rank`` clusters (strong
    indicator entries plus a small positive background), and the shared
    factors combine with ``n_cores`` distinct dense cores, mimicking
    repeated experiments over the same two entity types. All values stay
    strictly positive by a wide margin at tau=100.
    """
    gen = np.random.default_rng(seed)

    def factor(n):
        f = 0.02 * gen.uniform(size=(n, rank))
        f[np.arange(n), gen.integers(rank, size=n)] += gen.uniform(0.8, 1.2, size=n)
        return f

    f, g = factor(rows), factor(cols)
    out = []
    for _ in range(n_cores):
        s = gen.uniform(1.5, 2.5, size=(rank, rank))
        noisy = f @ s @ g.T + gen.standard_normal((rows, cols)) / np.sqrt(tau)
        out.append(ObservedMatrix.fully_observed(noisy))
    return out


def real_mtf_model(matrices, k_fit=10, seed=0, cp=False, schedule=None) -> HmfModel:
    """Real-valued tri-factorisation over one or more main datasets that
    share both entity axes (the repeated-experiments configuration)."""
    if isinstance(matrices, ObservedMatrix):
        matrices = [matrices]
    rows = EntityType(name="rows", instances=matrices[0].rows, factors=k_fit,
                      negativity="real")
    cols = EntityType(name="cols", instances=matrices[0].cols, factors=k_fit,
                      negativity="real")
    datasets = [
        DatasetSpec(name=f"target{i}" if i else "target", kind=MAIN,
                    row_entity="rows", col_entity="cols", data=m.copy(),
                    private_prior="gaussian", cp_constrained=cp)
        for i, m in enumerate(matrices)
    ]
    return HmfModel(entity_types=[rows, cols], datasets=datasets,
                    schedule=schedule or SamplerSchedule(seed=seed))
