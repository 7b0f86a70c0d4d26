"""Bayesian hybrid matrix factorisation for multi-matrix data integration.

Jointly decomposes any number of observed matrices over shared entity
types by Gibbs sampling, with per-dataset factorisation type (two- or
three-matrix), per-block negativity constraints, ARD rank selection, and
per-dataset importance weighting.
"""

from .datamodel import (
    DatasetSpec,
    EntityType,
    HmfModel,
    Hyperparameters,
    ObservedMatrix,
    SamplerSchedule,
    derive_index_sets,
    validate,
)
from .evaluation import (
    ExperimentResult,
    FoldPlan,
    cross_validate,
    make_folds,
    mse,
    np_nmf_baseline,
    predict,
    sparsity_experiment,
)
from .gibbs import Diagnostics, PosteriorSummary, log_joint, run, sweep
from .initialization import InitStrategy, initialise_model
from .preprocess import (
    KernelMatrix,
    cap,
    gaussian_kernel,
    jaccard_kernel,
    kernel_to_similarity_dataset,
    rescale_rows_unit,
    standardise_columns,
)
from .sampling import (
    RngStream,
    TruncatedNormalParams,
    sample_gamma,
    sample_multivariate_normal,
    sample_normal,
    sample_truncated_normal,
)

__version__ = "0.1.0"
