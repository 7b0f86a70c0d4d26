"""Model state: entity types, datasets, masks, hyperparameters, schedule.

Everything the Gibbs sampler touches lives here, including the factor
grids and noise precisions, so a model can be checkpointed and resumed
mid-chain. Validation returns violations as data rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "ObservedMatrix",
    "EntityType",
    "DatasetSpec",
    "Hyperparameters",
    "SamplerSchedule",
    "HmfModel",
    "IndexSets",
    "validate",
    "derive_index_sets",
    "MAIN",
    "FEATURE",
    "SIMILARITY",
]

MAIN = "main"
FEATURE = "feature"
SIMILARITY = "similarity"

Kind = Literal["main", "feature", "similarity"]
Negativity = Literal["nonnegative", "real"]
PriorKind = Literal["exponential", "gaussian"]


@dataclass
class ObservedMatrix:
    """Dense value grid plus boolean mask of observed entries.

    Values at mask-false cells are carried along untouched but ignored by
    every operation in the package.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def fully_observed(cls, values: np.ndarray) -> "ObservedMatrix":
        values = np.asarray(values, dtype=float)
        return cls(values=values, mask=np.ones(values.shape, dtype=bool))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def observed_values(self) -> np.ndarray:
        """Values with mask-false cells replaced by 0 (NaN-safe)."""
        return np.where(self.mask, self.values, 0.0)

    def copy(self) -> "ObservedMatrix":
        return ObservedMatrix(values=self.values.copy(), mask=self.mask.copy())


@dataclass
class EntityType:
    """A named axis shared across datasets, owning one factor matrix."""

    name: str
    instances: int
    factors: int
    negativity: Negativity = "nonnegative"
    F: np.ndarray = field(default=None)  # type: ignore[assignment]
    ard: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.F is None:
            self.F = np.zeros((self.instances, self.factors))
        else:
            self.F = np.asarray(self.F, dtype=float)
        if self.ard is None:
            self.ard = np.ones(self.factors)
        else:
            self.ard = np.asarray(self.ard, dtype=float)

    @property
    def nonnegative(self) -> bool:
        return self.negativity == "nonnegative"

    def copy(self) -> "EntityType":
        return replace(self, F=self.F.copy(), ard=self.ard.copy())


@dataclass
class DatasetSpec:
    """One observed dataset and its private factor block.

    kind selects the decomposition: main datasets relate two distinct
    entity types through a K_r x K_c core; feature datasets pair an entity
    with private per-feature loadings; similarity datasets relate an
    entity to itself (square, diagonal never observed).

    Private S blocks carry their own prior rate (``private_lambda``,
    falling back to the hyperparameters); feature-dataset loadings are
    governed by the row entity's ARD vector instead.
    """

    name: str
    kind: Kind
    row_entity: str
    data: ObservedMatrix
    col_entity: str | None = None
    private_prior: PriorKind = "gaussian"
    private_lambda: float | None = None
    private_factor: np.ndarray = field(default=None)  # type: ignore[assignment]
    importance: float = 1.0
    noise_precision: float = 1.0
    cp_constrained: bool = False

    def __post_init__(self) -> None:
        if self.private_factor is not None:
            self.private_factor = np.asarray(self.private_factor, dtype=float)

    @property
    def feature_count(self) -> int | None:
        return self.data.cols if self.kind == FEATURE else None

    def effective_lambda(self, default: float) -> float:
        return default if self.private_lambda is None else float(self.private_lambda)

    def copy(self) -> "DatasetSpec":
        return replace(
            self,
            data=self.data.copy(),
            private_factor=None if self.private_factor is None else self.private_factor.copy(),
        )


@dataclass
class Hyperparameters:
    """Gamma priors for noise and ARD plus the private-prior fallback rate.

    The ARD hyperprior defaults to a near scale-free Gamma(1e-3, 1e-3):
    an informative prior (say Gamma(1, 1)) anchors the per-factor
    precisions near its mean and stops them running away for unused
    factors, which defeats the point of ARD.
    """

    alpha_tau: float = 1.0
    beta_tau: float = 1.0
    alpha_0: float = 1e-3
    beta_0: float = 1e-3
    lambda_private_default: float = 1.0


@dataclass
class SamplerSchedule:
    """Chain length, burn-in, thinning, and the master seed."""

    iterations: int = 200
    burn_in: int = 100
    thinning: int = 2
    seed: int = 0

    @property
    def retained_draws(self) -> int:
        span = self.iterations - self.burn_in
        return max((span + self.thinning - 1) // self.thinning, 0)


@dataclass
class HmfModel:
    """The full joint state handed to the Gibbs sweep."""

    entity_types: list[EntityType]
    datasets: list[DatasetSpec]
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    schedule: SamplerSchedule = field(default_factory=SamplerSchedule)

    def __post_init__(self) -> None:
        for ds in self.datasets:
            if ds.private_factor is None and ds.kind != FEATURE:
                row = self._maybe_entity(ds.row_entity)
                col = self._maybe_entity(ds.col_entity) if ds.kind == MAIN else row
                if row is not None and col is not None:
                    ds.private_factor = np.zeros((row.factors, col.factors))
            if ds.private_factor is None and ds.kind == FEATURE:
                row = self._maybe_entity(ds.row_entity)
                if row is not None:
                    ds.private_factor = np.zeros((ds.data.cols, row.factors))

    def _maybe_entity(self, name: str | None) -> EntityType | None:
        for ent in self.entity_types:
            if ent.name == name:
                return ent
        return None

    def entity(self, name: str) -> EntityType:
        ent = self._maybe_entity(name)
        if ent is None:
            raise ConfigurationError(f"unresolved entity reference {name!r}")
        return ent

    def dataset(self, name: str) -> DatasetSpec:
        for ds in self.datasets:
            if ds.name == name:
                return ds
        raise ConfigurationError(f"no dataset named {name!r}")

    def copy(self) -> "HmfModel":
        return HmfModel(
            entity_types=[e.copy() for e in self.entity_types],
            datasets=[d.copy() for d in self.datasets],
            hyper=replace(self.hyper),
            schedule=replace(self.schedule),
        )


@dataclass(frozen=True)
class IndexSets:
    """Dataset indices touching one entity type, split by role.

    U1/U2: main datasets with the entity on rows/columns; V: feature
    datasets, partitioned into V_plus (exponential loadings) and V_minus
    (gaussian); W: similarity datasets.
    """

    U1: tuple[int, ...]
    U2: tuple[int, ...]
    V: tuple[int, ...]
    V_plus: tuple[int, ...]
    V_minus: tuple[int, ...]
    W: tuple[int, ...]


def derive_index_sets(model: HmfModel, entity: EntityType) -> IndexSets:
    """Classify every dataset touching ``entity`` by its role."""
    u1, u2, v, vp, vm, w = [], [], [], [], [], []
    for i, ds in enumerate(model.datasets):
        if ds.kind == MAIN:
            if ds.row_entity == entity.name:
                u1.append(i)
            if ds.col_entity == entity.name:
                u2.append(i)
        elif ds.kind == FEATURE:
            if ds.row_entity == entity.name:
                v.append(i)
                (vp if ds.private_prior == "exponential" else vm).append(i)
        elif ds.kind == SIMILARITY:
            if ds.row_entity == entity.name:
                w.append(i)
        else:
            raise ConfigurationError(f"dataset {ds.name!r} has unknown kind {ds.kind!r}")
    return IndexSets(tuple(u1), tuple(u2), tuple(v), tuple(vp), tuple(vm), tuple(w))


def _check_matrix(path: str, data: ObservedMatrix, out: list[str]) -> None:
    if data.values.ndim != 2 or data.mask.ndim != 2:
        out.append(f"{path}: values and mask must be 2-D grids")
        return
    if data.values.shape != data.mask.shape:
        out.append(f"{path}: mask shape {data.mask.shape} != values shape {data.values.shape}")
        return
    if data.n_observed == 0:
        out.append(f"{path}: mask observes no entries")
    observed = data.values[data.mask]
    if observed.size and not np.all(np.isfinite(observed)):
        out.append(f"{path}: observed entries contain non-finite values")


def validate(model: HmfModel) -> list[str]:
    """Return every invariant violation, with a path to the offending field.

    An empty report means the model is ready for sampling. Purely a read;
    calling it twice gives the same answer.
    """
    out: list[str] = []
    hp = model.hyper
    for name in ("alpha_tau", "beta_tau", "alpha_0", "beta_0", "lambda_private_default"):
        if not getattr(hp, name) > 0:
            out.append(f"hyper.{name}: must be positive")

    sched = model.schedule
    if sched.iterations < 1:
        out.append("schedule.iterations: must be at least 1")
    if not 0 <= sched.burn_in < sched.iterations:
        out.append("schedule.burn_in: must satisfy 0 <= burn_in < iterations")
    if sched.thinning < 1:
        out.append("schedule.thinning: must be at least 1")
    elif sched.burn_in < sched.iterations and sched.retained_draws < 1:
        out.append("schedule: no draws retained after burn-in and thinning")

    seen: set[str] = set()
    for ent in model.entity_types:
        path = f"entity_types[{ent.name}]"
        if ent.name in seen:
            out.append(f"{path}: duplicate entity name")
        seen.add(ent.name)
        if ent.instances < 1:
            out.append(f"{path}.instances: must be at least 1")
        if ent.factors < 1:
            out.append(f"{path}.factors: must be at least 1")
        if ent.F.shape != (ent.instances, ent.factors):
            out.append(
                f"{path}.F: shape {ent.F.shape} != (instances, factors) "
                f"({ent.instances}, {ent.factors})"
            )
        if ent.ard.shape != (ent.factors,):
            out.append(f"{path}.ard: length {ent.ard.shape} != factors {ent.factors}")
        elif not np.all(ent.ard > 0):
            out.append(f"{path}.ard: entries must be positive")
        if ent.nonnegative and ent.F.size and ent.F.min() < 0:
            out.append(f"{path}.F: negative entry in a nonnegative factor matrix")

    names = {e.name for e in model.entity_types}
    referenced: set[str] = set()
    seen_ds: set[str] = set()
    for i, ds in enumerate(model.datasets):
        path = f"datasets[{ds.name}]"
        if ds.name in seen_ds:
            out.append(f"{path}: duplicate dataset name")
        seen_ds.add(ds.name)
        if ds.kind not in (MAIN, FEATURE, SIMILARITY):
            out.append(f"{path}.kind: unknown kind {ds.kind!r}")
            continue
        if ds.row_entity not in names:
            out.append(f"{path}.row_entity: unresolved entity {ds.row_entity!r}")
            continue
        referenced.add(ds.row_entity)
        row = model.entity(ds.row_entity)
        _check_matrix(f"{path}.data", ds.data, out)
        if ds.data.values.ndim == 2 and ds.data.rows != row.instances:
            out.append(
                f"{path}.data: {ds.data.rows} rows != {row.instances} instances "
                f"of entity {row.name!r}"
            )
        if not ds.importance >= 0:
            out.append(f"{path}.importance: must be nonnegative")
        if not ds.noise_precision > 0:
            out.append(f"{path}.noise_precision: must be positive")
        if ds.private_lambda is not None and not ds.private_lambda > 0:
            out.append(f"{path}.private_lambda: must be positive when given")

        if ds.kind == MAIN:
            if ds.col_entity is None:
                out.append(f"{path}.col_entity: main datasets need a column entity")
                continue
            if ds.col_entity not in names:
                out.append(f"{path}.col_entity: unresolved entity {ds.col_entity!r}")
                continue
            referenced.add(ds.col_entity)
            col = model.entity(ds.col_entity)
            if ds.col_entity == ds.row_entity:
                out.append(
                    f"{path}: main datasets must link two distinct entity types; "
                    "declare same-type square data as a similarity dataset"
                )
            if ds.data.values.ndim == 2 and ds.data.cols != col.instances:
                out.append(
                    f"{path}.data: {ds.data.cols} columns != {col.instances} instances "
                    f"of entity {col.name!r}"
                )
            expected = (row.factors, col.factors)
        elif ds.kind == FEATURE:
            if ds.col_entity is not None:
                out.append(f"{path}.col_entity: feature datasets take no column entity")
            if ds.private_lambda is not None:
                out.append(
                    f"{path}.private_lambda: feature loadings are governed by the "
                    "entity ARD vector, not a private rate"
                )
            expected = (ds.data.cols, row.factors)
        else:  # similarity
            if ds.col_entity is not None and ds.col_entity != ds.row_entity:
                out.append(f"{path}.col_entity: similarity datasets relate an entity to itself")
            if ds.data.values.ndim == 2 and ds.data.rows != ds.data.cols:
                out.append(f"{path}.data: similarity data must be square")
            elif ds.data.values.ndim == 2 and np.any(np.diag(ds.data.mask)):
                out.append(f"{path}.data.mask: diagonal entries must not be observed")
            expected = (row.factors, row.factors)

        if ds.private_factor is None or ds.private_factor.shape != expected:
            got = None if ds.private_factor is None else ds.private_factor.shape
            out.append(f"{path}.private_factor: shape {got} != expected {expected}")
            continue
        if ds.private_prior == "exponential" and ds.private_factor.min() < 0:
            out.append(f"{path}.private_factor: negative entry under an exponential prior")
        if ds.cp_constrained:
            if ds.kind != MAIN:
                out.append(f"{path}.cp_constrained: only main datasets can be CP-constrained")
            elif expected[0] != expected[1]:
                out.append(f"{path}.cp_constrained: requires a square private factor")
            else:
                off = ds.private_factor.copy()
                np.fill_diagonal(off, 0.0)
                if np.any(off != 0.0):
                    out.append(f"{path}.private_factor: off-diagonal entries must be exactly 0")

    for ent in model.entity_types:
        if ent.name not in referenced:
            out.append(f"entity_types[{ent.name}]: not referenced by any dataset")
    return out


def require_valid(model: HmfModel) -> None:
    """Raise ConfigurationError with the full report if the model is invalid."""
    report = validate(model)
    if report:
        raise ConfigurationError("invalid model:\n" + "\n".join(f"  - {v}" for v in report))
