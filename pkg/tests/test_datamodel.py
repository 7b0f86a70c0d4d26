"""Validation and index-set derivation."""

import numpy as np
import pytest

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
    derive_index_sets,
    validate,
)
from hmf.errors import ConfigurationError

from helpers import feature_model, joint_model, main_model, similarity_model


def two_entity_model():
    rows = EntityType(name="cellline", instances=3, factors=2)
    cols = EntityType(name="drug", instances=2, factors=2)
    data = ObservedMatrix.fully_observed(np.arange(6.0).reshape(3, 2))
    ds = DatasetSpec(name="r", kind=MAIN, row_entity="cellline", col_entity="drug", data=data)
    return HmfModel(entity_types=[rows, cols], datasets=[ds])


def test_consistent_model_validates_clean():
    assert validate(two_entity_model()) == []


def test_validate_is_pure_and_idempotent():
    model = two_entity_model()
    first = validate(model)
    second = validate(model)
    assert first == second == []


def test_similarity_observed_diagonal_is_flagged():
    gen = np.random.default_rng(0)
    model = similarity_model(gen)
    model.datasets[0].data.mask[0, 0] = True
    report = validate(model)
    assert len(report) == 1
    assert "diagonal" in report[0]


def test_feature_wrong_loading_shape_is_flagged():
    gen = np.random.default_rng(1)
    model = feature_model(gen, instances=5, features=4, factors=2)
    model.datasets[0].private_factor = np.zeros((4, 3))
    report = validate(model)
    assert len(report) == 1
    assert "private_factor" in report[0] and "shape" in report[0]


def test_negative_entry_in_nonnegative_factor_is_flagged():
    model = two_entity_model()
    model.entity_types[0].F[0, 0] = -0.5
    assert any("negative entry" in v for v in validate(model))


def test_exponential_private_block_must_be_nonnegative():
    gen = np.random.default_rng(2)
    model = main_model(gen, s_prior="exponential")
    model.datasets[0].private_factor[0, 0] = -1.0
    assert any("exponential prior" in v for v in validate(model))


def test_main_dataset_needs_distinct_entities():
    ent = EntityType(name="only", instances=3, factors=2)
    data = ObservedMatrix.fully_observed(np.ones((3, 3)))
    ds = DatasetSpec(name="r", kind=MAIN, row_entity="only", col_entity="only", data=data)
    model = HmfModel(entity_types=[ent], datasets=[ds])
    assert any("distinct entity types" in v for v in validate(model))


def test_unreferenced_entity_is_flagged():
    model = two_entity_model()
    model.entity_types.append(EntityType(name="lonely", instances=2, factors=1))
    assert any("lonely" in v and "not referenced" in v for v in validate(model))


def test_all_false_mask_is_flagged():
    model = two_entity_model()
    model.datasets[0].data.mask[:] = False
    assert any("observes no entries" in v for v in validate(model))


def test_unresolved_entity_reference():
    model = two_entity_model()
    model.datasets[0].row_entity = "ghost"
    assert any("unresolved entity" in v for v in validate(model))
    with pytest.raises(ConfigurationError):
        model.entity("ghost")


def test_cp_only_on_square_main_core():
    gen = np.random.default_rng(3)
    model = main_model(gen, row_factors=2, col_factors=3, s_prior="gaussian")
    model.datasets[0].cp_constrained = True
    assert any("square" in v for v in validate(model))
    model = main_model(gen, cp=True, s_prior="gaussian")
    assert validate(model) == []
    model.datasets[0].private_factor[0, 1] = 0.3
    assert any("off-diagonal" in v for v in validate(model))


def test_feature_dataset_rejects_private_lambda():
    gen = np.random.default_rng(4)
    model = feature_model(gen)
    model.datasets[0].private_lambda = 0.5
    assert any("ARD" in v for v in validate(model))


def test_schedule_invariants():
    model = two_entity_model()
    model.schedule = SamplerSchedule(iterations=10, burn_in=10, thinning=1)
    assert any("burn_in" in v for v in validate(model))
    model.schedule = SamplerSchedule(iterations=10, burn_in=2, thinning=0)
    assert any("thinning" in v for v in validate(model))


def test_hyper_positivity():
    model = two_entity_model()
    model.hyper = Hyperparameters(alpha_tau=0.0)
    assert any("alpha_tau" in v for v in validate(model))


def test_index_sets_single_main_dataset():
    model = two_entity_model()
    sets_row = derive_index_sets(model, model.entity("cellline"))
    sets_col = derive_index_sets(model, model.entity("drug"))
    assert sets_row.U1 == (0,) and sets_row.U2 == ()
    assert sets_col.U2 == (0,) and sets_col.U1 == ()
    assert sets_row.V == sets_row.W == ()


def test_index_sets_similarity():
    gen = np.random.default_rng(5)
    model = similarity_model(gen)
    sets = derive_index_sets(model, model.entity("items"))
    assert sets.W == (0,)
    assert sets.U1 == sets.U2 == sets.V == ()


def test_index_sets_split_feature_priors():
    gen = np.random.default_rng(6)
    model = joint_model(gen)
    sets = derive_index_sets(model, model.entity("hub"))
    assert sets.U1 == (0,)
    assert sets.U2 == (1,)
    assert sets.V == (2, 3)
    assert sets.V_plus == (2,)
    assert sets.V_minus == (3,)
    assert sets.W == (4,)


def test_index_sets_partition_by_role():
    gen = np.random.default_rng(7)
    model = joint_model(gen)
    for entity in model.entity_types:
        sets = derive_index_sets(model, entity)
        assert set(sets.V) == set(sets.V_plus) | set(sets.V_minus)
        assert not set(sets.V_plus) & set(sets.V_minus)
        for i, ds in enumerate(model.datasets):
            roles = sum([
                i in sets.U1 and ds.row_entity == entity.name,
                i in sets.U2 and ds.col_entity == entity.name,
                i in sets.V,
                i in sets.W,
            ])
            expected = 0
            if ds.kind == MAIN:
                expected = (ds.row_entity == entity.name) + (ds.col_entity == entity.name)
            elif ds.row_entity == entity.name:
                expected = 1
            assert roles == expected


def test_model_copy_is_deep_for_state():
    model = two_entity_model()
    clone = model.copy()
    clone.entity_types[0].F[0, 0] = 99.0
    clone.datasets[0].data.mask[0, 0] = False
    clone.datasets[0].noise_precision = 123.0
    assert model.entity_types[0].F[0, 0] != 99.0
    assert model.datasets[0].data.mask[0, 0]
    assert model.datasets[0].noise_precision != 123.0
