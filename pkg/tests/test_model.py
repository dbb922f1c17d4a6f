import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import banditfluid as bf
from banditfluid.model import min_positive_rate


def simple_dynamic():
    cls = bf.BanditClass(
        arrival_rate=1.0,
        entry_dist=[0.5, 0.5],
        gen_passive=[[1.0, 0.0, 0.3], [0.0, 0.2, 0.0]],
        gen_active=[[2.0, 0.0, 0.1], [0.5, 0.4, 0.0]],
        cost_passive=[1.0, 2.0],
        cost_active=[0.5, -0.5],
    )
    return bf.ModelInstance(classes=(cls,), alpha=1.0, population=bf.DYNAMIC)


def test_valid_model_passes():
    report = bf.validate(simple_dynamic())
    assert report.ok
    assert report.violations == ()


def test_fixed_population_requires_zero_arrivals():
    cls = bf.BanditClass(
        arrival_rate=0.3,
        entry_dist=[1.0],
        gen_passive=[[0.0, 0.0]],
        gen_active=[[0.0, 0.0]],
        cost_passive=[1.0],
        cost_active=[1.0],
    )
    model = bf.ModelInstance(
        classes=(cls,), alpha=1.0, population=bf.FixedPopulation((np.array([2.0]),))
    )
    report = bf.validate(model)
    assert any("lambda_k = 0" in v for v in report.violations)


def test_dynamic_class_must_admit_departure():
    cls = bf.BanditClass(
        arrival_rate=1.0,
        entry_dist=[1.0, 0.0],
        gen_passive=[[0.0, 0.0, 0.3], [0.0, 0.2, 0.0]],
        gen_active=[[0.0, 0.0, 0.1], [0.0, 0.4, 0.0]],
        cost_passive=[1.0, 2.0],
        cost_active=[0.5, 0.5],
    )
    model = bf.ModelInstance(classes=(cls,), alpha=1.0)
    report = bf.validate(model)
    assert any("admit departure" in v for v in report.violations)


def test_entry_dist_must_normalize():
    cls = dataclasses.replace(simple_dynamic().classes[0], entry_dist=np.array([0.5, 0.4]))
    report = bf.validate(bf.ModelInstance(classes=(cls,), alpha=1.0))
    assert any("sums to" in v for v in report.violations)


def test_validate_is_pure_and_idempotent():
    model = simple_dynamic()
    r1 = bf.validate(model)
    r2 = bf.validate(model)
    assert r1 == r2
    assert bf.validate(model).ok  # untouched by prior calls


def test_derived_diagonal_rows_sum_to_zero():
    model = simple_dynamic()
    for cls in model.classes:
        for a in (0, 1):
            interior = cls.interior_generator(a)
            rowsum = interior.sum(axis=1) + cls.departure_rates(a)
            assert np.abs(rowsum).max() < 1e-12


def test_diagonal_entries_are_ignored_on_construction():
    with_diag = bf.BanditClass(
        arrival_rate=1.0,
        entry_dist=[1.0],
        gen_passive=[[1.0, 99.0]],  # the 99 sits on the diagonal slot
        gen_active=[[1.0, 0.0]],
        cost_passive=[0.0],
        cost_active=[0.0],
    )
    assert with_diag.gen_passive[0, 1] == 0.0
    assert with_diag.outflow(0)[0] == 1.0


# --- exactly-alpha transform ------------------------------------------------------

def test_transform_identity_at_zero(three_state):
    out = bf.exactly_alpha_transform(three_state, 0.0)
    assert np.array_equal(out.classes[0].cost_passive, three_state.classes[0].cost_passive)


def test_transform_shifts_reference_cost(three_state):
    out = bf.exactly_alpha_transform(three_state, 1.0)
    assert out.classes[0].cost_passive[0] == pytest.approx(0.542, abs=1e-12)
    # original untouched
    assert three_state.classes[0].cost_passive[0] == pytest.approx(-0.458, abs=1e-15)


def test_transform_uniform_shift():
    model = simple_dynamic()
    zeroed = dataclasses.replace(
        model,
        classes=(dataclasses.replace(model.classes[0], cost_passive=np.zeros(2)),),
    )
    out = bf.exactly_alpha_transform(zeroed, 2.0)
    assert np.array_equal(out.classes[0].cost_passive, [2.0, 2.0])


def test_transform_rejects_negative():
    with pytest.raises(ValueError):
        bf.exactly_alpha_transform(simple_dynamic(), -0.5)


@settings(max_examples=30, deadline=None)
@given(
    c1=st.floats(min_value=0.0, max_value=5.0, allow_nan=False),
    c2=st.floats(min_value=0.0, max_value=5.0, allow_nan=False),
)
def test_transform_composes_additively(c1, c2):
    model = simple_dynamic()
    twice = bf.exactly_alpha_transform(bf.exactly_alpha_transform(model, c1), c2)
    once = bf.exactly_alpha_transform(model, c1 + c2)
    for a, b in zip(twice.classes, once.classes):
        assert np.abs(a.cost_passive - b.cost_passive).max() <= 1e-15


# --- uniformization rate ----------------------------------------------------------

def test_uniformization_single_class():
    cls = bf.mmsm_class(1.0, 1.0, 1.0, 1.0)  # theta=1, mu+theta~=2
    model = bf.mmsm_model(1.0, [cls])
    assert bf.uniformization_rate(model) == pytest.approx(2.0)


def test_uniformization_zero_for_static():
    cls = bf.BanditClass(
        arrival_rate=0.0,
        entry_dist=[1.0],
        gen_passive=[[0.0, 0.0]],
        gen_active=[[0.0, 0.0]],
        cost_passive=[1.0],
        cost_active=[1.0],
    )
    model = bf.ModelInstance(
        classes=(cls,), alpha=1.0, population=bf.FixedPopulation((np.array([1.0]),))
    )
    assert bf.uniformization_rate(model) == 0.0


def test_uniformization_three_state(three_state):
    assert bf.uniformization_rate(three_state) == pytest.approx(0.8137, abs=1e-12)


def test_min_positive_rate(three_state):
    assert min_positive_rate(three_state) == pytest.approx(0.0133)


# --- model files ------------------------------------------------------------------

def test_json_round_trip(tmp_path, three_state):
    path = tmp_path / "m.json"
    bf.save_model(three_state, path)
    again = bf.load_model(path)
    assert again == three_state


def test_loader_rejects_nan(tmp_path):
    doc = bf.model_to_dict(simple_dynamic())
    text = json.dumps(doc).replace("2.0", "NaN", 1)
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ValueError):
        bf.load_model(path)


def test_loader_rejects_invalid_by_default(tmp_path):
    doc = bf.model_to_dict(simple_dynamic())
    doc["classes"][0]["arrival_rate"] = 0.0  # dynamic model with lambda = 0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(bf.InvalidModel):
        bf.load_model(path)
    model = bf.load_model(path, check=False)
    assert not bf.validate(model).ok


def test_mmsm_class_folds_abandonment_costs():
    cls = bf.mmsm_class(1.0, 2.0, 0.5, 0.25, cost_queue=1.0, cost_service=0.5,
                        abandon_cost_queue=2.0, abandon_cost_service=4.0)
    assert cls.cost_passive[0] == pytest.approx(1.0 + 2.0 * 0.5)
    assert cls.cost_active[0] == pytest.approx(0.5 + 4.0 * 0.25)
    assert cls.departure_rates(0)[0] == pytest.approx(0.5)
    assert cls.departure_rates(1)[0] == pytest.approx(2.25)
