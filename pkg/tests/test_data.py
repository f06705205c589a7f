import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgm_cmprsk.data import (
    LongitudinalRecord,
    SurvivalRecord,
    load_longitudinal_csv,
    load_survival_csv,
    validate_joint_dataset,
    write_longitudinal_csv,
    write_survival_csv,
)
from lgm_cmprsk.errors import DomainError, ParseError, SchemaError, ValidationError
from lgm_cmprsk.simulate import SimConfig, simulate_example5


def _write(tmp_path, text, name="f.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_poisson_row_parses(tmp_path):
    recs = load_longitudinal_csv(_write(tmp_path, "id,time,value\n1,0.5,3\n"), "poisson")
    assert len(recs) == 1
    r = recs[0]
    assert (r.individual_id, r.time, r.value) == (1, 0.5, 3)


def test_poisson_rejects_fractional_count(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_longitudinal_csv(_write(tmp_path, "id,time,value\n1,0.5,3.2\n"), "poisson")
    assert exc.value.row == 1


@pytest.mark.parametrize("text", ["id,time,value\n1,-0.5,3\n", "id,time,value\n0,0.5,3\n"])
def test_longitudinal_domain(tmp_path, text):
    with pytest.raises(DomainError):
        load_longitudinal_csv(_write(tmp_path, text))


def test_missing_column(tmp_path):
    with pytest.raises(SchemaError):
        load_longitudinal_csv(_write(tmp_path, "id,value\n1,3\n"))


def test_non_finite_value(tmp_path):
    with pytest.raises(ParseError):
        load_longitudinal_csv(_write(tmp_path, "id,time,value\n1,0.5,nan\n"))


def test_survival_rows(tmp_path):
    recs = load_survival_csv(_write(tmp_path, "id,time,cause\n1,2.0,1\n2,1.5,0\n"), 3)
    assert (recs[0].individual_id, recs[0].time, recs[0].cause) == (1, 2.0, 1)
    # censored: every indicator is zero
    assert [recs[1].indicator(j) for j in (1, 2, 3)] == [0, 0, 0]
    assert [recs[0].indicator(j) for j in (1, 2, 3)] == [1, 0, 0]


def test_survival_cause_out_of_range(tmp_path):
    with pytest.raises(DomainError):
        load_survival_csv(_write(tmp_path, "id,time,cause\n1,2.0,4\n"), 3)


def test_survival_time_positive(tmp_path):
    with pytest.raises(DomainError):
        load_survival_csv(_write(tmp_path, "id,time,cause\n1,0,1\n"), 3)


def test_covariate_columns_kept(tmp_path):
    recs = load_survival_csv(_write(tmp_path, "id,time,cause,Age\n1,2.0,1,40\n"), 1)
    assert recs[0].covariates["Age"] == 40.0


def test_validate_small():
    longs = [LongitudinalRecord(7, t, 1.0) for t in (0.1, 0.2, 0.3)]
    ds = validate_joint_dataset(longs, [SurvivalRecord(7, 1.0, 1)], 1)
    assert ds.n_individuals == 1
    assert ds.id_index == {7: 1}


def test_late_observation_rejected_or_truncated():
    longs = [LongitudinalRecord(1, 0.5, 1.0), LongitudinalRecord(1, 2.0, 1.0)]
    surv = [SurvivalRecord(1, 1.0, 1)]
    with pytest.raises(ValidationError):
        validate_joint_dataset(longs, surv, 1)
    ds = validate_joint_dataset(longs, surv, 1, on_late_observation="truncate")
    assert len(ds.longitudinal) == 1


def test_orphan_and_duplicate_ids():
    with pytest.raises(ValidationError):
        validate_joint_dataset([LongitudinalRecord(2, 0.1, 1.0)], [SurvivalRecord(1, 1.0, 0)], 1)
    with pytest.raises(ValidationError):
        validate_joint_dataset([LongitudinalRecord(1, 0.1, 1.0)],
                               [SurvivalRecord(1, 1.0, 0), SurvivalRecord(1, 2.0, 0)], 1)


def test_validate_is_idempotent():
    ds = simulate_example5(SimConfig(n_individuals=20, seed=3))
    again = validate_joint_dataset(ds.longitudinal, ds.survival, ds.n_causes)
    assert again == ds


def test_simulated_round_trip(tmp_path):
    ds = simulate_example5(SimConfig(n_individuals=1000, seed=2))
    assert 10_000 <= len(ds.longitudinal) <= 15_000
    write_longitudinal_csv(tmp_path / "l.csv", ds.longitudinal)
    write_survival_csv(tmp_path / "s.csv", ds.survival)
    longs = load_longitudinal_csv(tmp_path / "l.csv", "poisson")
    survs = load_survival_csv(tmp_path / "s.csv", 3)
    assert len({r.individual_id for r in longs}) == 1000
    again = validate_joint_dataset(longs, survs, 3)
    assert again.longitudinal == ds.longitudinal
    assert again.survival == ds.survival


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 50), st.floats(0, 1e3, allow_nan=False), finite), min_size=1,
                max_size=20))
def test_round_trip_bit_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rt") / "l.csv"
    recs = [LongitudinalRecord(i, t, v, {"z": v / 3}) for i, t, v in rows]
    write_longitudinal_csv(path, recs)
    back = load_longitudinal_csv(path)
    assert [(r.individual_id, r.time, r.value, r.covariates["z"]) for r in back] == \
        [(r.individual_id, r.time, r.value, r.covariates["z"]) for r in recs]
    assert all(math.copysign(1, a.value) == math.copysign(1, b.value) for a, b in zip(back, recs))
