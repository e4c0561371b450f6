import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmima.errors import DuplicateId, EmptyEligibleSet, MissingColumn, SchemaError, TypeViolation
from gmima.tabular import (
    Schema,
    country_split,
    design_matrix,
    format_rate,
    load_csv,
    read_csv_text,
    response_rate,
    to_csv_text,
)

from conftest import SMALL_SCHEMA, small_dataset

HEADER = "id,iw,country,y,d,x\n"


def test_load_fully_observed(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(HEADER + "R1,I1,AA,1,0,0.5\nR2,I1,AA,0,0,1.5\nR3,I2,BB,1,1,-2\n")
    ds = load_csv(path, SMALL_SCHEMA)
    assert ds.n == 3
    assert not ds.mask.to_numpy().any()
    np.testing.assert_array_equal(ds.row_ids, [0, 1, 2])


def test_na_token_masks_single_cell():
    ds = read_csv_text(HEADER + "R1,I1,AA,1,0,NA\nR2,I1,AA,0,0,1.5\n", SMALL_SCHEMA)
    mask = ds.mask
    assert mask.loc[0, "x"]
    assert mask.to_numpy().sum() == 1


def test_empty_cell_is_missing():
    ds = read_csv_text(HEADER + "R1,I1,AA,1,,0.1\n", SMALL_SCHEMA)
    assert np.isnan(ds.frame.loc[0, "d"])


def test_custom_na_token():
    from dataclasses import replace
    schema = replace(SMALL_SCHEMA, na_token=".")
    ds = read_csv_text(HEADER + "R1,I1,AA,1,0,.\n", schema)
    assert ds.mask.loc[0, "x"]


def test_non_numeric_continuous_raises():
    with pytest.raises(TypeViolation):
        read_csv_text(HEADER + "R1,I1,AA,1,0,abc\n", SMALL_SCHEMA)


def test_binary_out_of_range_raises():
    with pytest.raises(TypeViolation):
        read_csv_text(HEADER + "R1,I1,AA,2,0,1\n", SMALL_SCHEMA)


def test_missing_column_and_duplicate_id():
    with pytest.raises(MissingColumn):
        read_csv_text("id,iw,country,y,d\nR1,I1,AA,1,0\n", SMALL_SCHEMA)
    with pytest.raises(DuplicateId):
        read_csv_text(HEADER + "R1,I1,AA,1,0,1\nR1,I1,AA,1,0,1\n", SMALL_SCHEMA)


def test_missing_country_raises():
    with pytest.raises(TypeViolation):
        read_csv_text(HEADER + "R1,I1,NA,1,0,1\n", SMALL_SCHEMA)


def test_schema_requires_partition():
    with pytest.raises(SchemaError):
        Schema(columns={"iw": "id", "c": "id", "y": "binary", "d": "binary", "x": "continuous"},
               outcomes=("y",), focus="d", controls=("x",), interviewer="iw", country="c",
               groups={"a": ("d",)})


def _rate_dataset(ones, total):
    rows = "".join(f"R{i},I1,AA,{int(i < ones)},0,1\n" for i in range(total))
    return read_csv_text(HEADER + rows, SMALL_SCHEMA)


@pytest.mark.parametrize("ones,total,expected", [(51, 70, "0.729"), (132, 140, "0.943"),
                                                 (0, 10, "0.000")])
def test_response_rate_examples(ones, total, expected):
    assert format_rate(response_rate(_rate_dataset(ones, total), "y")) == expected


def test_response_rate_ignores_missing_and_rejects_empty():
    ds = read_csv_text(HEADER + "R1,I1,AA,1,0,1\nR2,I1,AA,NA,0,1\n", SMALL_SCHEMA)
    assert response_rate(ds, "y") == 1.0
    ds = read_csv_text(HEADER + "R1,I1,AA,NA,0,1\n", SMALL_SCHEMA)
    with pytest.raises(EmptyEligibleSet):
        response_rate(ds, "y")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([0, 1, None]), min_size=1, max_size=40).filter(
    lambda v: any(x is not None for x in v)), st.randoms())
def test_response_rate_permutation_invariant(values, rnd):
    cell = lambda v: "NA" if v is None else str(v)
    rows = [f"R{i},I1,AA,{cell(v)},0,1\n" for i, v in enumerate(values)]
    a = response_rate(read_csv_text(HEADER + "".join(rows), SMALL_SCHEMA), "y")
    rnd.shuffle(rows)
    b = response_rate(read_csv_text(HEADER + "".join(rows), SMALL_SCHEMA), "y")
    assert a == b


def test_country_split_examples():
    ds = read_csv_text(HEADER + "R1,I1,A,1,0,1\nR2,I1,A,1,0,1\nR3,I2,B,0,1,2\n", SMALL_SCHEMA)
    parts = country_split(ds)
    assert [(c, d.n) for c, d in parts] == [("A", 2), ("B", 1)]
    single = read_csv_text(HEADER + "R1,I1,A,1,0,1\nR2,I1,A,1,0,1\n", SMALL_SCHEMA)
    [(code, same)] = country_split(single)
    assert same.equals(single)


def test_country_split_partitions_rows():
    ds = small_dataset(300, seed=4)
    parts = country_split(ds)
    ids = np.concatenate([d.row_ids for _, d in parts])
    assert sum(d.n for _, d in parts) == ds.n
    assert len(set(ids)) == ds.n
    joined = np.sort(ids)
    np.testing.assert_array_equal(joined, ds.row_ids)


def test_country_split_on_synthetic_population(tiny_config):
    from gmima.simulate import gen_population
    ds, _ = gen_population(tiny_config, seed=1)
    parts = country_split(ds)
    assert len(parts) == tiny_config.countries
    assert sum(d.n for _, d in parts) == ds.n


@pytest.mark.parametrize("seed", range(5))
def test_csv_round_trip(seed):
    ds = small_dataset(120, seed=seed)
    back = read_csv_text(to_csv_text(ds), ds.schema)
    assert back.equals(ds)
    assert back.mask.equals(ds.mask)


def test_design_matrix_puts_focus_second():
    ds = small_dataset(20, missing=False)
    X, names = design_matrix(ds)
    assert names == ["_const", "d", "x"]
    np.testing.assert_array_equal(X[:, 0], 1.0)
