import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from gmima.errors import EmptyCompleteCases, EmptyCountry, PatternMismatch
from gmima.impute import fcs_chain
from gmima.logit import fit_logit
from gmima.patterns import (
    assemble_grand_design,
    build_focus_indicator,
    complete_case_subset,
    detect_patterns,
    focus_from_expectation,
    merge_small_patterns,
    patterns_from_flags,
)
from gmima.simulate import toy_two_pattern_dataset
from gmima.tabular import design_matrix, from_frame


from conftest import SMALL_SCHEMA, small_dataset


@pytest.mark.parametrize("values,expected", [
    ([50, 60, 70, 80, 90], [0, 0, 0, 1, 1]),
    ([50, 70, 70, 90], [0, 0, 0, 1]),
    ([40, 40, 40], [0, 0, 0]),
])
def test_focus_indicator_examples(values, expected):
    out = build_focus_indicator(values, ["A"] * len(values))
    np.testing.assert_array_equal(out, expected)


def test_focus_indicator_per_country_and_missing():
    out = build_focus_indicator([10, 90, np.nan, 50, 60, 70], ["A", "A", "A", "B", "B", "B"])
    np.testing.assert_array_equal(out[[0, 1, 3, 4, 5]], [0, 1, 0, 0, 1])
    assert np.isnan(out[2])
    with pytest.raises(EmptyCountry):
        build_focus_indicator([np.nan, 1.0], ["A", "B"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=30), st.sampled_from(["exp", "cube", "affine"]))
def test_focus_indicator_monotone_invariance(values, transform):
    v = np.asarray(values, float)
    f = {"exp": lambda a: np.exp(a / 20), "cube": lambda a: (a - 50) ** 3,
         "affine": lambda a: 3 * a + 7}[transform]
    country = np.array(["A", "B"])[np.arange(v.size) % 2]
    np.testing.assert_array_equal(build_focus_indicator(v, country),
                                  build_focus_indicator(f(v), country))


def test_focus_median_is_over_interviewers():
    # interviewer I0 has ten respondents; a respondent-weighted median would be 10
    iw = ["I0"] * 10 + ["I1", "I2"]
    frame = pd.DataFrame({"id": [f"R{i}" for i in range(12)], "iw": iw, "country": "AA",
                          "y": 1.0, "d": 0.0, "x": [10.0] * 10 + [20.0, 30.0]})
    ds = from_frame(frame, SMALL_SCHEMA).with_schema(expectation="x")
    flag = focus_from_expectation(ds)
    np.testing.assert_array_equal(flag, [0.0] * 10 + [0.0, 1.0])


def test_detect_patterns_examples():
    ps = patterns_from_flags([[1, 1], [0, 1], [1, 1], [0, 0]], ["a", "b"])
    assert ps.H == 2
    assert ps.counts[0] == 2
    np.testing.assert_array_equal(ps.assignment, [0, 1, 0, 2])
    full = patterns_from_flags(np.ones((5, 2)), ["a", "b"])
    assert full.H == 0
    all4 = patterns_from_flags([[1, 1], [0, 1], [1, 0], [0, 0]], ["a", "b"])
    assert all4.H == 3


def test_detect_patterns_group_level():
    ds = small_dataset(200, seed=2)
    ps = detect_patterns(ds)
    d_miss = ds.frame["d"].isna().to_numpy()
    x_miss = ds.frame["x"].isna().to_numpy()
    np.testing.assert_array_equal(ps.complete, ~d_miss & ~x_miss)
    assert ps.counts.sum() == ds.n
    assert len(set(ps.patterns)) == len(ps.patterns)


@pytest.mark.parametrize("seed", range(5))
def test_detect_patterns_permutation_invariant(seed):
    ds = small_dataset(150, seed=seed)
    perm = np.random.default_rng(seed).permutation(ds.n)
    a = detect_patterns(ds)
    b = detect_patterns(ds.subset(ds.row_ids[perm]))
    count_a = dict(zip(a.patterns, a.counts))
    count_b = dict(zip(b.patterns, b.counts))
    assert count_a == count_b
    # same row keeps the same pattern (up to labels)
    lab_a = {r: a.patterns[h] for r, h in zip(a.row_ids, a.assignment)}
    lab_b = {r: b.patterns[h] for r, h in zip(b.row_ids, b.assignment)}
    assert lab_a == lab_b


def test_complete_case_subset():
    ds = small_dataset(50, seed=1)
    ps = detect_patterns(ds)
    cc = complete_case_subset(ds, ps)
    assert cc.n == ps.counts[0]
    assert not cc.frame[list(ds.schema.regressors)].isna().any().any()
    full = small_dataset(30, missing=False)
    assert complete_case_subset(full, detect_patterns(full)).equals(full)
    with pytest.raises(PatternMismatch):
        complete_case_subset(full, detect_patterns(ds))


def test_complete_case_subset_empty():
    ps = patterns_from_flags([[0, 1]], ["a", "b"])
    ds = small_dataset(1, seed=0)
    with pytest.raises(EmptyCompleteCases):
        complete_case_subset(ds, ps)


def test_merge_small_patterns():
    flags = [[1, 1]] * 10 + [[0, 1]] * 8 + [[0, 0]] * 2 + [[1, 0]] * 6
    ps = patterns_from_flags(flags, ["a", "b"])
    with pytest.warns(UserWarning):
        merged = merge_small_patterns(ps, 5)
    assert merged.H == 2
    # (0,0) is one step from both larger patterns; the larger one, (0,1), wins
    assert merged.merged == {(0, 0): (0, 1)}
    assert merged.counts.tolist() == [10, 10, 6]


def test_grand_design_shapes_and_blocks():
    ds = toy_two_pattern_dataset(200, seed=3)
    ps = detect_patterns(ds)
    filled = fcs_chain(ds, seed=1)
    g = assemble_grand_design(filled, ps)
    assert g.K == 4 and g.H == 2
    assert g.full().shape == (200, 12)
    for h in (1, 2):
        Z = g.Zblocks[h - 1]
        assert not Z[ps.assignment != h].any()
        np.testing.assert_array_equal(Z[ps.assignment == h], g.W[ps.assignment == h])
    np.testing.assert_array_equal(g.W[:, 0], 1.0)


def test_grand_design_column_count_three_regressors():
    flags = [[1, 1], [0, 1], [1, 0], [1, 1]]
    ds = small_dataset(4, missing=False)
    ps = patterns_from_flags(flags, ["iws", "capi"], ds.row_ids)
    g = assemble_grand_design(ds, ps)
    assert g.full().shape[1] == 3 + 6
    row = g.full()[1]
    np.testing.assert_array_equal(row[3:6], g.W[1])
    np.testing.assert_array_equal(row[6:9], 0.0)


def test_grand_design_without_patterns_is_fill_in():
    ds = small_dataset(60, missing=False)
    g = assemble_grand_design(ds, detect_patterns(ds))
    assert g.H == 0
    X, _ = design_matrix(ds)
    np.testing.assert_array_equal(g.full(), X)


@pytest.mark.parametrize("seed", range(5))
def test_full_grand_model_equals_cca(seed):
    ds = toy_two_pattern_dataset(500, seed=seed)
    ps = detect_patterns(ds)
    cc = complete_case_subset(ds, ps)
    X, _ = design_matrix(cc)
    cca = fit_logit(cc.frame["y"].to_numpy(), X)
    g = assemble_grand_design(fcs_chain(ds, seed=seed), ps)
    grand = fit_logit(g.y, g.full())
    np.testing.assert_allclose(grand.beta[:g.K], cca.beta, rtol=1e-6)
