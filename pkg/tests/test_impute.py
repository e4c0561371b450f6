import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from gmima.errors import AllMissingColumn, NoDonorsInCountry, TooFewImputations
from gmima.impute import (
    ImputationSet,
    choose_m,
    donor_pools,
    fcs_chain,
    hot_deck_interviewers,
    multiple_impute,
    rubin_pool,
)
from gmima.patterns import interviewer_table
from gmima.simulate import apply_missingness, gen_population, toy_two_pattern_dataset
from gmima.tabular import from_frame, to_csv_text

from conftest import SMALL_SCHEMA, small_dataset


def test_rubin_no_between_variance():
    p = rubin_pool([2, 2, 2], [0.1, 0.1, 0.1])
    assert (p.qbar, p.b, p.fmi) == (2.0, 0.0, 0.0)
    assert p.t == pytest.approx(0.1)
    assert p.df == np.inf


def test_rubin_hand_example():
    p = rubin_pool([1, 2, 3], [0.1, 0.1, 0.1])
    assert p.qbar == 2.0
    assert p.b == 1.0
    assert p.t == pytest.approx(1.43333, abs=1e-5)
    assert p.fmi == pytest.approx(0.93023, abs=1e-5)
    assert p.df == pytest.approx(2 * (1 + 0.1 / (4 / 3)) ** 2)
    assert 0 <= p.fmi_adjusted <= 1


def test_rubin_rejects_single_imputation():
    with pytest.raises(TooFewImputations):
        rubin_pool([1.0], [0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 5)), min_size=2, max_size=30))
def test_rubin_invariants(pairs):
    q, u = map(np.array, zip(*pairs))
    p = rubin_pool(q, u)
    m = len(pairs)
    assert p.t == pytest.approx(p.ubar + (1 + 1 / m) * p.b)
    assert p.t >= p.ubar - 1e-12
    assert 0 <= p.fmi <= 1


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5), st.integers(2, 50))
def test_rubin_identical_pairs(q, u, m):
    p = rubin_pool([q] * m, [u] * m)
    assert p.qbar == pytest.approx(q)
    assert p.t == pytest.approx(u)
    assert p.fmi == 0.0


@pytest.mark.parametrize("fmi,m", [(0.85, 85), (0.0, 2), (1.0, 100), (0.001, 2), (0.301, 31)])
def test_choose_m(fmi, m):
    assert choose_m(fmi) == m


def _iw_table(rows):
    return pd.DataFrame(rows, columns=["iw", "country", "a", "b", "female", "age"]).set_index("iw")


def test_hot_deck_single_donor_copied():
    table = _iw_table([("I1", "A", 5.0, 1.0, 1, 40), ("I2", "A", np.nan, np.nan, 0, 60)])
    out = hot_deck_interviewers(table, seed=1, columns=["a", "b"])
    assert out.loc["I2", "a"] == 5.0 and out.loc["I2", "b"] == 1.0


def test_hot_deck_complete_recipient_unchanged_and_deterministic():
    table = _iw_table([("I1", "A", 5.0, 1.0, 1, 40), ("I2", "A", 7.0, 0.0, 0, 60),
                       ("I3", "A", np.nan, 0.0, 1, 45), ("I4", "A", 3.0, 1.0, 0, 50)])
    a = hot_deck_interviewers(table, seed=9, columns=["a", "b"])
    b = hot_deck_interviewers(table, seed=9, columns=["a", "b"])
    pd.testing.assert_frame_equal(a, b)
    pd.testing.assert_frame_equal(a.drop(index="I3"), table.drop(index="I3"))


def test_hot_deck_donates_whole_record():
    rng = np.random.default_rng(0)
    rows = [(f"D{i}", "A", float(i), float(10 * i), 1, 50) for i in range(20)]
    rows.append(("R", "A", np.nan, np.nan, 1, 50))
    out = hot_deck_interviewers(_iw_table(rows), seed=int(rng.integers(1000)), columns=["a", "b"])
    assert out.loc["R", "b"] == 10 * out.loc["R", "a"]


def test_donor_pools_roster_matching():
    table = _iw_table([("I1", "A", 1.0, 1.0, 1, 40), ("I2", "A", 2.0, 1.0, 0, 41),
                       ("I3", "A", 3.0, 1.0, 1, 70), ("R", "A", np.nan, 1.0, 1, 45),
                       ("S", "A", np.nan, 1.0, 0, 80)])
    pools = donor_pools(table, ["a", "b"], "country", {"gender": "female", "age": "age"})
    assert pools["R"] == ["I1"]
    # no male interviewer within ten years of 80: any same-country donor
    assert pools["S"] == ["I1", "I2", "I3"]


def test_hot_deck_no_donor_in_country():
    table = _iw_table([("I1", "A", 1.0, 1.0, 1, 40), ("I2", "B", np.nan, 1.0, 1, 40)])
    with pytest.raises(NoDonorsInCountry):
        hot_deck_interviewers(table, seed=0, columns=["a", "b"])


def test_fcs_identity_on_complete_data():
    ds = small_dataset(50, missing=False)
    assert fcs_chain(ds, seed=3).equals(ds)


def test_fcs_degenerate_binary_column():
    ds = small_dataset(200, seed=1)
    frame = ds.frame.copy()
    frame["d"] = np.where(frame["d"].isna(), np.nan, 1.0)
    out = fcs_chain(ds.with_frame(frame), seed=2)
    assert (out.frame["d"] == 1.0).all()


def test_fcs_deterministic_and_observed_untouched():
    ds = small_dataset(200, seed=5)
    a, b = fcs_chain(ds, seed=11), fcs_chain(ds, seed=11)
    assert to_csv_text(a) == to_csv_text(b)
    obs = ~ds.mask
    for c in ds.schema.regressors:
        np.testing.assert_array_equal(a.frame[c][obs[c]], ds.frame[c][obs[c]])
    assert not a.frame[list(ds.schema.regressors)].isna().any().any()


def test_fcs_all_missing_column():
    ds = small_dataset(40, seed=1)
    frame = ds.frame.copy()
    frame["x"] = np.nan
    with pytest.raises(AllMissingColumn):
        fcs_chain(ds.with_frame(frame), seed=0)


def test_pmm_imputes_observed_values():
    ds = toy_two_pattern_dataset(300, seed=2)
    out = fcs_chain(ds, seed=4)
    observed = set(ds.frame["x1"].dropna())
    imputed = out.frame["x1"][ds.frame["x1"].isna()]
    assert set(imputed) <= observed


def test_pmm_mean_matches_observed_under_mcar():
    rng = np.random.default_rng(8)
    n = 600
    x = rng.normal(2.0, 1.5, n)
    lost = rng.random(n) < 0.3
    frame = pd.DataFrame({"id": [f"R{i}" for i in range(n)], "iw": [f"I{i % 60}" for i in range(n)],
                          "country": "AA", "y": (rng.random(n) < 0.5).astype(float),
                          "d": rng.integers(0, 2, n).astype(float), "x": np.where(lost, np.nan, x)})
    ds = from_frame(frame, SMALL_SCHEMA).with_schema(interviewer_columns=())
    obs = x[~lost]
    imp = multiple_impute(ds, 50, seed=1, burn_in=2)
    means = np.array([d.frame["x"].to_numpy()[lost].mean() for d in imp.completed])
    se = obs.std(ddof=1) * np.sqrt(1 / lost.sum() + 1 / obs.size)
    assert abs(means.mean() - obs.mean()) < 4 * se


@pytest.fixture(scope="module")
def survey():
    from gmima.simulate import SimConfig
    cfg = SimConfig(countries=2, interviewers_per_country=15, respondents_per_interviewer=6.0)
    complete, _ = gen_population(cfg, seed=3)
    return complete, apply_missingness(complete, cfg, seed=4)


@pytest.fixture(scope="module")
def survey_imputations(survey):
    return multiple_impute(survey[1], 5, seed=21, burn_in=3)


def test_multiple_impute_observed_cells_immutable(survey, survey_imputations):
    _, ds = survey
    obs = ~ds.mask
    for d in survey_imputations.completed:
        for c in ds.schema.columns:
            pd.testing.assert_series_equal(d.frame[c][obs[c]], ds.frame[c][obs[c]])
        assert not d.frame[list(ds.schema.regressors)].isna().any().any()


def test_multiple_impute_interviewer_consistency(survey, survey_imputations):
    _, ds = survey
    s = ds.schema
    cols = list(s.interviewer_columns) + [s.expectation]
    for d in survey_imputations.completed:
        assert (d.frame.groupby(s.interviewer)[cols].nunique() <= 1).all().all()
        interviewer_table(d, cols)


def test_multiple_impute_members_differ(survey, survey_imputations):
    _, ds = survey
    miss = ds.mask["r_bmi"].to_numpy()
    assert miss.any()
    draws = np.array([d.frame["r_bmi"].to_numpy()[miss] for d in survey_imputations.completed])
    assert len({tuple(r) for r in draws}) == len(draws)


def test_multiple_impute_identity_without_missingness():
    ds = small_dataset(60, missing=False)
    imp = multiple_impute(ds, 2, seed=0)
    assert all(d.equals(ds) for d in imp.completed)
    with pytest.raises(TooFewImputations):
        multiple_impute(ds, 1, seed=0)


def test_imputation_serialisation_deterministic(survey, tmp_path):
    _, ds = survey
    a = multiple_impute(ds, 2, seed=5, burn_in=2).artifacts()
    b = multiple_impute(ds, 2, seed=5, burn_in=2).artifacts()
    assert a == b
    c = multiple_impute(ds, 2, seed=6, burn_in=2).artifacts()
    assert a["imputation_001.csv"] != c["imputation_001.csv"]


def test_imputation_set_round_trip(survey_imputations, tmp_path):
    survey_imputations.save(tmp_path)
    back = ImputationSet.load(tmp_path, survey_imputations.completed[0].schema)
    assert back.m == survey_imputations.m
    assert back.artifacts() == survey_imputations.artifacts()
