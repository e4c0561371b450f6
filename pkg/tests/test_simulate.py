from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from gmima.errors import ConfigError, DegenerateDesign
from gmima.patterns import detect_patterns
from gmima.simulate import (
    CAPI,
    IWS,
    REGRESSORS,
    TARGETS,
    SimConfig,
    analyze_replication,
    apply_missingness,
    empirical_ame,
    expected_missing_rates,
    gen_population,
    monte_carlo,
    sim_schema,
)
from gmima.tabular import design_matrix, to_csv_text


def test_population_deterministic(tiny_config):
    a, ta = gen_population(tiny_config, seed=5)
    b, tb = gen_population(tiny_config, seed=5)
    assert to_csv_text(a) == to_csv_text(b)
    assert ta.to_dict() == tb.to_dict()
    c, _ = gen_population(tiny_config, seed=6)
    assert to_csv_text(a) != to_csv_text(c)


def test_null_focus_effect_gives_zero_ame(tiny_config):
    cfg = SimConfig.from_dict({**tiny_config.to_dict(),
                               "beta_true": {"thinc2": {"iw_exp_high": 0.0}}})
    _, truth = gen_population(cfg, seed=1)
    assert truth.ame["thinc2"] == 0.0


def test_truth_record_ranges(tiny_config):
    complete, truth = gen_population(tiny_config, seed=2)
    assert set(truth.ame) == set(tiny_config.items)
    assert all(-1 <= a <= 1 for a in truth.ame.values())
    assert set(truth.medians) == set(tiny_config.country_codes)
    assert not complete.mask.to_numpy().any()


def test_covariate_means_match_calibration_targets():
    ds, _ = gen_population(SimConfig(), seed=0)
    f = ds.frame
    for col, (mean, _) in TARGETS.items():
        v = (f.groupby("iw_id")[col].first() if col.startswith("iw") else f[col]).to_numpy()
        se = v.std(ddof=1) / np.sqrt(v.size)
        assert abs(v.mean() - mean) < 3 * se, col


def test_expectations_heaped_on_round_numbers():
    ds, _ = gen_population(SimConfig(interviewers_per_country=100), seed=3)
    e = ds.frame.groupby("iw_id")["iw_expect"].first().to_numpy()
    assert ((e >= 0) & (e <= 100)).all()
    assert np.mean(e % 10 == 0) > 0.6
    assert np.mean(e % 5 == 0) > 0.8


def test_focus_split_uses_country_medians(tiny_config):
    complete, truth = gen_population(tiny_config, seed=4)
    f = complete.frame
    for code, med in truth.medians.items():
        rows = f["country"] == code
        np.testing.assert_array_equal(f.loc[rows, "iw_exp_high"],
                                      (f.loc[rows, "iw_expect"] > med).astype(float))


def test_switched_off_missingness_is_identity(tiny_config):
    cfg = replace(tiny_config, iws_propensity={"intercept": -np.inf},
                  capi_propensity={"intercept": -np.inf})
    complete, _ = gen_population(cfg, seed=1)
    assert apply_missingness(complete, cfg, seed=2).equals(complete)


def test_interviewer_block_masking(tiny_config):
    complete, _ = gen_population(tiny_config, seed=1)
    masked = apply_missingness(complete, tiny_config, seed=3)
    m = masked.mask
    iws = m[list(IWS) + ["iw_expect"]]
    # the whole group goes together, for every respondent of the interviewer
    assert (iws.all(axis=1) == iws.any(axis=1)).all()
    per_iw = iws.any(axis=1).groupby(masked.frame["iw_id"]).nunique()
    assert (per_iw == 1).all()
    never = [c for c in REGRESSORS if c not in IWS + CAPI]
    assert not m[never].any().any()


def test_missing_rates_match_propensities():
    cfg = SimConfig()
    complete, _ = gen_population(cfg, seed=7)
    expected = expected_missing_rates(complete, cfg)
    reps = 40
    iws, capi = [], []
    for r in range(reps):
        m = apply_missingness(complete, cfg, seed=r).mask
        iws.append(m["iw_exp_high"].mean())
        capi.append(m[list(CAPI)].any(axis=1).mean())
    for name, draws in (("iws", iws), ("capi", capi)):
        draws = np.asarray(draws)
        se = draws.std(ddof=1) / np.sqrt(reps)
        assert abs(draws.mean() - expected[name]) < 3 * se, name


def test_propensities_must_be_mar():
    with pytest.raises(ConfigError):
        SimConfig(iws_propensity={"intercept": 0.0, "iw_thi": 1.0})
    with pytest.raises(ConfigError):
        SimConfig(capi_propensity={"intercept": 0.0, "r_bmi": 0.1})
    SimConfig(capi_propensity={"intercept": -2.0, "thinc2": 0.5})


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = SimConfig(countries=4, seed=9)
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    back = SimConfig.load(path)
    assert back == cfg
    assert back.items == cfg.items
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"nonsense": 1})


def test_degenerate_design(tiny_config):
    cfg = replace(tiny_config, capi_propensity={"intercept": 50.0})
    complete, _ = gen_population(cfg, seed=1)
    with pytest.raises(DegenerateDesign):
        apply_missingness(complete, cfg, seed=1)


def test_true_ame_two_ways():
    cfg = SimConfig(interviewers_per_country=20, seed=3)
    complete, truth = gen_population(cfg)
    X, _ = design_matrix(complete)
    beta = truth.beta_true["thinc2"]
    X1, X0 = X.copy(), X.copy()
    X1[:, 1], X0[:, 1] = 1, 0
    rowwise = expit(X1 @ beta) - expit(X0 @ beta)
    se_closed = rowwise.std(ddof=1) / np.sqrt(rowwise.size)
    est, mcse = empirical_ame(cfg, "thinc2", factor=10)
    assert abs(est - truth.ame["thinc2"]) < 3 * np.hypot(mcse, se_closed)


def test_methods_coincide_without_missingness(tiny_config):
    cfg = replace(tiny_config, iws_propensity={"intercept": -np.inf},
                  capi_propensity={"intercept": -np.inf})
    complete, _ = gen_population(cfg, seed=8)
    out = analyze_replication(complete, "thinc2", m=2, seed=1, burn_in=1)
    ref = out["cca"]
    for method in ("fi-mi", "bbma-bic", "bbma-aic"):
        assert out[method]["estimate"] == pytest.approx(ref["estimate"], rel=1e-10)
        assert out[method]["se"] == pytest.approx(ref["se"], rel=1e-8)


def test_monte_carlo_reproducible_and_counts(tiny_config):
    kw = dict(replications=50, m=2, methods=["cca", "fi-mi"], seed=4, burn_in=1)
    a = monte_carlo(tiny_config, **kw)
    b = monte_carlo(tiny_config, **kw)
    assert a.artifacts() == b.artifacts()
    s = a.summary.set_index("method")
    assert (s["n_ok"] + s["n_failed"] == 50).all()
    with pytest.raises(ConfigError):
        monte_carlo(tiny_config, replications=10)


def test_schema_groups_partition_regressors():
    s = sim_schema()
    assert set(s.regressors) == set(REGRESSORS)
    assert s.focus == "iw_exp_high"
