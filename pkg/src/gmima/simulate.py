"""Synthetic interviewer/respondent surveys with two-level MAR missingness.

Interviewers are nested in countries and respondents in interviewers. Each
interviewer reports an expected response rate (0-100, heaped on round
numbers); the focus regressor flags expectations strictly above the
country median. Four binary response indicators follow logit models in the
interviewer and respondent covariates.

Missingness comes from two sources: interviewer-survey nonparticipation
(one draw per interviewer, masking the whole interviewer-survey group for
all of that interviewer's respondents) and respondent-level item
nonresponse in the CAPI group (one draw per respondent). Both propensities
are logits in always-observed columns, so the data are MAR by construction.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import yaml
from scipy import optimize, stats
from scipy.special import expit, logit

from .averaging import average_grid, fit_grid, grand_designs, pool_estimates
from .errors import ConfigError, DegenerateDesign, GmimaError
from .impute import DEFAULT_BURN_IN, multiple_impute
from .logit import ame_contrast, ame_value, fit_logit
from .patterns import (
    GrandDesign,
    build_focus_indicator,
    detect_patterns,
    merge_small_patterns,
)
from .tabular import Dataset, Schema, design_matrix, from_frame

COUNTRIES = ("ES", "IT", "GR", "PT", "PL", "SI", "AT", "DE", "BE", "LU", "SE", "EE")
ITEMS = ("thinc2", "ypen1", "bacc", "home")
METHODS = ("cca", "fi-mi", "bbma-bic", "bbma-aic")

IWS = ("iw_exp_high", "iw_thi", "iw_good_health")
ROSTER = ("iw_female", "iw_age")
BASE = ("r_female", "r_age", "r_couple", "r_past_waves")
CAPI = ("r_good_health", "r_numeracy", "r_bmi", "r_fluency")
REGRESSORS = IWS + ROSTER + BASE + CAPI

# calibration targets: (mean, sd) of the eligible-sample summary statistics
TARGETS = {
    "iw_female": (0.721, 0.449),
    "iw_age": (51.388, 11.767),
    "iw_thi": (0.702, 0.458),
    "iw_good_health": (0.585, 0.493),
    "iw_exp_high": (0.439, 0.496),
    "r_female": (0.552, 0.497),
    "r_age": (65.806, 8.120),
    "r_couple": (0.758, 0.428),
    "r_past_waves": (0.807, 0.395),
    "r_good_health": (0.613, 0.487),
    "r_numeracy": (0.657, 0.475),
    "r_bmi": (27.146, 4.594),
    "r_fluency": (20.008, 7.860),
}
# respondent ages are confined to the eligible birth cohorts
AGE_RANGE = (51.0, 81.0)


def _default_beta() -> dict[str, dict[str, float]]:
    shared = {
        "iw_thi": 0.30, "iw_good_health": 0.10, "iw_female": 0.10, "iw_age": 0.005,
        "r_female": -0.10, "r_age": -0.01, "r_couple": 0.20, "r_past_waves": 0.30,
        "r_good_health": 0.20, "r_numeracy": 0.30, "r_bmi": -0.01, "r_fluency": 0.02,
    }
    # intercepts are logits of the target response rate at the covariate means
    rates = {"thinc2": 0.76, "ypen1": 0.85, "bacc": 0.62, "home": 0.66}
    focus = {"thinc2": 0.45, "ypen1": 0.50, "bacc": 0.40, "home": 0.35}
    return {
        item: {"intercept": float(logit(rates[item])), "iw_exp_high": focus[item], **shared}
        for item in ITEMS
    }


@dataclass(frozen=True)
class SimConfig:
    """Generator settings.

    ``beta_true[item]`` holds an ``intercept`` and slopes keyed by regressor;
    slopes act on covariates centred at their calibration means, so the
    intercept is the logit of the response rate of an average respondent.
    ``iws_propensity`` and ``capi_propensity`` are logit coefficients
    (``intercept`` plus raw, uncentred covariates) of the probability that
    an interviewer skips the interviewer survey and that a respondent has
    CAPI item nonresponse. An intercept of ``-inf`` switches a source off.
    """

    countries: int = 12
    interviewers_per_country: int = 30
    respondents_per_interviewer: float = 8.0
    beta_true: dict = field(default_factory=_default_beta)
    heaping: tuple[float, float, float] = (0.7, 0.2, 0.1)
    expectation_mean: float = 0.55
    expectation_thi_shift: float = 0.10
    expectation_concentration: float = 6.0
    iws_propensity: dict = field(default_factory=lambda: {
        "intercept": 0.2, "iw_female": 0.3, "iw_age": -0.02})
    capi_propensity: dict = field(default_factory=lambda: {
        "intercept": -2.3, "r_female": -0.2, "r_age": 0.02, "r_past_waves": -0.5})
    capi_item_share: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "heaping", tuple(float(h) for h in self.heaping))
        self.validate()

    def validate(self) -> None:
        if self.countries < 1 or self.interviewers_per_country < 1:
            raise ConfigError("countries and interviewers per country must be positive")
        if self.countries > len(COUNTRIES):
            raise ConfigError(f"at most {len(COUNTRIES)} countries are supported")
        if not self.respondents_per_interviewer >= 1:
            raise ConfigError("respondents per interviewer must be at least 1")
        h = np.asarray(self.heaping)
        if h.shape != (3,) or (h < 0).any() or abs(h.sum() - 1) > 1e-9:
            raise ConfigError("heaping shares must be three non-negative numbers summing to 1")
        if not 0 < self.capi_item_share <= 1:
            raise ConfigError("capi_item_share must lie in (0, 1]")
        if not 0 < self.expectation_mean + self.expectation_thi_shift < 1 or not 0 < self.expectation_mean < 1:
            raise ConfigError("expectation means must lie in (0, 1)")
        for item, coefs in self.beta_true.items():
            unknown = set(coefs) - set(REGRESSORS) - {"intercept"}
            if unknown:
                raise ConfigError(f"beta_true[{item!r}] names unknown regressors {sorted(unknown)}")
        # MAR by construction: propensities may only read always-observed columns
        self._check_propensity("iws_propensity", self.iws_propensity, ROSTER)
        self._check_propensity("capi_propensity", self.capi_propensity,
                               ROSTER + BASE + tuple(self.beta_true))

    @staticmethod
    def _check_propensity(name, coefs, allowed):
        bad = set(coefs) - set(allowed) - {"intercept"}
        if bad:
            raise ConfigError(
                f"{name} reads {sorted(bad)}, which can be masked; allowed: {list(allowed)}"
            )

    @property
    def items(self) -> tuple[str, ...]:
        return tuple(self.beta_true)

    @property
    def country_codes(self) -> tuple[str, ...]:
        return COUNTRIES[: self.countries]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heaping"] = list(self.heaping)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "SimConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "beta_true" in d:
            base = _default_beta()
            d["beta_true"] = {
                item: {**base.get(item, {"intercept": 0.0}), **coefs}
                for item, coefs in d["beta_true"].items()
            }
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_dict(yaml.safe_load(path.read_text()))

    def dump(self) -> str:
        # insertion order matters: the first item is the default outcome
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


@dataclass
class TruthRecord:
    """Generating coefficients (on the raw design) and population AMEs."""

    names: list[str]
    beta_true: dict[str, np.ndarray]
    ame: dict[str, float]
    medians: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "beta_true": {k: v.tolist() for k, v in self.beta_true.items()},
            "ame": dict(self.ame),
            "medians": dict(self.medians),
        }


def sim_schema(config: SimConfig | None = None) -> Schema:
    items = (config or SimConfig()).items
    columns = {"resp_id": "id", "iw_id": "id", "country": "id", "iw_expect": "continuous"}
    for c in REGRESSORS:
        columns[c] = "continuous" if c in ("iw_age", "r_age", "r_bmi", "r_fluency") else "binary"
    columns.update({item: "binary" for item in items})
    return Schema(
        columns=columns,
        outcomes=items,
        focus="iw_exp_high",
        controls=REGRESSORS[1:],
        interviewer="iw_id",
        country="country",
        groups={"iws": IWS, "iwr": ROSTER, "base": BASE, "capi": CAPI},
        interviewer_columns=IWS + ROSTER,
        roster={"gender": "iw_female", "age": "iw_age"},
        respondent_id="resp_id",
        expectation="iw_expect",
    )


def raw_coefficients(coefs: dict, names: Sequence[str]) -> np.ndarray:
    """Centred-covariate coefficients mapped onto the raw design ``names``."""
    beta = np.array([coefs.get(n, 0.0) for n in names], dtype=float)
    beta[0] = coefs.get("intercept", 0.0) - sum(
        coefs.get(n, 0.0) * TARGETS[n][0] for n in names[1:]
    )
    return beta


def _truncnorm_params(mean: float, sd: float, lo: float, hi: float) -> tuple[float, float]:
    """Parent (mu, sigma) whose truncation to [lo, hi] has the given moments."""

    def gap(p):
        mu, log_s = p
        s = np.exp(log_s)
        d = stats.truncnorm((lo - mu) / s, (hi - mu) / s, loc=mu, scale=s)
        return [d.mean() - mean, d.std() - sd]

    sol = optimize.fsolve(gap, [mean, np.log(sd)], full_output=True)
    return float(sol[0][0]), float(np.exp(sol[0][1]))


_AGE_PARENT = None


def _age_parent():
    global _AGE_PARENT
    if _AGE_PARENT is None:
        _AGE_PARENT = _truncnorm_params(*TARGETS["r_age"], *AGE_RANGE)
    return _AGE_PARENT


def _bern(rng, p) -> np.ndarray:
    return (rng.random(np.shape(p)) < p).astype(float)


def _heap(latent: np.ndarray, shares, rng) -> np.ndarray:
    """Round a 0-100 latent to multiples of 10, 5 or 1 with the given shares."""
    k = rng.choice(3, size=latent.size, p=np.asarray(shares))
    step = np.array([10.0, 5.0, 1.0])[k]
    return np.clip(np.round(latent / step) * step, 0.0, 100.0)


def _interviewers(config: SimConfig, rng) -> pd.DataFrame:
    codes = config.country_codes
    n = config.countries * config.interviewers_per_country
    country = np.repeat(codes, config.interviewers_per_country)
    female = _bern(rng, np.full(n, TARGETS["iw_female"][0]))
    age = np.round(np.clip(rng.normal(*TARGETS["iw_age"], size=n), 22.0, 80.0))
    thi = _bern(rng, np.full(n, TARGETS["iw_thi"][0]))
    p_health = expit(logit(TARGETS["iw_good_health"][0]) + 0.4 * (thi - TARGETS["iw_thi"][0]))
    health = _bern(rng, p_health)
    mu = config.expectation_mean + config.expectation_thi_shift * (thi - TARGETS["iw_thi"][0])
    kappa = config.expectation_concentration
    latent = 100.0 * rng.beta(mu * kappa, (1 - mu) * kappa)
    expect = _heap(latent, config.heaping, rng)
    return pd.DataFrame({
        "iw_id": [f"{c}{i % config.interviewers_per_country + 1:03d}" for i, c in enumerate(country)],
        "country": country,
        "iw_expect": expect,
        "iw_exp_high": build_focus_indicator(expect, country),
        "iw_thi": thi,
        "iw_good_health": health,
        "iw_female": female,
        "iw_age": age,
    })


def _respondents(iw: pd.DataFrame, config: SimConfig, rng) -> pd.DataFrame:
    # shifted Poisson workloads: at least one respondent per interviewer
    sizes = 1 + rng.poisson(config.respondents_per_interviewer - 1.0, size=len(iw))
    frame = iw.loc[np.repeat(np.arange(len(iw)), sizes)].reset_index(drop=True)
    n = len(frame)
    mu, sigma = _age_parent()
    lo, hi = AGE_RANGE
    age = stats.truncnorm.rvs((lo - mu) / sigma, (hi - mu) / sigma, loc=mu, scale=sigma,
                              size=n, random_state=rng)
    ca = age - TARGETS["r_age"][0]
    female = _bern(rng, np.full(n, TARGETS["r_female"][0]))
    couple = _bern(rng, expit(logit(TARGETS["r_couple"][0]) - 0.03 * ca))
    past = _bern(rng, np.full(n, TARGETS["r_past_waves"][0]))
    health = _bern(rng, expit(logit(TARGETS["r_good_health"][0]) - 0.04 * ca))
    numeracy = _bern(rng, expit(logit(TARGETS["r_numeracy"][0])
                                + 0.6 * (health - TARGETS["r_good_health"][0])
                                - 0.3 * (female - TARGETS["r_female"][0]) - 0.03 * ca))
    bmi_mean, bmi_sd = TARGETS["r_bmi"]
    bmi = bmi_mean + 1.2 * (TARGETS["r_good_health"][0] - health) + rng.normal(0, bmi_sd, n)
    flu_mean, flu_sd = TARGETS["r_fluency"]
    fluency = (flu_mean - 0.25 * ca + 3.0 * (numeracy - TARGETS["r_numeracy"][0])
               + rng.normal(0, np.sqrt(flu_sd ** 2 - 4.0), n))
    frame.insert(0, "resp_id", [f"R{i + 1:06d}" for i in range(n)])
    frame["r_female"] = female
    frame["r_age"] = np.round(age, 1)
    frame["r_couple"] = couple
    frame["r_past_waves"] = past
    frame["r_good_health"] = health
    frame["r_numeracy"] = numeracy
    frame["r_bmi"] = np.round(np.clip(bmi, 14.0, 60.0), 1)
    frame["r_fluency"] = np.clip(np.round(fluency), 0.0, 80.0)
    return frame


def gen_population(config: SimConfig, seed=None) -> tuple[Dataset, TruthRecord]:
    """Draw one complete population; ``seed`` overrides ``config.seed``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    iw = _interviewers(config, rng)
    frame = _respondents(iw, config, rng)
    schema = sim_schema(config)
    for item in config.items:
        frame[item] = 0.0
    ds = from_frame(frame, schema)
    X, names = design_matrix(ds)
    betas, ames = {}, {}
    for item in config.items:
        beta = raw_coefficients(config.beta_true[item], names)
        frame[item] = _bern(rng, expit(X @ beta))
        betas[item] = beta
        ames[item] = ame_value(beta, 1, X)
    medians = {c: float(np.median(iw.loc[iw["country"] == c, "iw_expect"]))
               for c in config.country_codes}
    return from_frame(frame, schema), TruthRecord(names, betas, ames, medians)


# --------------------------------------------------------------------------
# missingness


def _propensity(coefs: dict, frame: pd.DataFrame) -> np.ndarray:
    eta = np.full(len(frame), float(coefs.get("intercept", 0.0)))
    for col, b in coefs.items():
        if col != "intercept":
            eta = eta + b * frame[col].to_numpy(dtype=float)
    return expit(eta)


def missing_probabilities(complete: Dataset, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Row-level probabilities of interviewer-survey and CAPI nonresponse."""
    f = complete.frame
    return _propensity(config.iws_propensity, f), _propensity(config.capi_propensity, f)


def expected_missing_rates(complete: Dataset, config: SimConfig) -> dict[str, float]:
    """Closed-form expected share of rows missing each group."""
    p1, p2 = missing_probabilities(complete, config)
    return {"iws": float(p1.mean()), "capi": float(p2.mean())}


def apply_missingness(complete: Dataset, config: SimConfig, seed=None) -> Dataset:
    """Mask the interviewer-survey group per interviewer and CAPI items per row.

    A CAPI nonrespondent loses each CAPI item with probability
    ``capi_item_share``, and at least one.
    """
    if complete.mask[list(REGRESSORS)].any().any():
        raise ConfigError("input to apply_missingness already has masked cells")
    rng = np.random.default_rng([config.seed, 1] if seed is None else seed)
    frame = complete.frame.copy()
    p1, p2 = missing_probabilities(complete, config)
    iw = frame["iw_id"].to_numpy()
    codes, first = np.unique(iw, return_index=True)
    order = np.argsort(first)
    codes, first = codes[order], first[order]
    skip_iw = rng.random(codes.size) < p1[first]
    skip = pd.Series(skip_iw, index=codes).loc[iw].to_numpy()
    frame.loc[skip, list(IWS) + ["iw_expect"]] = np.nan

    capi_miss = rng.random(len(frame)) < p2
    items = rng.random((len(frame), len(CAPI))) < config.capi_item_share
    none = capi_miss & ~items.any(axis=1)
    items[none, rng.integers(len(CAPI), size=none.sum())] = True
    items &= capi_miss[:, None]
    for j, col in enumerate(CAPI):
        frame.loc[items[:, j], col] = np.nan

    out = complete.with_frame(frame)
    n_cc = int((~out.mask[list(REGRESSORS)].any(axis=1)).sum())
    if n_cc < len(REGRESSORS) + 2:
        raise DegenerateDesign(f"only {n_cc} complete cases remain for {len(REGRESSORS) + 1} coefficients")
    return out


# --------------------------------------------------------------------------
# Monte Carlo


def _interval(est, se, df, level=0.95):
    q = stats.norm.ppf(0.5 + level / 2) if not np.isfinite(df) else stats.t.ppf(0.5 + level / 2, df)
    return est - q * se, est + q * se


def analyze_replication(
    masked: Dataset,
    item: str,
    methods: Sequence[str] = METHODS,
    m: int = 20,
    seed=0,
    burn_in: int = DEFAULT_BURN_IN,
    congenial: bool = True,
) -> dict[str, dict]:
    """Focus-coefficient and AME estimates of each method on one dataset.

    AMEs average over the complete cases for every method, so all methods
    target the same quantity.
    """
    ds = masked.with_schema(outcomes=(item,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ps = merge_small_patterns(detect_patterns(ds), len(ds.schema.regressors) + 2)
    out = {}
    if "cca" in methods:
        cc = ps.complete
        X, _ = design_matrix(ds.subset(cc))
        y = ds.frame[item].to_numpy(dtype=float)[cc]
        fit = fit_logit(y, X)
        X1, X0 = X.copy(), X.copy()
        X1[:, 1], X0[:, 1] = 1.0, 0.0
        est, var = ame_contrast(fit.beta, X1, X0, fit.cov)
        out["cca"] = dict(estimate=est, se=np.sqrt(var), df=np.inf,
                          coef=fit.beta[1], coef_se=fit.se[1])
    mi = [mt for mt in methods if mt != "cca"]
    if mi:
        impset = multiple_impute(ds, m, seed=seed, burn_in=burn_in, congenial=congenial)
        designs = grand_designs(impset, ps, item)
        if any(mt.startswith("bbma") for mt in mi):
            grid = fit_grid(designs)
        else:
            grid = fit_grid([_fill_in_only(d) for d in designs])
        fi_ame, fi_coef = pool_estimates(grid.ame[0], grid.ame_var[0]), pool_estimates(grid.coef[0], grid.coef_var[0])
        if "fi-mi" in mi:
            out["fi-mi"] = dict(estimate=fi_ame[0], se=np.sqrt(fi_ame[1]), df=fi_ame[2],
                                coef=fi_coef[0], coef_se=np.sqrt(fi_coef[1]))
        for crit in ("bic", "aic"):
            name = f"bbma-{crit}"
            if name in mi:
                a = average_grid(grid, crit, "ame")
                c = average_grid(grid, crit, "coef")
                out[name] = dict(estimate=a.beta_ma, se=a.se_ma, df=a.df,
                                 coef=c.beta_ma, coef_se=c.se_ma)
    return out


def _fill_in_only(design: GrandDesign) -> GrandDesign:
    return GrandDesign(design.W, [], design.y, design.names, design.assignment, design.focus)


@dataclass
class MonteCarloReport:
    records: pd.DataFrame
    summary: pd.DataFrame
    meta: dict

    def records_csv(self) -> str:
        buf = io.StringIO()
        self.records.to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        self.summary.to_csv(buf, index=False, lineterminator="\n", float_format="%.10g")
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [
            f"Monte Carlo: {self.meta['replications']} replications, M={self.meta['m']}, "
            f"item={self.meta['item']}, burn-in={self.meta['burn_in']}",
            "target: focus AME averaged over complete cases",
            "",
            f"{'method':<10}{'ok':>5}{'fail':>6}{'bias':>10}{'mc_se':>9}{'emp_sd':>9}"
            f"{'mean_se':>9}{'cover':>8}",
        ]
        for r in self.summary.itertuples():
            lines.append(
                f"{r.method:<10}{r.n_ok:>5d}{r.n_failed:>6d}{r.mean_bias:>10.4f}{r.mc_se:>9.4f}"
                f"{r.emp_sd:>9.4f}{r.mean_se:>9.4f}{r.coverage:>8.3f}"
            )
        return "\n".join(lines) + "\n"

    def artifacts(self) -> dict[str, str]:
        return {
            "mc_records.csv": self.records_csv(),
            "mc_summary.csv": self.summary_csv(),
            "mc_summary.txt": self.summary_text(),
        }


def summarize(records: pd.DataFrame, methods: Sequence[str]) -> pd.DataFrame:
    rows = []
    for method in methods:
        r = records[records["method"] == method].sort_values("rep")
        ok = r[~r["failed"]]
        n = len(ok)
        bias = ok["estimate"] - ok["truth"]
        cbias = ok["coef"] - ok["coef_truth"]
        cover = ok["covers"].astype(float)
        sd = float(ok["estimate"].std(ddof=1)) if n > 1 else np.nan
        rows.append({
            "method": method,
            "n_ok": n,
            "n_failed": int(r["failed"].sum()),
            "mean_bias": float(bias.mean()) if n else np.nan,
            "mc_se": float(bias.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan,
            "emp_sd": sd,
            "mean_se": float(ok["se"].mean()) if n else np.nan,
            "coverage": float(cover.mean()) if n else np.nan,
            "coverage_mc_se": float(np.sqrt(cover.mean() * (1 - cover.mean()) / n)) if n else np.nan,
            "coef_bias": float(cbias.mean()) if n else np.nan,
            "coef_mc_se": float(cbias.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan,
        })
    return pd.DataFrame(rows)


def monte_carlo(
    config: SimConfig,
    replications: int,
    m: int = 20,
    methods: Sequence[str] = METHODS,
    seed: int | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    item: str | None = None,
    congenial: bool = True,
    min_replications: int = 50,
) -> MonteCarloReport:
    """Generate, mask and estimate ``replications`` times.

    Each replication gets its own sub-seed (population, masking and
    imputation streams spawned from it). The truth for a replication is the
    focus AME of the generating coefficients averaged over that
    replication's complete cases; ``coef_truth`` is the generating focus
    coefficient. Replications whose estimation fails are recorded with
    ``failed=True`` and excluded from the summary statistics.
    """
    if replications < min_replications:
        raise ConfigError(f"need at least {min_replications} replications, got {replications}")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")
    methods = [mt for mt in METHODS if mt in methods]
    item = item or config.items[0]
    if item not in config.items:
        raise ConfigError(f"unknown item {item!r}")
    seed = config.seed if seed is None else seed
    rows = []
    for rep, child in enumerate(np.random.SeedSequence(seed).spawn(replications)):
        pop_seq, mask_seq, imp_seq = child.spawn(3)
        complete, truth = gen_population(config, seed=pop_seq)
        base = dict(rep=rep, pop_ame=truth.ame[item], coef_truth=truth.beta_true[item][1])
        try:
            masked = apply_missingness(complete, config, seed=mask_seq)
            cc = ~masked.mask[list(REGRESSORS)].any(axis=1).to_numpy()
            X, _ = design_matrix(complete)
            target = ame_value(truth.beta_true[item], 1, X[cc])
            res = analyze_replication(masked, item, methods, m,
                                      seed=int(imp_seq.generate_state(1)[0]),
                                      burn_in=burn_in, congenial=congenial)
        except GmimaError as exc:
            for method in methods:
                rows.append({**base, "method": method, "failed": True, "error": exc.code})
            continue
        for method in methods:
            r = res[method]
            lo, hi = _interval(r["estimate"], r["se"], r["df"])
            rows.append({
                **base, "method": method, "failed": False, "error": "",
                "truth": target, "n_cc": int(cc.sum()), **r,
                "lower": lo, "upper": hi, "covers": bool(lo <= target <= hi),
            })
    cols = ["rep", "method", "failed", "error", "truth", "pop_ame", "estimate", "se", "df",
            "lower", "upper", "covers", "coef_truth", "coef", "coef_se", "n_cc"]
    records = pd.DataFrame(rows).reindex(columns=cols)
    records["failed"] = records["failed"].astype(bool)
    records["covers"] = records["covers"].eq(True)
    records = records.sort_values(["rep", "method"], kind="stable").reset_index(drop=True)
    meta = {"replications": replications, "m": m, "item": item, "burn_in": burn_in,
            "seed": seed, "methods": methods, "congenial": congenial}
    return MonteCarloReport(records, summarize(records, methods), meta)


# --------------------------------------------------------------------------
# true AME by oversampling


def empirical_ame(config: SimConfig, item: str | None = None, factor: int = 10,
                  seed=None) -> tuple[float, float]:
    """AME as the mean potential-outcome contrast on a ``factor``-times larger
    population, with its Monte Carlo standard error.

    Both potential outcomes share one uniform draw per respondent.
    """
    item = item or config.items[0]
    big = replace(config, interviewers_per_country=config.interviewers_per_country * factor)
    rng = np.random.default_rng([config.seed, 2] if seed is None else seed)
    complete, truth = gen_population(big, seed=rng.integers(2 ** 63))
    X, _ = design_matrix(complete)
    beta = truth.beta_true[item]
    X1, X0 = X.copy(), X.copy()
    X1[:, 1], X0[:, 1] = 1.0, 0.0
    u = rng.random(X.shape[0])
    diff = (u < expit(X1 @ beta)).astype(float) - (u < expit(X0 @ beta)).astype(float)
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(diff.size))


# --------------------------------------------------------------------------
# small generators with known structure


TOY_SCHEMA = Schema(
    columns={"id": "id", "iw": "id", "country": "id", "y": "binary", "d": "binary",
             "x1": "continuous", "x2": "continuous"},
    outcomes=("y",),
    focus="d",
    controls=("x1", "x2"),
    interviewer="iw",
    country="country",
    groups={"base": ("d",), "a": ("x1",), "b": ("x2",)},
    respondent_id="id",
)


def toy_two_pattern_dataset(n: int = 500, seed=0, missing_share: float = 0.2) -> Dataset:
    """Intercept, binary focus and two continuous controls (K=4); ``x1`` and
    ``x2`` are missing on disjoint row sets, giving two incomplete patterns."""
    rng = np.random.default_rng(seed)
    d = _bern(rng, np.full(n, 0.5))
    x1 = rng.normal(size=n)
    x2 = 0.5 * x1 + rng.normal(size=n)
    y = _bern(rng, expit(-0.3 + 0.8 * d + 0.5 * x1 - 0.4 * x2))
    which = rng.choice(3, size=n, p=[1 - 2 * missing_share, missing_share, missing_share])
    x1 = np.where(which == 1, np.nan, x1)
    x2 = np.where(which == 2, np.nan, x2)
    frame = pd.DataFrame({
        "id": [f"T{i:05d}" for i in range(n)], "iw": [f"I{i % 50:03d}" for i in range(n)],
        "country": "XX", "y": y, "d": d, "x1": x1, "x2": x2,
    })
    return from_frame(frame, TOY_SCHEMA)


TOY_DELTA = np.array([1.0, -0.8, -0.7, 0.5])


def toy_block_design(n: int, seed=0, n_max: int = 5000, delta=TOY_DELTA) -> GrandDesign:
    """Grand design whose outcome follows submodel {1} (block 1 only).

    Rows fall in the complete pattern or one of two incomplete ones (shares
    1/2, 1/4, 1/4); missing controls are filled with marginal draws. The
    first ``n`` of ``n_max`` rows are returned, so designs of different
    sizes from one seed are nested.
    """
    if n > n_max:
        raise ConfigError(f"n={n} exceeds n_max={n_max}")
    rng = np.random.default_rng(seed)
    d = _bern(rng, np.full(n_max, 0.5))
    x1 = rng.normal(size=n_max)
    x2 = rng.normal(size=n_max)
    assignment = rng.choice(3, size=n_max, p=[0.5, 0.25, 0.25])
    W = np.column_stack([np.ones(n_max), d, x1, x2])
    beta = np.array([0.2, 0.6, 0.5, -0.5])
    eta = W @ beta + (W @ np.asarray(delta)) * (assignment == 1)
    y = _bern(rng, expit(eta))
    W, y, assignment = W[:n], y[:n], assignment[:n]
    Z = [W * (assignment == h)[:, None] for h in (1, 2)]
    return GrandDesign(W, Z, y, ["_const", "d", "x1", "x2"], assignment, focus=1)


def truth_json(truth: TruthRecord) -> str:
    return json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n"
