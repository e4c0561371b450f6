"""Multiple imputation: interviewer hot-deck, chained equations, Rubin pooling.

Interviewer-level variables are imputed by a hot-deck that donates the whole
missing part of a donor interviewer's record; respondent-level variables by
fully conditional specification (logistic draws for binary columns,
predictive mean matching for continuous ones). ``multiple_impute`` runs the
two as alternating Gibbs steps so that imputed interviewer values stay
constant across all of an interviewer's respondents.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import (
    AllMissingColumn,
    EstimationError,
    NoDonorsInCountry,
    TooFewImputations,
    UnsupportedImputation,
    ValidationError,
)
from .logit import fit_logit
from .patterns import interviewer_table
from .tabular import Dataset, Schema, read_csv_text, to_csv_text

log = logging.getLogger(__name__)

PMM_DONORS = 5
DEFAULT_BURN_IN = 10
AGE_WINDOW = 10.0


class NonConvergentUnivariateFit(UserWarning):
    """A univariate imputation model failed; a marginal draw was used instead."""


@dataclass(frozen=True)
class PooledEstimate:
    qbar: float
    ubar: float
    b: float
    t: float
    fmi: float
    df: float
    m: int
    fmi_adjusted: float = float("nan")

    @property
    def se(self) -> float:
        return math.sqrt(self.t)


def rubin_pool(estimates, variances) -> PooledEstimate:
    """Combine M completed-data estimates with Rubin's rules.

    T = Ubar + (1 + 1/M) B and FMI = (1 + 1/M) B / T. ``fmi_adjusted`` is the
    degrees-of-freedom corrected variant, reported as a diagnostic only.
    """
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    if q.shape != u.shape or q.ndim != 1:
        raise ValidationError("estimates and variances must be equal-length vectors")
    m = q.size
    if m < 2:
        raise TooFewImputations(f"need at least 2 imputations, got {m}")
    if (u < 0).any():
        raise ValidationError("variances must be non-negative")
    qbar = float(q.mean())
    ubar = float(u.mean())
    # identical estimates carry no between variance, whatever the rounding in the mean
    b = 0.0 if (q == q[0]).all() else float(q.var(ddof=1))
    inflated = (1.0 + 1.0 / m) * b
    t = ubar + inflated
    fmi = inflated / t if t > 0 else 0.0
    if b > 0:
        df = (m - 1) * (1.0 + ubar / inflated) ** 2
        r = inflated / ubar if ubar > 0 else np.inf
        fmi_adj = (r + 2.0 / (df + 3.0)) / (r + 1.0) if np.isfinite(r) else 1.0
    else:
        df = np.inf
        fmi_adj = 0.0
    return PooledEstimate(qbar, ubar, b, t, fmi, float(df), m, float(fmi_adj))


def choose_m(fmi: float) -> int:
    """Smallest M satisfying M >= 100 * FMI, never below 2."""
    if not 0.0 <= fmi <= 1.0:
        raise ValidationError(f"fmi must lie in [0, 1], got {fmi}")
    return max(2, math.ceil(round(100.0 * fmi, 9)))


# --------------------------------------------------------------------------
# interviewer hot-deck


def donor_pools(
    table: pd.DataFrame,
    columns: Sequence[str],
    country: str,
    roster: dict[str, str] | None = None,
    age_window: float = AGE_WINDOW,
) -> dict:
    """Candidate donors for every interviewer with a missing value.

    Donors are same-country interviewers observed on all ``columns``. When
    the recipient's roster gender and age are known, donors of the same
    gender and age within ``age_window`` years are preferred, provided at
    least one exists.
    """
    roster = roster or {}
    miss = table[list(columns)].isna().to_numpy().any(axis=1)
    where = table[country].to_numpy()
    g, a = roster.get("gender"), roster.get("age")
    gender = table[g].to_numpy(dtype=float) if g is not None else None
    age = table[a].to_numpy(dtype=float) if a is not None else None
    pools = {}
    for i in np.flatnonzero(miss):
        same = (where == where[i]) & ~miss
        if not same.any():
            raise NoDonorsInCountry(
                f"interviewer {table.index[i]!r}: no fully observed donor in country {where[i]!r}"
            )
        matched = same.copy()
        usable = False
        if gender is not None and not np.isnan(gender[i]):
            matched &= gender == gender[i]
            usable = True
        if age is not None and not np.isnan(age[i]):
            matched &= np.abs(age - age[i]) <= age_window
            usable = True
        chosen = matched if usable and matched.any() else same
        pools[table.index[i]] = list(table.index[chosen])
    return pools


class _HotDeck:
    """Array form of a hot-deck: recipients, their pools and missing cells."""

    def __init__(self, table: pd.DataFrame, columns: Sequence[str], pools: dict):
        self.table = table
        self.columns = list(columns)
        self.values = table[self.columns].to_numpy()
        miss = table[self.columns].isna().to_numpy()
        pos = pd.Index(table.index)
        self.recipients = [
            (pos.get_loc(rid), pos.get_indexer(donors), np.flatnonzero(miss[pos.get_loc(rid)]))
            for rid, donors in pools.items()
        ]

    def draw(self, rng, logweights: Callable | None = None) -> np.ndarray:
        out = self.values.copy()
        for i, donors, cols in self.recipients:
            if logweights is None or donors.size == 1:
                d = donors[rng.integers(donors.size)]
            else:
                lw = np.asarray(logweights(i, donors, cols), dtype=float)
                w = np.exp(lw - lw.max())
                d = donors[rng.choice(donors.size, p=w / w.sum())]
            out[i, cols] = self.values[d, cols]
        return out

    def frame(self, values: np.ndarray) -> pd.DataFrame:
        out = self.table.copy()
        out[self.columns] = values
        return out


def hot_deck_interviewers(
    table: pd.DataFrame,
    seed=None,
    columns: Sequence[str] | None = None,
    country: str = "country",
    roster: dict[str, str] | None = None,
    pools: dict | None = None,
) -> pd.DataFrame:
    """Fill missing interviewer values from a single same-country donor.

    Each recipient takes every one of its missing values from one donor,
    drawn uniformly from its pool (see :func:`donor_pools`). Deterministic
    given ``seed``.
    """
    rng = np.random.default_rng(seed)
    columns = [c for c in (columns if columns is not None else table.columns) if c != country]
    if pools is None:
        pools = donor_pools(table, columns, country, roster)
    deck = _HotDeck(table, columns, pools)
    return deck.frame(deck.draw(rng))


# --------------------------------------------------------------------------
# chained equations


def _marginal_draw(values: np.ndarray, size: int, rng) -> np.ndarray:
    return rng.choice(values, size=size, replace=True)


def _draw_logistic(Po, yo, Pm, rng, warm=None):
    """Proper logistic draw: beta* ~ N(beta_hat, V), then Bernoulli."""
    first = yo[0]
    if (yo == first).all():
        return np.full(Pm.shape[0], first), None
    fit = fit_logit(yo, Po, beta0=warm)
    L = np.linalg.cholesky(fit.cov + 1e-12 * np.eye(fit.k))
    beta = fit.beta + L @ rng.standard_normal(fit.k)
    p = expit(Pm @ beta)
    return (rng.random(Pm.shape[0]) < p).astype(float), fit.beta


def _draw_pmm(Po, yo, Pm, rng, donors: int = PMM_DONORS):
    """Predictive mean matching (type-1 matching) with ``donors`` candidates."""
    n, k = Po.shape
    beta_hat, *_ = np.linalg.lstsq(Po, yo, rcond=None)
    resid = yo - Po @ beta_hat
    dof = max(n - k, 1)
    sigma2 = float(resid @ resid) / rng.chisquare(dof)
    V = np.linalg.pinv(Po.T @ Po)
    L = np.linalg.cholesky(V + 1e-12 * np.eye(k))
    beta = beta_hat + math.sqrt(sigma2) * (L @ rng.standard_normal(k))
    fitted = Po @ beta_hat
    target = Pm @ beta
    d = min(donors, n)
    # the d nearest fitted values lie within d sorted positions of the target
    order = np.argsort(fitted, kind="stable")
    fs = fitted[order]
    w = min(2 * d, n)
    lo = np.clip(np.searchsorted(fs, target) - d, 0, n - w)
    cand = lo[:, None] + np.arange(w)
    dist = np.abs(fs[cand] - target[:, None])
    near = np.argpartition(dist, d - 1, axis=1)[:, :d] if d < w else np.tile(np.arange(w), (target.size, 1))
    pick = near[np.arange(target.size), rng.integers(d, size=target.size)]
    return yo[order[cand[np.arange(target.size), pick]]]


class _Chain:
    """Mutable state of one chained-equations sampler."""

    def __init__(self, ds: Dataset, columns: Sequence[str], rng, kinds: dict | None = None):
        s = ds.schema
        self.ds = ds
        self.rng = rng
        self.columns = list(columns)
        self.kinds = {c: (kinds or {}).get(c, s.impute_kind(c)) for c in self.columns}
        for c, k in self.kinds.items():
            if k not in ("logistic", "pmm"):
                raise UnsupportedImputation(f"no imputation model for {c!r} (kind {k!r})")
        self.regressors = list(s.regressors)
        for c in self.regressors:
            if s.columns[c] == "categorical" and ds.frame[c].isna().any():
                raise UnsupportedImputation(f"categorical column {c!r} has missing values")
        self.values = {c: ds.frame[c].to_numpy(dtype=float).copy()
                       for c in self.regressors if s.columns[c] != "categorical"}
        self.dummies = []
        for c in self.regressors:
            if s.columns[c] == "categorical":
                levels = sorted(ds.frame[c].unique().tolist())
                vals = ds.frame[c].to_numpy()
                for lv in levels[1:]:
                    self.dummies.append((vals == lv).astype(float))
        # outcomes with gaps cannot serve as predictors
        self.outcomes = [o for o in s.outcomes if not ds.frame[o].isna().any()]
        self.ys = [ds.frame[o].to_numpy(dtype=float) for o in self.outcomes]
        self.missing = {c: np.isnan(self.values[c]) for c in self.columns}
        for c in self.columns:
            if self.missing[c].all():
                raise AllMissingColumn(f"column {c!r} has no observed values")
        frac = {c: self.missing[c].mean() for c in self.columns}
        self.order = sorted(self.columns, key=lambda c: (frac[c], self.columns.index(c)))
        self.order = [c for c in self.order if self.missing[c].any()]
        self.warm: dict[str, np.ndarray | None] = {}
        self.fallbacks = 0

    def initialize(self) -> None:
        for c in self.order:
            miss = self.missing[c]
            self.values[c][miss] = _marginal_draw(self.values[c][~miss], miss.sum(), self.rng)

    def predictors(self, exclude: str) -> np.ndarray:
        cols = [np.ones(self.ds.n)]
        cols += [v for c, v in self.values.items() if c != exclude]
        return np.column_stack(cols + self.dummies + self.ys)

    def design(self) -> np.ndarray:
        """Outcome-model design: intercept, numeric regressors, dummies."""
        return np.column_stack([np.ones(self.ds.n)] + list(self.values.values()) + self.dummies)

    def sweep(self) -> None:
        for c in self.order:
            miss = self.missing[c]
            P = self.predictors(c)
            Po, Pm = P[~miss], P[miss]
            yo = self.values[c][~miss]
            try:
                if self.kinds[c] == "logistic":
                    draw, self.warm[c] = _draw_logistic(Po, yo, Pm, self.rng, self.warm.get(c))
                else:
                    draw = _draw_pmm(Po, yo, Pm, self.rng)
            except (EstimationError, np.linalg.LinAlgError) as exc:
                warnings.warn(f"imputation model for {c!r} failed ({exc}); using marginal draw",
                              NonConvergentUnivariateFit, stacklevel=3)
                self.fallbacks += 1
                self.warm[c] = None
                draw = _marginal_draw(yo, miss.sum(), self.rng)
            self.values[c][miss] = draw

    def completed(self) -> Dataset:
        frame = self.ds.frame.copy()
        for c in self.columns:
            frame[c] = self.values[c]
        return self.ds.with_frame(frame)


def fcs_chain(
    ds: Dataset,
    kinds: dict[str, str] | None = None,
    iterations: int = DEFAULT_BURN_IN,
    seed=None,
    columns: Sequence[str] | None = None,
) -> Dataset:
    """Impute missing regressors by chained univariate models.

    Columns are visited in ascending order of missing fraction; each model
    conditions on every other regressor and on the fully observed outcome
    indicators. Chains start from marginal draws and run ``iterations``
    sweeps; the final state is returned. Observed cells are never touched.
    """
    if columns is None:
        columns = [c for c in ds.schema.regressors if ds.frame[c].isna().any()]
    chain = _Chain(ds, columns, np.random.default_rng(seed), kinds)
    if not chain.order:
        return ds
    chain.initialize()
    for _ in range(iterations):
        chain.sweep()
    return chain.completed()


# --------------------------------------------------------------------------
# multiple imputation


@dataclass
class ImputationSet:
    m: int
    completed: list[Dataset]
    seed: int
    burn_in: int = DEFAULT_BURN_IN
    diagnostics: list[dict] = field(default_factory=list)

    def manifest(self) -> dict:
        schema_text = self.completed[0].schema.dump() if self.completed else ""
        spec = {"schema": schema_text, "burn_in": self.burn_in, "pmm_donors": PMM_DONORS}
        return {
            "m": self.m,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "pmm_donors": PMM_DONORS,
            "spec_hash": hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest(),
            "files": [f"imputation_{i + 1:03d}.csv" for i in range(self.m)],
            "diagnostics": self.diagnostics,
        }

    def artifacts(self) -> dict[str, str]:
        """File name -> text for every member plus the manifest."""
        out = {f"imputation_{i + 1:03d}.csv": to_csv_text(d) for i, d in enumerate(self.completed)}
        out["manifest.json"] = json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"
        return out

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, text in self.artifacts().items():
            (directory / name).write_text(text)

    @classmethod
    def load(cls, directory: str | Path, schema: Schema) -> "ImputationSet":
        directory = Path(directory)
        man = json.loads((directory / "manifest.json").read_text())
        man = man.get("imputation", man)
        sets = [read_csv_text((directory / f).read_text(), schema) for f in man["files"]]
        return cls(man["m"], sets, man["seed"], man["burn_in"], man.get("diagnostics", []))


def _broadcast(values: dict, iw_pos: np.ndarray, current: np.ndarray, columns) -> None:
    for j, c in enumerate(columns):
        if c in values:
            values[c][:] = current[iw_pos, j].astype(float)


class _InterviewerStep:
    """Likelihood-weighted donor redraw for interviewers with missing values.

    Donor pools are those of the hot-deck; the uniform prior over a pool is
    reweighted by the likelihood of the interviewer's respondents' outcomes
    under logit models fitted to the current completed data, which keeps
    the imputation model congenial with the outcome analysis.
    """

    def __init__(self, chain: _Chain, deck: _HotDeck, iw_pos: np.ndarray):
        self.chain = chain
        self.deck = deck
        order = np.argsort(iw_pos, kind="stable")
        bounds = np.searchsorted(iw_pos[order], np.arange(len(deck.table) + 1))
        self.rows_of = {i: order[bounds[i]:bounds[i + 1]] for i, _, _ in deck.recipients}
        names = list(chain.values)
        # design column of each deck column (None when not an outcome regressor)
        self.dpos = [1 + names.index(c) if c in chain.values else None for c in deck.columns]
        self.warm = [None] * len(chain.ys)

    def run(self, current: np.ndarray, rng) -> np.ndarray:
        X = self.chain.design()
        draws = []
        for j, y in enumerate(self.chain.ys):
            try:
                fit = fit_logit(y, X, beta0=self.warm[j], check_rank=False)
            except EstimationError:
                self.warm[j] = None
                continue
            self.warm[j] = fit.beta
            L = np.linalg.cholesky(fit.cov + 1e-12 * np.eye(fit.k))
            draws.append((fit.beta + L @ rng.standard_normal(fit.k), y))
        if not draws:
            return self.deck.draw(rng)
        etas = [X @ b for b, _ in draws]
        signs = [2.0 * y - 1.0 for _, y in draws]
        vals = self.deck.values

        def logweights(i, donors, cols):
            cols = [j for j in cols if self.dpos[j] is not None]
            out = np.zeros(donors.size)
            if not cols:
                return out
            rows = self.rows_of[i]
            cur = current[i, cols].astype(float)
            don = vals[np.ix_(donors, cols)].astype(float)
            dcols = [self.dpos[j] for j in cols]
            for (beta, _), eta, s in zip(draws, etas, signs):
                shift = (don - cur) @ beta[dcols]
                e = eta[rows][None, :] + shift[:, None]
                out -= np.logaddexp(0.0, -s[rows][None, :] * e).sum(axis=1)
            return out

        return self.deck.draw(rng, logweights)


def impute_once(
    ds: Dataset,
    seed,
    burn_in: int = DEFAULT_BURN_IN,
    congenial: bool = True,
) -> tuple[Dataset, dict]:
    """One completed dataset: interviewer hot-deck then chained equations.

    With ``congenial`` the interviewer donors are redrawn after every
    respondent sweep, weighted by the outcome likelihood; otherwise the
    initial uniform hot-deck is kept.
    """
    s = ds.schema
    rng = np.random.default_rng(seed)
    iw_cols = list(s.interviewer_columns)
    deck_cols = list(iw_cols)
    if s.expectation is not None and s.expectation not in deck_cols:
        deck_cols.append(s.expectation)
    frame_iw = ds.frame[s.interviewer].to_numpy()
    resp_cols = [c for c in s.respondent_columns if ds.frame[c].isna().any()]
    chain = _Chain(ds, resp_cols + iw_cols, rng)
    # interviewer columns are carried in chain.values but never swept
    chain.order = [c for c in chain.order if c not in iw_cols]

    current = None
    step = None
    if iw_cols:
        table = interviewer_table(ds, deck_cols)
        if table[deck_cols].isna().any().any():
            iw_pos = pd.Index(table.index).get_indexer(frame_iw)
            pools = donor_pools(table, deck_cols, s.country, s.roster)
            deck = _HotDeck(table, deck_cols, pools)
            current = deck.draw(rng)
            _broadcast(chain.values, iw_pos, current, deck_cols)
            numeric = all(s.columns[c] != "categorical" for c in iw_cols)
            if congenial and numeric and chain.ys:
                step = _InterviewerStep(chain, deck, iw_pos)
    chain.initialize()
    for _ in range(burn_in):
        chain.sweep()
        if step is not None:
            current = step.run(current, rng)
            _broadcast(chain.values, iw_pos, current, deck_cols)
    diag = {
        "iterations": burn_in,
        "imputed": {c: int(chain.missing[c].sum()) for c in chain.columns if chain.missing[c].any()},
        "fallbacks": chain.fallbacks,
    }
    out = chain.completed()
    if current is not None and s.expectation in deck_cols and s.expectation not in iw_cols:
        frame = out.frame
        frame[s.expectation] = current[iw_pos, deck_cols.index(s.expectation)].astype(float)
        out = ds.with_frame(frame)
    return out, diag


def multiple_impute(
    ds: Dataset,
    m: int,
    seed: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    congenial: bool = True,
) -> ImputationSet:
    """M independent imputations, each from its own spawned sub-seed."""
    if m < 2:
        raise TooFewImputations(f"need m >= 2, got {m}")
    children = np.random.SeedSequence(seed).spawn(m)
    completed, diags = [], []
    for child in children:
        d, diag = impute_once(ds, child, burn_in, congenial)
        completed.append(d)
        diags.append(diag)
    return ImputationSet(m, completed, seed, burn_in, diags)
