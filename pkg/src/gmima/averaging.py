"""Block model averaging over the 2^H grand-model submodels.

Submodel r adds the interaction blocks of a subset of the incomplete
patterns to the fill-in regressors. The empty subset is the fill-in model;
the full subset reproduces the complete-case estimate of the W coefficients.
Weights are exp(-delta IC / 2) with equal prior model probabilities.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    EmptyCompleteCases,
    EstimationError,
    InvalidWeights,
    LengthMismatch,
    ModelSpaceTooLarge,
    NonFiniteIC,
    ValidationError,
)
from .impute import ImputationSet, rubin_pool
from .logit import FitResult, ame_contrast, fit_logit
from .patterns import GrandDesign, PatternSet, assemble_grand_design

MAX_BLOCKS = 20
MA_VARIANCE = "buckland1997"


@dataclass(frozen=True)
class SubmodelId:
    index: int  # r, 1-based
    blocks: tuple[int, ...]

    @property
    def label(self) -> str:
        return "{" + ",".join(map(str, self.blocks)) + "}"


@dataclass
class AveragedEstimate:
    submodels: list[SubmodelId]
    estimates: np.ndarray
    variances: np.ndarray
    ics: np.ndarray
    lambdas: np.ndarray
    beta_ma: float
    var_ma: float
    criterion: str | None = None
    target: str = "coef"
    df: float = np.inf
    meta: dict = field(default_factory=lambda: {"ma_variance": MA_VARIANCE})

    @property
    def se_ma(self) -> float:
        return float(np.sqrt(self.var_ma))


def enumerate_submodels(h: int) -> list[SubmodelId]:
    """All 2^h block subsets in binary-counting order (bit j <-> block j+1)."""
    if h < 0:
        raise ValidationError("h must be non-negative")
    if h > MAX_BLOCKS:
        raise ModelSpaceTooLarge(f"2^{h} submodels exceeds the cap of 2^{MAX_BLOCKS}")
    return [
        SubmodelId(r + 1, tuple(j + 1 for j in range(h) if r >> j & 1))
        for r in range(2 ** h)
    ]


def fit_submodel(sid: SubmodelId, design: GrandDesign, cluster=None, beta0=None) -> FitResult:
    """Logit on [W | Z_h for h in sid.blocks]."""
    X = design.matrix(sid.blocks)
    return fit_logit(design.y, X, cluster=cluster, names=design.column_names(sid.blocks),
                     beta0=beta0)


def ic_weights(ics) -> np.ndarray:
    """exp(-delta/2) weights normalised to one, delta = ic - min(ic)."""
    ics = np.asarray(ics, dtype=float)
    if ics.size == 0:
        raise ValidationError("need at least one information criterion")
    if not np.isfinite(ics).all():
        raise NonFiniteIC("information criteria must be finite")
    w = np.exp(-0.5 * (ics - ics.min()))
    return w / w.sum()


def model_average(betas, variances, lam, criterion: str | None = None,
                  ics=None, submodels=None, target: str = "coef") -> AveragedEstimate:
    """Weighted estimate and Buckland et al. (1997) unconditional variance.

    var_ma = [sum_r lam_r * sqrt(var_r + (beta_r - beta_ma)^2)]^2
    """
    betas = np.asarray(betas, dtype=float)
    variances = np.asarray(variances, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if not betas.shape == variances.shape == lam.shape or betas.ndim != 1:
        raise LengthMismatch("betas, variances and weights must have equal lengths")
    if (not np.isfinite(lam).all() or (lam < 0).any()
            or abs(lam.sum() - 1.0) > 1e-9):
        raise InvalidWeights("weights must be non-negative and sum to one")
    beta_ma = float(np.sum(lam * betas))
    hot = np.flatnonzero(lam == 1.0)
    if hot.size == 1:
        var_ma = float(variances[hot[0]])
    else:
        var_ma = float(np.sum(lam * np.sqrt(variances + (betas - beta_ma) ** 2)) ** 2)
    return AveragedEstimate(
        submodels=list(submodels or []), estimates=betas, variances=variances,
        ics=np.asarray(ics, dtype=float) if ics is not None else np.full(betas.size, np.nan),
        lambdas=lam, beta_ma=beta_ma, var_ma=var_ma, criterion=criterion, target=target,
    )


# --------------------------------------------------------------------------
# fits over the submodel x imputation grid


@dataclass
class SubmodelGrid:
    """Per-(submodel, imputation) fit summaries; arrays are shaped (R, M).

    Submodels that could not be estimated on some imputation hold NaN rows
    and are listed in ``failures`` (submodel index -> error code).
    """

    submodels: list[SubmodelId]
    n: int
    k: np.ndarray
    logL: np.ndarray
    aic: np.ndarray
    bic: np.ndarray
    coef: np.ndarray
    coef_var: np.ndarray
    ame: np.ndarray
    ame_var: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.logL.shape[1]

    @property
    def feasible(self) -> np.ndarray:
        return np.isfinite(self.logL).all(axis=1)

    def restrict(self, keep: np.ndarray) -> "SubmodelGrid":
        keep = np.asarray(keep, bool)
        sel = lambda a: a[keep]  # noqa: E731
        return SubmodelGrid(
            [s for s, k in zip(self.submodels, keep) if k], self.n, sel(self.k),
            sel(self.logL), sel(self.aic), sel(self.bic), sel(self.coef), sel(self.coef_var),
            sel(self.ame), sel(self.ame_var), dict(self.failures),
        )

    def ic(self, criterion: str) -> np.ndarray:
        criterion = criterion.lower()
        if criterion not in ("aic", "bic"):
            raise ValidationError(f"unknown criterion {criterion!r}")
        return self.aic if criterion == "aic" else self.bic

    def quantity(self, target: str) -> tuple[np.ndarray, np.ndarray]:
        if target == "coef":
            return self.coef, self.coef_var
        if target == "ame":
            return self.ame, self.ame_var
        raise ValidationError(f"unknown target {target!r}")


def _focus_pair(design: GrandDesign, blocks: Sequence[int], rows: np.ndarray):
    """Designs on ``rows`` with the focus regressor switched to 1 and to 0,
    interaction columns following the switch."""
    out = []
    for d in (1.0, 0.0):
        W = design.W[rows].copy()
        W[:, design.focus] = d
        parts = [W] + [W * (design.assignment[rows] == h)[:, None] for h in blocks]
        out.append(np.hstack(parts))
    return out


def submodel_ame(fit: FitResult, design: GrandDesign, blocks: Sequence[int],
                 rows: np.ndarray | None = None) -> tuple[float, float]:
    """AME of the focus regressor under a submodel, averaged over ``rows``
    (default: the complete cases) with its delta-method variance."""
    if rows is None:
        rows = design.complete
    if not np.any(rows):
        raise EmptyCompleteCases("no rows to average the marginal effect over")
    X1, X0 = _focus_pair(design, blocks, rows)
    return ame_contrast(fit.beta, X1, X0, fit.cov)


def fit_grid(designs: Sequence[GrandDesign], cluster=None, ame_rows: str = "complete") -> SubmodelGrid:
    """Fit every submodel on every completed design.

    A submodel that cannot be estimated on some imputation (separation,
    rank deficiency, non-convergence) leaves the model space; failure of
    the fill-in submodel is an error.
    """
    H = designs[0].H
    subs = enumerate_submodels(H)
    R, M = len(subs), len(designs)
    arr = {name: np.empty((R, M)) for name in
           ("logL", "aic", "bic", "coef", "coef_var", "ame", "ame_var")}
    k = np.array([designs[0].K * (1 + len(sid.blocks)) for sid in subs])
    failures = {}
    for m, design in enumerate(designs):
        if design.H != H:
            raise ValidationError("designs disagree on the number of patterns")
        rows = design.complete if ame_rows == "complete" else np.ones(design.y.size, bool)
        warm = None
        for i, sid in enumerate(subs):
            if i in failures:
                continue
            try:
                fit = fit_submodel(sid, design, cluster=cluster,
                                   beta0=_warm_start(warm, sid, design))
            except EstimationError as exc:
                if not sid.blocks:
                    raise
                failures[i] = exc.code
                for a in arr.values():
                    a[i, :] = np.nan
                continue
            if not sid.blocks:
                warm = fit.beta
            arr["logL"][i, m] = fit.logL
            arr["aic"][i, m] = fit.aic
            arr["bic"][i, m] = fit.bic
            arr["coef"][i, m] = fit.beta[design.focus]
            arr["coef_var"][i, m] = fit.cov[design.focus, design.focus]
            arr["ame"][i, m], arr["ame_var"][i, m] = submodel_ame(fit, design, sid.blocks, rows)
    return SubmodelGrid(subs, designs[0].y.size, k, **arr, failures=failures)


def _warm_start(beta_fi, sid: SubmodelId, design: GrandDesign):
    # fill-in coefficients with zero deltas are a feasible, nearby start
    if beta_fi is None:
        return None
    return np.concatenate([beta_fi, np.zeros(design.K * len(sid.blocks))])


def pool_estimates(est: np.ndarray, var: np.ndarray) -> tuple[float, float, float]:
    """Rubin-pooled (estimate, variance, df); a single imputation passes through."""
    if est.size == 1:
        return float(est[0]), float(var[0]), np.inf
    p = rubin_pool(est, var)
    return p.qbar, p.t, p.df


def average_grid(grid: SubmodelGrid, criterion: str = "bic", target: str = "ame",
                 order: str = "pool-first") -> AveragedEstimate:
    """Model-average a fit grid.

    ``pool-first``: Rubin-pool each submodel across imputations, average the
    ICs across imputations, then weight. ``average-first``: model-average
    within each imputation, then Rubin-pool the M averaged estimates.
    """
    if not grid.feasible.all():
        grid = grid.restrict(grid.feasible)
    est, var = grid.quantity(target)
    ic = grid.ic(criterion)
    if order == "pool-first":
        pooled = [pool_estimates(est[r], var[r]) for r in range(len(grid.submodels))]
        q = np.array([p[0] for p in pooled])
        t = np.array([p[1] for p in pooled])
        ics = ic.mean(axis=1)
        lam = ic_weights(ics)
        out = model_average(q, t, lam, criterion=criterion, ics=ics,
                            submodels=grid.submodels, target=target)
        hot = np.flatnonzero(lam == 1.0)
        if hot.size == 1:
            out.df = pooled[hot[0]][2]
        return out
    if order == "average-first":
        per = [model_average(est[:, m], var[:, m], ic_weights(ic[:, m]), criterion=criterion,
                             ics=ic[:, m], submodels=grid.submodels, target=target)
               for m in range(grid.M)]
        q, t, df = pool_estimates(np.array([a.beta_ma for a in per]), np.array([a.var_ma for a in per]))
        lam = np.mean([a.lambdas for a in per], axis=0)
        pooled = [pool_estimates(est[r], var[r]) for r in range(len(grid.submodels))]
        return AveragedEstimate(
            submodels=list(grid.submodels),
            estimates=np.array([p[0] for p in pooled]),
            variances=np.array([p[1] for p in pooled]),
            ics=ic.mean(axis=1), lambdas=lam, beta_ma=q, var_ma=t,
            criterion=criterion, target=target, df=df,
        )
    raise ValidationError(f"unknown averaging order {order!r}")


def grid_table(grid: SubmodelGrid, target: str = "ame") -> pd.DataFrame:
    """Per-submodel diagnostics: r, blocks, k, logL, aic, bic, weights, estimate, se."""
    est, var = grid.quantity(target)
    ok = grid.feasible
    nan3 = (np.nan, np.nan, np.nan)
    pooled = [pool_estimates(est[r], var[r]) if ok[r] else nan3 for r in range(len(grid.submodels))]
    aic, bic = grid.aic.mean(axis=1), grid.bic.mean(axis=1)
    lam_aic, lam_bic = np.zeros(len(ok)), np.zeros(len(ok))
    lam_aic[ok], lam_bic[ok] = ic_weights(aic[ok]), ic_weights(bic[ok])
    return pd.DataFrame({
        "r": [s.index for s in grid.submodels],
        "blocks": [s.label for s in grid.submodels],
        "k": grid.k,
        "logL": grid.logL.mean(axis=1),
        "aic": aic,
        "bic": bic,
        "lambda_aic": lam_aic,
        "lambda_bic": lam_bic,
        "beta_focus": [p[0] for p in pooled],
        "se": [np.sqrt(p[1]) for p in pooled],
        "error": [grid.failures.get(r, "") for r in range(len(grid.submodels))],
    })


def grid_csv(grid: SubmodelGrid, target: str = "ame") -> str:
    buf = io.StringIO()
    grid_table(grid, target).to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
    return buf.getvalue()


def grand_designs(impset: ImputationSet, patterns: PatternSet, outcome: str | None = None,
                  levels: dict | None = None) -> list[GrandDesign]:
    return [assemble_grand_design(d, patterns, outcome, levels) for d in impset.completed]


def mi_model_average(
    impset: ImputationSet,
    patterns: PatternSet,
    outcome: str | None = None,
    criterion: str = "bic",
    target: str = "ame",
    order: str = "pool-first",
    cluster=None,
) -> AveragedEstimate:
    """Block model averaging across M imputations.

    ``patterns`` must come from the original (masked) data and cover the
    same rows as every completed dataset.
    """
    designs = grand_designs(impset, patterns, outcome)
    grid = fit_grid(designs, cluster=cluster)
    return average_grid(grid, criterion, target, order)
