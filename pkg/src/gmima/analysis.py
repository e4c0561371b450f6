"""Per-country, per-item estimation with CCA, fill-in MI and block averaging.

Imputation runs once on the whole file; each (country, item) cell then
restricts the completed data to respondents eligible for that item (item
observed) in that country. AMEs average over the cell's complete cases.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .averaging import average_grid, fit_grid, grid_table, pool_estimates, submodel_ame
from .errors import EstimationError, ValidationError
from .impute import DEFAULT_BURN_IN, ImputationSet, multiple_impute, rubin_pool
from .logit import AmeResult, ame_contrast, ame_from_estimate, fit_logit
from .patterns import GrandDesign, assemble_grand_design, detect_patterns, merge_small_patterns
from .tabular import Dataset, country_split, design_matrix

METHODS = ("cca", "fi-mi", "bbma-bic", "bbma-aic")
ALL = "ALL"


@dataclass
class CellEstimate:
    """One method on one (country, item) cell."""

    method: str
    country: str
    item: str
    n: int
    n_cc: int
    names: list[str] = field(default_factory=list)
    coef: np.ndarray | None = None
    coef_se: np.ndarray | None = None
    ame: AmeResult | None = None
    df: float = np.inf
    grid: pd.DataFrame | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def eligible(ds: Dataset, item: str) -> np.ndarray:
    """Rows with the item observed."""
    return ~ds.frame[item].isna().to_numpy()


def _cell_patterns(ds: Dataset, k: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return merge_small_patterns(detect_patterns(ds), k + 1)


def _cca(ds: Dataset, item: str, ps, cluster: bool):
    cc = ps.complete
    sub = ds.subset(cc)
    X, names = design_matrix(sub)
    y = sub.frame[item].to_numpy(dtype=float)
    cl = sub.frame[ds.schema.interviewer].to_numpy() if cluster else None
    fit = fit_logit(y, X, cluster=cl, names=names)
    X1, X0 = X.copy(), X.copy()
    X1[:, 1], X0[:, 1] = 1.0, 0.0
    est, var = ame_contrast(fit.beta, X1, X0, fit.cov)
    return names, fit.beta, fit.se, ame_from_estimate(est, np.sqrt(var)), np.inf


def _pool_vectors(betas: np.ndarray, covs: np.ndarray):
    if len(betas) == 1:
        return betas[0], np.sqrt(np.diag(covs[0]))
    pooled = [rubin_pool(betas[:, j], covs[:, j, j]) for j in range(betas.shape[1])]
    return np.array([p.qbar for p in pooled]), np.array([p.se for p in pooled])


def _mi(designs: Sequence[GrandDesign], method: str, cluster, ma_order: str):
    names = designs[0].names
    if method == "fi-mi":
        fits = [fit_logit(d.y, d.W, cluster=cluster) for d in designs]
        coef, se = _pool_vectors(np.array([f.beta for f in fits]), np.array([f.cov for f in fits]))
        ames = np.array([submodel_ame(f, d, ()) for f, d in zip(fits, designs)])
        est, var, df = pool_estimates(ames[:, 0], ames[:, 1])
        return names, coef, se, ame_from_estimate(est, np.sqrt(var), df), df, None
    crit = method.split("-")[1]
    grid = fit_grid(designs, cluster=cluster)
    a = average_grid(grid, crit, "ame", ma_order)
    c = average_grid(grid, crit, "coef", ma_order)
    table = grid_table(grid, "ame")
    names = [names[designs[0].focus]]
    return (names, np.array([c.beta_ma]), np.array([c.se_ma]),
            ame_from_estimate(a.beta_ma, a.se_ma, a.df), a.df, table)


def estimate_cell(
    ds: Dataset,
    item: str,
    method: str,
    impset: ImputationSet | None = None,
    rows: np.ndarray | None = None,
    country: str = ALL,
    cluster: bool = False,
    ma_order: str = "pool-first",
) -> CellEstimate:
    """Estimate one method on the rows of ``ds`` selected by ``rows``."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    rows = np.ones(ds.n, bool) if rows is None else np.asarray(rows, bool)
    rows = rows & eligible(ds, item)
    sub = ds.subset(rows).with_schema(outcomes=(item,))
    k = len(design_matrix(sub)[1])
    ps = _cell_patterns(sub, k)
    out = CellEstimate(method, country, item, sub.n, int(ps.complete.sum()))
    try:
        if method == "cca":
            out.names, out.coef, out.coef_se, out.ame, out.df = _cca(sub, item, ps, cluster)
            return out
        if impset is None:
            raise ValidationError(f"method {method!r} needs imputations")
        designs = []
        for d in impset.completed:
            filled = d.subset(rows).with_schema(outcomes=(item,))
            designs.append(assemble_grand_design(filled, ps, item))
        cl = sub.frame[ds.schema.interviewer].to_numpy() if cluster else None
        out.names, out.coef, out.coef_se, out.ame, out.df, out.grid = _mi(designs, method, cl, ma_order)
    except EstimationError as exc:
        out.error = exc.code
    return out


def estimate_all(
    ds: Dataset,
    methods: Sequence[str],
    items: Sequence[str] | None = None,
    by_country: bool = False,
    m: int = 20,
    seed: int | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    cluster: bool = False,
    ma_order: str = "pool-first",
    impset: ImputationSet | None = None,
) -> tuple[list[CellEstimate], ImputationSet | None]:
    """Every requested method on every (country, item) cell."""
    items = list(items or ds.schema.outcomes)
    for item in items:
        if item not in ds.schema.outcomes:
            raise ValidationError(f"{item!r} is not an outcome column")
    if impset is None and any(mt != "cca" for mt in methods):
        if seed is None:
            raise ValidationError("a seed is required for imputation-based methods")
        impset = multiple_impute(ds, m, seed=seed, burn_in=burn_in)
    if by_country:
        country = ds.frame[ds.schema.country].to_numpy()
        cells = [(code, country == code) for code, _ in country_split(ds)]
    else:
        cells = [(ALL, np.ones(ds.n, bool))]
    out = []
    for code, rows in cells:
        for item in items:
            for method in methods:
                out.append(estimate_cell(ds, item, method, impset, rows, code, cluster, ma_order))
    return out, impset


def estimates_csv(cells: Sequence[CellEstimate]) -> str:
    """Long table: one row per cell and coefficient."""
    rows = []
    for c in cells:
        if not c.ok:
            rows.append([c.method, c.country, c.item, c.n, c.n_cc, "", "", "", c.error])
            continue
        for name, b, s in zip(c.names, c.coef, c.coef_se):
            rows.append([c.method, c.country, c.item, c.n, c.n_cc, name, repr(float(b)),
                         repr(float(s)), ""])
    frame = pd.DataFrame(rows, columns=["method", "country", "item", "n", "n_cc", "term",
                                        "estimate", "se", "error"])
    buf = io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def ame_csv(cells: Sequence[CellEstimate]) -> str:
    rows = []
    for c in cells:
        if c.ok:
            a = c.ame
            rows.append([c.method, c.country, c.item, c.n, c.n_cc, repr(a.ame), repr(a.se),
                         repr(a.p), repr(float(c.df)), a.stars, ""])
        else:
            rows.append([c.method, c.country, c.item, c.n, c.n_cc, "", "", "", "", "", c.error])
    frame = pd.DataFrame(rows, columns=["method", "country", "item", "n", "n_cc", "ame", "se",
                                        "p", "df", "stars", "error"])
    buf = io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def grids_csv(cells: Sequence[CellEstimate]) -> str:
    frames = []
    for c in cells:
        if c.ok and c.grid is not None:
            g = c.grid.copy()
            g.insert(0, "item", c.item)
            g.insert(0, "country", c.country)
            g.insert(0, "method", c.method)
            frames.append(g)
    if not frames:
        return ""
    buf = io.StringIO()
    pd.concat(frames).to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
    return buf.getvalue()


def all_failed(cells: Sequence[CellEstimate]) -> str | None:
    """Error code of the first cell when no cell succeeded."""
    if cells and not any(c.ok for c in cells):
        return cells[0].error
    return None
