"""Binary logit by IRLS, information criteria, sandwich covariances, AMEs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    FocusNotBinary,
    NotConverged,
    PerfectSeparation,
    RankDeficient,
    TooFewClusters,
)

# two-sided p-value thresholds, strictest first
STAR_THRESHOLDS = (("**", 0.01), ("*", 0.05))
SEPARATION_BOUND = 30.0


@dataclass
class FitResult:
    """One maximum-likelihood logit fit.

    ``cov`` is the covariance used for inference: the inverse observed
    information unless the fit was clustered, in which case the cluster
    sandwich. ``cov_oim`` always holds the inverse observed information.
    """

    beta: np.ndarray
    cov: np.ndarray
    logL: float
    n: int
    converged: bool = True
    iterations: int = 0
    names: list[str] | None = None
    cov_oim: np.ndarray | None = None
    cov_kind: str = "oim"
    X: np.ndarray | None = field(default=None, repr=False)
    y: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float).reshape(self.k, self.k)
        if self.cov_oim is None:
            self.cov_oim = self.cov

    @property
    def k(self) -> int:
        return self.beta.size

    @property
    def aic(self) -> float:
        return aic(self.logL, self.k)

    @property
    def bic(self) -> float:
        return bic(self.logL, self.k, self.n)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class AmeResult:
    ame: float
    se: float
    z: float
    p: float
    stars: str


def aic(logL: float, k: int) -> float:
    return -2.0 * logL + 2.0 * k


def bic(logL: float, k: int, n: int) -> float:
    return -2.0 * logL + k * np.log(n)


def information_criteria(fit: FitResult) -> tuple[float, float]:
    """(AIC, BIC) of a fit."""
    return fit.aic, fit.bic


def _check_dims(y: np.ndarray, X: np.ndarray, beta: np.ndarray | None = None) -> None:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"y has shape {y.shape}, X has shape {X.shape}")
    if beta is not None and beta.shape != (X.shape[1],):
        raise DimensionMismatch(f"beta has shape {beta.shape}, X has {X.shape[1]} columns")


def _loglik_eta(eta: np.ndarray, y: np.ndarray) -> float:
    # -log(1 + exp(-s*eta)) with s = +1 for y=1, -1 for y=0; finite at eta = +-inf
    s = 2.0 * y - 1.0
    return float(-np.logaddexp(0.0, -s * eta).sum())


def log_likelihood(beta, y, X) -> float:
    """Bernoulli-logit log-likelihood, sum of y*eta - log(1 + exp(eta))."""
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    _check_dims(y, X, beta)
    with np.errstate(invalid="ignore"):
        eta = X @ beta
    return _loglik_eta(eta, y)


def _column_scales(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sd = X.std(axis=0)
    const = sd < 1e-12
    return np.where(const, 1.0, sd), const


def _standardized(beta, eta, scale, const) -> np.ndarray:
    out = np.abs(beta * scale)
    if const.any():
        out[const] = abs(float(eta.mean()))
    return out


def fit_logit(
    y,
    X,
    cluster=None,
    names: list[str] | None = None,
    beta0=None,
    max_iter: int = 100,
    check_rank: bool = True,
) -> FitResult:
    """Maximum-likelihood binary logit via IRLS with step halving.

    Stops when the max-norm of the score falls below 1e-8 or the relative
    change in log-likelihood below 1e-12, provided the Newton step has
    itself become negligible. Raises :class:`PerfectSeparation` when a
    coefficient exceeds 30 in standardized units, or when the likelihood
    flattens while the coefficients keep moving.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    _check_dims(y, X)
    n, k = X.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise DimensionMismatch("y must be 0/1")
    if not np.isfinite(X).all():
        raise DimensionMismatch("X contains non-finite values")
    if k > n or (check_rank and np.linalg.matrix_rank(X) < k):
        raise RankDeficient(f"design matrix ({n}x{k}) is not of full column rank")

    scale, const = _column_scales(X)
    beta = np.zeros(k) if beta0 is None else np.array(beta0, dtype=float)
    eta = X @ beta
    ll = _loglik_eta(eta, y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        score = X.T @ (y - p)
        info = (X * w[:, None]).T @ X
        try:
            with warnings.catch_warnings():
                # near-singular information signals separation, caught below
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        step_std = np.max(np.abs(step * scale)) if k else 0.0

        if np.max(np.abs(score), initial=0.0) < 1e-8 and step_std < 1e-6:
            converged = True
            break

        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = X @ cand
            ll_c = _loglik_eta(eta_c, y)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        beta, eta, ll = cand, eta_c, ll_c

        if np.any(_standardized(beta, eta, scale, const) > SEPARATION_BOUND):
            raise PerfectSeparation("coefficients diverge; outcome is (quasi-)separated")
        if rel < 1e-12:
            if t * step_std < 1e-6:
                converged = True
                break
            if step_std > 1.0:
                raise PerfectSeparation("log-likelihood flat while coefficients diverge")
    if not converged:
        raise NotConverged(f"IRLS did not converge in {max_iter} iterations")

    p = expit(eta)
    info = (X * (p * (1.0 - p))[:, None]).T @ X
    try:
        cov = linalg.cho_solve(linalg.cho_factor(info), np.eye(k))
    except linalg.LinAlgError as exc:
        raise RankDeficient("information matrix is not positive definite") from exc
    if not np.isfinite(cov).all() or (np.diag(cov) <= 0).any():
        raise RankDeficient("information matrix is numerically singular")
    cov = 0.5 * (cov + cov.T)
    fit = FitResult(
        beta=beta, cov=cov, logL=ll, n=n, converged=True, iterations=it,
        names=names, X=X, y=y,
    )
    if cluster is not None:
        fit.cov = cluster_robust_cov(fit, cluster)
        fit.cov_kind = "cluster"
    return fit


def scores(fit: FitResult) -> np.ndarray:
    """Per-observation score contributions x_i (y_i - p_i), shape (n, k)."""
    p = expit(fit.X @ fit.beta)
    return fit.X * (fit.y - p)[:, None]


def robust_cov(fit: FitResult) -> np.ndarray:
    """Heteroskedasticity-robust sandwich with the n/(n-k) correction."""
    s = scores(fit)
    A_inv = fit.cov_oim
    V = A_inv @ (s.T @ s) @ A_inv
    return V * fit.n / (fit.n - fit.k)


def cluster_robust_cov(fit: FitResult, cluster) -> np.ndarray:
    """Cluster sandwich A^-1 B A^-1 with factor G/(G-1) * (n-1)/(n-k).

    B sums outer products of the within-cluster score totals.
    """
    cluster = np.asarray(cluster)
    if cluster.shape[0] != fit.n:
        raise DimensionMismatch("cluster vector length differs from the number of rows")
    labels, inverse = np.unique(cluster, return_inverse=True)
    G = labels.size
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")
    s = scores(fit)
    totals = np.zeros((G, fit.k))
    np.add.at(totals, inverse, s)
    A_inv = fit.cov_oim
    V = A_inv @ (totals.T @ totals) @ A_inv
    factor = G / (G - 1) * (fit.n - 1) / (fit.n - fit.k)
    V = factor * V
    return 0.5 * (V + V.T)


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    for mark, threshold in STAR_THRESHOLDS:
        if p < threshold:
            return mark
    return ""


def _toggled(X: np.ndarray, focus: int) -> tuple[np.ndarray, np.ndarray]:
    X1 = X.copy()
    X0 = X.copy()
    X1[:, focus] = 1.0
    X0[:, focus] = 0.0
    return X1, X0


def ame_value(beta, focus: int, X) -> float:
    """Mean over rows of Lambda(eta | d=1) - Lambda(eta | d=0)."""
    X1, X0 = _toggled(np.asarray(X, dtype=float), focus)
    beta = np.asarray(beta, dtype=float)
    return float(np.mean(expit(X1 @ beta) - expit(X0 @ beta)))


def ame_gradient(beta, focus: int, X) -> np.ndarray:
    """Gradient of :func:`ame_value` with respect to beta."""
    X1, X0 = _toggled(np.asarray(X, dtype=float), focus)
    beta = np.asarray(beta, dtype=float)
    p1 = expit(X1 @ beta)
    p0 = expit(X0 @ beta)
    return ((p1 * (1 - p1))[:, None] * X1 - (p0 * (1 - p0))[:, None] * X0).mean(axis=0)


def ame_from_estimate(est: float, se: float, df: float = np.inf) -> AmeResult:
    if se > 0 and np.isfinite(se):
        z = est / se
        p = 2.0 * (stats.norm.sf(abs(z)) if not np.isfinite(df) else stats.t.sf(abs(z), df))
    else:
        z, p = np.nan, np.nan
    return AmeResult(ame=float(est), se=float(se), z=float(z), p=float(p), stars=stars(p))


def ame_contrast(beta, X1, X0, cov) -> tuple[float, float]:
    """Mean of Lambda(X1 beta) - Lambda(X0 beta) and its delta-method variance.

    The general form behind :func:`ame_binary`, for designs where switching
    the focus regressor moves more than one column (e.g. interaction blocks).
    """
    beta = np.asarray(beta, dtype=float)
    p1 = expit(X1 @ beta)
    p0 = expit(X0 @ beta)
    est = float(np.mean(p1 - p0))
    g = ((p1 * (1 - p1))[:, None] * X1 - (p0 * (1 - p0))[:, None] * X0).mean(axis=0)
    return est, max(float(g @ cov @ g), 0.0)


def ame_binary(fit: FitResult, focus: int, X, cov=None) -> AmeResult:
    """Average marginal effect of a binary regressor, delta-method SE.

    The average runs over the rows of ``X``; pass the rows the effect
    should be averaged over (not necessarily the estimation sample).
    """
    X = np.asarray(X, dtype=float)
    col = X[:, focus]
    if not np.isin(col, (0.0, 1.0)).all():
        raise FocusNotBinary(f"column {focus} is not 0/1")
    V = fit.cov if cov is None else np.asarray(cov, dtype=float)
    X1, X0 = _toggled(X, focus)
    est, var = ame_contrast(fit.beta, X1, X0, V)
    return ame_from_estimate(est, np.sqrt(var))
