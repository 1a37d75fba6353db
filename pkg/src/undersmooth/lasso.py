"""Heteroskedastic lasso, post-lasso refits and cross-validated lasso.

The penalized criterion is

    Q(b) = (1/n) ||y - a - X b||^2 + (lam/n) * sum_j psi_j |b_j|

with the intercept ``a`` unpenalized and profiled out by centering.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._kernels import cd_gram, cd_path_gram
from ._linalg import ols


class LassoConvergenceError(RuntimeError):
    """Coordinate descent hit ``max_iter`` before the KKT check passed."""


@dataclass(frozen=True)
class PenaltyPlan:
    """Overall penalty level and per-coefficient loadings."""

    level: float
    loadings: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.loadings, dtype=np.float64)
        if not np.all(np.isfinite(psi)) or np.any(psi <= 0):
            raise ValueError("penalty loadings must be strictly positive and finite")
        if not np.isfinite(self.level) or self.level < 0:
            raise ValueError(f"penalty level must be finite and >= 0, got {self.level}")
        object.__setattr__(self, "loadings", psi)


@dataclass
class CVPath:
    lambdas: np.ndarray
    cv_error: np.ndarray
    best_index: int
    seed: int


@dataclass
class FitResult:
    """Result of a lasso or OLS fit.

    ``coef`` excludes the intercept, which is stored separately.
    """

    coef: np.ndarray
    intercept: float
    support: tuple
    residuals: np.ndarray
    objective: float
    converged: bool = True
    n_iter: int = 0
    plan: PenaltyPlan = None
    cv: CVPath = None
    dropped: tuple = field(default_factory=tuple)


def _center(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = X.mean(axis=0)
    ym = y.mean()
    return X - xm, y - ym, xm, ym


def lasso_objective(X, y, coef, intercept, plan):
    """Q at ``(intercept, coef)``."""
    n = len(y)
    r = y - intercept - X @ coef
    return float(r @ r / n + plan.level / n * np.sum(plan.loadings * np.abs(coef)))


def kkt_violation(X, y, fit, plan):
    """Largest KKT residual of ``fit`` in the units of ``|2 X_j'(y - X b)|``."""
    Xc, yc, _, _ = _center(X, y)
    grad = 2.0 * Xc.T @ (yc - Xc @ fit.coef)
    pen = plan.level * plan.loadings
    b = fit.coef
    v = np.where(b == 0, np.abs(grad) - pen, np.abs(grad - pen * np.sign(b)))
    return float(max(v.max(initial=0.0), 0.0))


def marginal_topk_residuals(X, y, k=5):
    """Residuals from OLS of ``y`` on an intercept and the ``k`` columns most
    correlated (in absolute value) with ``y``; ties go to the lower index."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > min(n - 1, p):
        raise ValueError(f"k={k} exceeds min(n-1, p)={min(n - 1, p)}")
    Xc, yc, _, _ = _center(X, y)
    sx = np.sqrt(np.sum(Xc**2, axis=0))
    sy = np.sqrt(yc @ yc)
    if sy == 0:
        raise ValueError("y has zero variance")
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(sx > 0, (Xc.T @ yc) / (sx * sy), 0.0)
    top = np.argsort(-np.abs(corr), kind="stable")[:k]
    Z = np.column_stack([np.ones(n), X[:, np.sort(top)]])
    _, resid, _ = ols(Z, y, tol=1e-10, what="marginal top-k regression")
    return resid


def penalty_loadings(X, e):
    """psi_j = sqrt(mean_i x_ij^2 e_i^2)."""
    X = np.asarray(X, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if not np.any(e):
        raise ValueError("residuals are identically zero")
    psi = np.sqrt(np.mean(X**2 * (e**2)[:, None], axis=0))
    bad = np.flatnonzero(psi == 0)
    if bad.size:
        raise ValueError(
            f"zero penalty loading for columns {bad.tolist()}; prune constant-zero columns first"
        )
    return psi


def penalty_level(n, p, c=1.1, gamma=None):
    """lam = 2 c sqrt(n) Phi^{-1}(1 - gamma / (2p)), gamma defaulting to 0.1 / log(max(p, n))."""
    if n < 2 or p < 1:
        raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if gamma is None:
        gamma = 0.1 / np.log(max(p, n))
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return float(2.0 * c * np.sqrt(n) * stats.norm.isf(gamma / (2.0 * p)))


def lasso_cd(X, y, plan, tol=1e-6, max_iter=100_000, warm_start=None):
    """Weighted lasso by coordinate descent with covariance updates.

    Convergence requires every KKT condition to hold within ``tol * n``
    (in the units of ``2 X_j'(y - X b)``). A fit that runs out of iterations
    is returned with ``converged=False``.
    """
    Xc, yc, xm, ym = _center(X, y)
    n, p = Xc.shape
    if plan.loadings.shape != (p,):
        raise ValueError(f"expected {p} loadings, got {plan.loadings.shape}")
    if not np.all(np.isfinite(Xc)):
        raise ValueError("X contains non-finite values")
    G = Xc.T @ Xc
    c = Xc.T @ yc
    w = 0.5 * plan.level * plan.loadings
    b0 = np.zeros(p) if warm_start is None else np.asarray(warm_start, dtype=np.float64)
    coef, n_iter, ok = cd_gram(G, c, w, b0, 0.5 * tol * n, int(max_iter))
    intercept = float(ym - xm @ coef)
    resid = np.asarray(y, dtype=np.float64) - intercept - np.asarray(X) @ coef
    support = tuple(int(j) for j in np.flatnonzero(coef))
    obj = float(resid @ resid / n + plan.level / n * np.sum(plan.loadings * np.abs(coef)))
    return FitResult(coef, intercept, support, resid, obj, bool(ok), int(n_iter), plan)


def require_converged(fit, allow_nonconverged=False):
    if not fit.converged and not allow_nonconverged:
        raise LassoConvergenceError(
            f"coordinate descent did not converge in {fit.n_iter} sweeps"
        )
    return fit


def heteroskedastic_lasso(X, y, c=1.1, gamma=None, k_init=5, tol=1e-6,
                          max_iter=100_000, allow_nonconverged=False, refresh="post_lasso"):
    """Heteroskedastic lasso with marginal-correlation initial loadings.

    Initial residuals come from OLS on the ``k_init`` covariates most
    correlated with ``y``. The loadings are then refreshed once before the
    final fit, from the residuals of the OLS refit on the first support
    (``refresh="post_lasso"``) or of the first lasso fit itself
    (``refresh="lasso"``). Shrunken lasso residuals inflate the loadings
    and can empty the support, so the refit is the default.
    """
    if refresh not in ("post_lasso", "lasso"):
        raise ValueError(f"refresh must be 'post_lasso' or 'lasso', got {refresh!r}")
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    Xc, _, _, _ = _center(X, y)
    lam = penalty_level(n, p, c, gamma)
    e0 = marginal_topk_residuals(X, y, min(k_init, n - 1, p))
    plan = PenaltyPlan(lam, penalty_loadings(Xc, e0))
    first = require_converged(lasso_cd(X, y, plan, tol, max_iter), allow_nonconverged)
    if refresh == "post_lasso" and len(first.support) < n - 1:
        e1 = post_lasso(X, y, first.support).residuals
    else:
        e1 = first.residuals
    plan = PenaltyPlan(lam, penalty_loadings(Xc, e1))
    fit = lasso_cd(X, y, plan, tol, max_iter, warm_start=first.coef)
    return require_converged(fit, allow_nonconverged)


def post_lasso(X, y, support):
    """OLS of ``y`` on an intercept and the columns in ``support``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    S = sorted(int(j) for j in support)
    if len(S) >= n:
        raise ValueError(f"support size {len(S)} must be below n={n}")
    Z = np.column_stack([np.ones(n), X[:, S]]) if S else np.ones((n, 1))
    b, resid, kept = ols(Z, y, tol=1e-10, what="post-lasso refit")
    coef = np.zeros(p)
    coef[S] = b[1:]
    dropped = tuple(S[i - 1] for i in range(1, len(S) + 1) if i not in set(kept.tolist()))
    sup = tuple(j for j in S if j not in dropped)
    return FitResult(coef, float(b[0]), sup, resid, float(resid @ resid / n), dropped=dropped)


def lambda_grid(X, y, loadings=None, n_lambdas=100, ratio=1e-4):
    """Log-spaced grid from the smallest all-zero penalty down by ``ratio``."""
    Xc, yc, _, _ = _center(X, y)
    psi = np.ones(Xc.shape[1]) if loadings is None else np.asarray(loadings, dtype=np.float64)
    lam_max = float(np.max(np.abs(2.0 * Xc.T @ yc) / psi))
    return np.geomspace(lam_max, lam_max * ratio, n_lambdas)


def _path(X, y, psi, lambdas, tol, max_iter, max_r2):
    Xc, yc, xm, ym = _center(X, y)
    n = len(yc)
    coefs, conv, done = cd_path_gram(
        Xc.T @ Xc, Xc.T @ yc, psi, lambdas, 0.5 * tol * n, int(max_iter), float(yc @ yc), max_r2
    )
    intercepts = ym - coefs @ xm
    return coefs, intercepts, conv, done


def cv_lasso(X, y, folds=10, rng_seed=0, loadings=None, n_lambdas=100, ratio=1e-4,
             tol=1e-4, max_iter=100_000, max_r2=0.999):
    """Lasso with the penalty level picked by K-fold cross-validation.

    Folds are a seeded random partition. The grid is truncated where the
    full-sample path reaches training R^2 ``max_r2``. Loadings default to one.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    if np.ptp(y) == 0:
        raise ValueError("y is constant")
    psi = np.ones(p) if loadings is None else np.asarray(loadings, dtype=np.float64)
    lambdas = lambda_grid(X, y, psi, n_lambdas, ratio)
    full, full_b0, full_conv, done = _path(X, y, psi, lambdas, tol, max_iter, max_r2)
    lambdas = lambdas[:done]
    rng = np.random.default_rng(rng_seed)
    assign = rng.permutation(np.arange(n) % folds)
    fold_mse = np.zeros((folds, done))
    for f in range(folds):
        test = assign == f
        coefs, b0, _, _ = _path(X[~test], y[~test], psi, lambdas, tol, max_iter, max_r2)
        pred = b0[:, None] + coefs @ X[test].T
        fold_mse[f] = np.mean((y[test][None, :] - pred) ** 2, axis=1)
    cv_err = fold_mse.mean(axis=0)
    best = int(np.argmin(cv_err))
    if best == done - 1 and done < n_lambdas:
        warnings.warn(f"CV minimum sits at the truncated end of the grid (R^2 >= {max_r2})",
                      RuntimeWarning, stacklevel=2)
    plan = PenaltyPlan(float(lambdas[best]), psi)
    fit = lasso_cd(X, y, plan, tol, max_iter, warm_start=full[best])
    fit.cv = CVPath(lambdas, cv_err, best, rng_seed)
    if not fit.converged:
        warnings.warn("cross-validated lasso refit did not converge", RuntimeWarning, stacklevel=2)
    return fit
