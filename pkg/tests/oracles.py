"""Independent reference computations used by several test modules.

Nothing here calls the package's fitting code: models are refit with
``numpy.linalg.lstsq``, HC0 covariances are summed observation by
observation and small lasso problems are solved by sign enumeration.
"""
import itertools

import numpy as np
from scipy.stats import norm

from undersmooth.lasso import PenaltyPlan


def columns(data, slots):
    k = data.k
    cols = []
    for s in slots:
        if s == 0:
            cols.append(np.ones(data.n))
        elif s <= k:
            cols.append(data.X[:, s - 1])
        elif s == k + 1:
            cols.append(data.d)
        else:
            cols.append(data.d * data.X[:, s - k - 2])
    return np.column_stack(cols)


def model_slots(base, interact, k):
    return sorted({0, k + 1} | {1 + j for j in base} | {k + 2 + j for j in interact})


def direct_interval(data, slots, value_fn, grad_fn, alpha=0.05):
    """OLS on ``slots`` plus a delta-method interval for a functional given as
    callables on the full-length coefficient vector."""
    Z = columns(data, slots)
    b = np.linalg.lstsq(Z, data.y, rcond=None)[0]
    e = data.y - Z @ b
    bread = np.linalg.inv(Z.T @ Z)
    meat = sum(ei**2 * np.outer(z, z) for z, ei in zip(Z, e))
    V = bread @ meat @ bread
    theta = np.zeros(2 * data.k + 2)
    theta[slots] = b
    g = grad_fn(theta)[slots]
    est = value_fn(theta)
    se = np.sqrt(g @ V @ g)
    z = norm.isf(alpha / 2)
    return est - z * se, est + z * se


def exhaustive_bounds(data, base, interact, value_fn, grad_fn, sbar, alpha=0.05, pool=None):
    """Union of intervals over every model adding at most ``sbar`` covariates
    (each entering in levels and interacted) to the initial one."""
    k = data.k
    have = set(base) & set(interact)
    pool = [j for j in (range(k) if pool is None else pool) if j not in have]
    lo, up = direct_interval(data, model_slots(base, interact, k), value_fn, grad_fn, alpha)
    for size in range(1, sbar + 1):
        for add in itertools.combinations(pool, size):
            slots = model_slots(set(base) | set(add), set(interact) | set(add), k)
            if len(slots) >= data.n:
                continue
            a, b = direct_interval(data, slots, value_fn, grad_fn, alpha)
            lo, up = min(lo, a), max(up, b)
    return lo, up


def random_problem(seed, n=None, p=None, max_n=100, max_p=50):
    r = np.random.default_rng(seed)
    n = n or int(r.integers(10, max_n + 1))
    p = p or int(r.integers(1, max_p + 1))
    X = r.standard_normal((n, p))
    if p > 1:
        X[:, 1:] += 0.5 * X[:, :-1]
    beta = np.where(r.random(p) < 0.3, r.normal(0, 2, p), 0.0)
    y = 1.0 + X @ beta + r.standard_normal(n)
    psi = r.uniform(0.5, 2.0, p)
    Xc = X - X.mean(axis=0)
    lam_max = np.max(np.abs(2 * Xc.T @ (y - y.mean())) / psi)
    lam = lam_max * r.uniform(0.01, 0.9)
    return X, y, PenaltyPlan(lam, psi)


def direct_kkt(X, y, coef, plan):
    """Largest KKT residual, recomputed from scratch."""
    n = len(y)
    a = np.mean(y - X @ coef)
    g = 2 * X.T @ (y - a - X @ coef)  # intercept is profiled out, so X need not be centred
    pen = plan.level * plan.loadings
    out = 0.0
    for j in range(X.shape[1]):
        if coef[j] == 0:
            out = max(out, abs(g[j]) - pen[j])
        else:
            out = max(out, abs(g[j] - pen[j] * np.sign(coef[j])))
    return out


def enumeration_oracle(X, y, plan):
    """Global minimum of the lasso objective by enumerating all 3^p sign patterns."""
    n, p = X.shape
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    pen = plan.level * plan.loadings
    best = np.inf
    for signs in itertools.product((-1, 0, 1), repeat=p):
        s = np.array(signs, dtype=float)
        S = np.flatnonzero(s)
        b = np.zeros(p)
        if S.size:
            A = Xc[:, S]
            G = A.T @ A
            if np.linalg.matrix_rank(G) < S.size:
                continue
            b[S] = np.linalg.solve(G, A.T @ yc - 0.5 * pen[S] * s[S])
            if np.any(np.sign(b[S]) != s[S]):
                continue
        r = yc - Xc @ b
        best = min(best, r @ r / n + plan.level / n * np.sum(plan.loadings * np.abs(b)))
    return best
