"""Pure-Python coordinate-descent kernels (fallback for the compiled core).

Mirrors ``_cd_ext`` step for step so both backends produce the same iterates
up to floating-point summation order.
"""
import numpy as np


def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _sweep(G, w, beta, r, idx):
    worst = 0.0
    for j in idx:
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        old = beta[j]
        new = _soft(r[j] + gjj * old, w[j]) / gjj
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            r -= G[j] * delta
            step = abs(delta) * np.sqrt(gjj)
            if step > worst:
                worst = step
    return worst


def _kkt_violation(G, w, beta, r):
    live = np.diag(G) > 0.0
    v = np.where(
        beta == 0.0,
        np.abs(r) - w,
        np.abs(r - np.sign(beta) * w),
    )
    v = v[live]
    return float(v.max()) if v.size else 0.0


def _solve(G, c, w, beta, r, kkt_tol, max_iter):
    p = G.shape[0]
    all_idx = range(p)
    it = 0
    while it < max_iter:
        _sweep(G, w, beta, r, all_idx)
        it += 1
        if _kkt_violation(G, w, beta, r) <= kkt_tol:
            return it, True
        act = np.flatnonzero(beta)
        while it < max_iter:
            step = _sweep(G, w, beta, r, act)
            it += 1
            if step <= 0.1 * kkt_tol:
                break
    return it, False


def cd_gram(G, c, w, beta0, kkt_tol, max_iter):
    G = np.ascontiguousarray(G, dtype=np.float64)
    beta = np.array(beta0, dtype=np.float64, copy=True)
    r = np.asarray(c, dtype=np.float64) - G @ beta
    n_iter, ok = _solve(G, np.asarray(c, dtype=np.float64), np.asarray(w, dtype=np.float64), beta, r, kkt_tol, max_iter)
    return beta, n_iter, ok


def cd_path_gram(G, c, psi, lambdas, kkt_tol, max_iter, yy=0.0, max_r2=2.0):
    G = np.ascontiguousarray(G, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    p = G.shape[0]
    coefs = np.zeros((len(lambdas), p))
    conv = np.zeros(len(lambdas), dtype=bool)
    beta = np.zeros(p)
    c = np.asarray(c, dtype=np.float64)
    r = c.copy()
    done = len(lambdas)
    for k, lam in enumerate(lambdas):
        _, ok = _solve(G, c, 0.5 * lam * psi, beta, r, kkt_tol, max_iter)
        coefs[k] = beta
        conv[k] = ok
        # explained sum of squares: 2c'b - b'Gb = (c + r)'b
        if yy > 0.0 and float((c + r) @ beta) >= max_r2 * yy:
            done = k + 1
            break
    coefs[done:] = coefs[done - 1]
    conv[done:] = conv[done - 1]
    return coefs, conv, done
