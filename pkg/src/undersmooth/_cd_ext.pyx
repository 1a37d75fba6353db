# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernels for the weighted lasso.

Both kernels work on the Gram form: minimize 0.5 b'Gb - c'b + sum_j w_j |b_j|,
keeping the gradient residual r = c - Gb up to date ("covariance updates").
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline double _soft(double z, double t) noexcept nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


cdef double _sweep(double[:, ::1] G, double[::1] w, double[::1] beta,
                   double[::1] r, Py_ssize_t[::1] idx, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t a, j, l, p = G.shape[0]
    cdef double gjj, old, new, delta, step, worst = 0.0
    for a in range(m):
        j = idx[a]
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        old = beta[j]
        new = _soft(r[j] + gjj * old, w[j]) / gjj
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            for l in range(p):
                r[l] -= G[j, l] * delta
            step = fabs(delta) * sqrt(gjj)
            if step > worst:
                worst = step
    return worst


cdef double _kkt_violation(double[:, ::1] G, double[::1] w, double[::1] beta,
                           double[::1] r) noexcept nogil:
    cdef Py_ssize_t j, p = G.shape[0]
    cdef double v, worst = 0.0
    for j in range(p):
        if G[j, j] <= 0.0:
            continue
        if beta[j] == 0.0:
            v = fabs(r[j]) - w[j]
        elif beta[j] > 0.0:
            v = fabs(r[j] - w[j])
        else:
            v = fabs(r[j] + w[j])
        if v > worst:
            worst = v
    return worst


cdef int _solve(double[:, ::1] G, double[::1] c, double[::1] w, double[::1] beta,
                double[::1] r, Py_ssize_t[::1] all_idx, Py_ssize_t[::1] act_idx,
                double kkt_tol, int max_iter, int *n_iter) noexcept nogil:
    cdef Py_ssize_t j, m, p = G.shape[0]
    cdef double step
    cdef int it = 0
    while it < max_iter:
        _sweep(G, w, beta, r, all_idx, p)
        it += 1
        if _kkt_violation(G, w, beta, r) <= kkt_tol:
            n_iter[0] = it
            return 1
        m = 0
        for j in range(p):
            if beta[j] != 0.0:
                act_idx[m] = j
                m += 1
        while it < max_iter:
            step = _sweep(G, w, beta, r, act_idx, m)
            it += 1
            if step <= 0.1 * kkt_tol:
                break
    n_iter[0] = it
    return 0


def cd_gram(double[:, ::1] G, double[::1] c, double[::1] w, double[::1] beta0,
            double kkt_tol, int max_iter):
    """Solve one weighted lasso problem in Gram form from a warm start.

    Returns ``(beta, n_iter, converged)``.
    """
    cdef Py_ssize_t p = G.shape[0]
    beta_arr = np.array(beta0, dtype=np.float64, copy=True)
    cdef double[::1] beta = beta_arr
    r_arr = np.asarray(c, dtype=np.float64) - np.asarray(G) @ beta_arr
    cdef double[::1] r = r_arr
    cdef Py_ssize_t[::1] all_idx = np.arange(p, dtype=np.intp)
    cdef Py_ssize_t[::1] act_idx = np.empty(p, dtype=np.intp)
    cdef int n_iter = 0, ok
    with nogil:
        ok = _solve(G, c, w, beta, r, all_idx, act_idx, kkt_tol, max_iter, &n_iter)
    return beta_arr, n_iter, bool(ok)


def cd_path_gram(double[:, ::1] G, double[::1] c, double[::1] psi,
                 double[::1] lambdas, double kkt_tol, int max_iter,
                 double yy=0.0, double max_r2=2.0):
    """Warm-started solutions along a decreasing penalty grid.

    Penalty weights at grid point ``k`` are ``lambdas[k] * psi / 2``.
    With ``yy = y'y`` given, the path stops once the training R^2 reaches
    ``max_r2``; later rows repeat the last solution.
    Returns ``(coefs, converged, n_computed)``; ``coefs`` is (len(lambdas), p).
    """
    cdef Py_ssize_t p = G.shape[0], L = lambdas.shape[0], k, j
    coefs_arr = np.zeros((L, p), dtype=np.float64)
    conv_arr = np.zeros(L, dtype=bool)
    cdef double[:, ::1] coefs = coefs_arr
    beta_arr = np.zeros(p, dtype=np.float64)
    cdef double[::1] beta = beta_arr
    r_arr = np.array(c, dtype=np.float64, copy=True)
    cdef double[::1] r = r_arr
    w_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef Py_ssize_t[::1] all_idx = np.arange(p, dtype=np.intp)
    cdef Py_ssize_t[::1] act_idx = np.empty(p, dtype=np.intp)
    cdef int n_iter = 0, ok
    cdef double fit
    cdef Py_ssize_t done = L
    for k in range(L):
        for j in range(p):
            w[j] = 0.5 * lambdas[k] * psi[j]
        with nogil:
            ok = _solve(G, c, w, beta, r, all_idx, act_idx, kkt_tol, max_iter, &n_iter)
            for j in range(p):
                coefs[k, j] = beta[j]
        conv_arr[k] = ok
        if yy > 0.0:
            fit = 0.0
            for j in range(p):
                fit += (c[j] + r[j]) * beta[j]
            if fit >= max_r2 * yy:
                done = k + 1
                break
    for k in range(done, L):
        coefs_arr[k] = coefs_arr[done - 1]
        conv_arr[k] = conv_arr[done - 1]
    return coefs_arr, conv_arr, done
