"""Covariate bases built from binary dummies, and degenerate-column pruning."""
from itertools import combinations
from math import comb

import numpy as np
from scipy import linalg

from .data import FeatureMatrix

DEFAULT_SUBSET_CAP = 200_000


def _check_binary(V, names):
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError("dummies must be a 2-d array")
    for j in range(V.shape[1]):
        col = V[:, j]
        bad = np.flatnonzero((col != 0) & (col != 1))
        if bad.size:
            raise ValueError(
                f"column {names[j]!r} is not binary: row {int(bad[0])} has value {float(col[bad[0]])!r}"
            )
    return V


def _names(k, names):
    return tuple(names) if names is not None else tuple(f"v{j + 1}" for j in range(k))


def interaction_expand(dummies, max_order, names=None):
    """All products of up to ``max_order`` distinct dummies (no constant)."""
    V0 = np.asarray(dummies)
    k = V0.shape[1]
    names = _names(k, names)
    V = _check_binary(V0, names)
    if not 1 <= max_order <= k:
        raise ValueError(f"max_order must lie in 1..{k}, got {max_order}")
    cols, labels, prov = [], [], []
    for order in range(1, max_order + 1):
        for A in combinations(range(k), order):
            cols.append(np.prod(V[:, A], axis=1))
            labels.append("*".join(names[j] for j in A))
            prov.append("raw" if order == 1 else f"interaction({order})")
    return FeatureMatrix(np.column_stack(cols), tuple(labels), tuple(prov))


def hadamard_walsh_expand(dummies, min_size, max_size, names=None, cap=DEFAULT_SUBSET_CAP):
    """Walsh characters psi_A(v) = (-1)^{|A n {j: v_j = 1}|} for
    ``min_size <= |A| <= max_size``; subsets by size, then lexicographically."""
    V0 = np.asarray(dummies)
    k = V0.shape[1]
    names = _names(k, names)
    V = _check_binary(V0, names)
    if not 0 <= min_size <= max_size <= k:
        raise ValueError(f"need 0 <= min_size <= max_size <= {k}, got {min_size}, {max_size}")
    count = sum(comb(k, s) for s in range(min_size, max_size + 1))
    if count > cap:
        raise ValueError(f"{count} Hadamard-Walsh subsets exceed the cap of {cap}")
    signs = 1.0 - 2.0 * V
    cols, labels, prov = [], [], []
    for size in range(min_size, max_size + 1):
        for A in combinations(range(k), size):
            cols.append(np.prod(signs[:, A], axis=1) if A else np.ones(V.shape[0]))
            labels.append("hw(" + ",".join(names[j] for j in A) + ")")
            prov.append(f"hadamard({size})")
    values = np.column_stack(cols) if cols else np.empty((V.shape[0], 0))
    return FeatureMatrix(values, tuple(labels), tuple(prov))


def prune_columns(X, groups, min_nonzero=5, qr_tol=1e-6, with_constant=True):
    """Indices of columns kept after two passes over every row group.

    Count pass: drop a column with at most ``min_nonzero`` nonzero entries in
    any group. QR pass: within each group, a column-pivoted QR of the
    surviving columns (constant projected out when ``with_constant``) drops
    every pivot whose ``|R_ii| < qr_tol``; repeated until stable.
    """
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    groups = [np.asarray(g, dtype=np.intp) for g in groups]
    if any(g.size == 0 for g in groups):
        raise ValueError("empty row group")
    if min_nonzero < 0 or qr_tol <= 0:
        raise ValueError("need min_nonzero >= 0 and qr_tol > 0")
    keep = np.ones(values.shape[1], dtype=bool)
    for g in groups:
        keep &= np.count_nonzero(values[g], axis=0) > min_nonzero
    kept = np.flatnonzero(keep)
    # Repeat the QR pass until no group drops anything, so every group sees
    # the final retained set.
    changed = True
    while changed and kept.size:
        changed = False
        for g in groups:
            if kept.size == 0:
                break
            sub = values[np.ix_(g, kept)]
            if with_constant:
                sub = sub - sub.mean(axis=0)
            R, piv = linalg.qr(sub, mode="r", pivoting=True)
            diag = np.abs(np.diag(R))
            good = np.zeros(kept.size, dtype=bool)
            good[piv[: diag.size][diag >= qr_tol]] = True
            if not good.all():
                kept = kept[good]
                changed = True
    return tuple(int(j) for j in kept)
