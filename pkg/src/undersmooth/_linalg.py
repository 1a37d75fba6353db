"""Small dense linear-algebra helpers shared by the estimation modules."""
import warnings

import numpy as np
from scipy import linalg


class RankDeficiencyWarning(UserWarning):
    """Columns were dropped because the design was numerically rank deficient."""


def independent_columns(Z, tol=1e-10):
    """Indices (ascending) of a maximal independent column subset of ``Z``.

    Uses column-pivoted QR; a pivot is kept while ``|R_ii| > tol * |R_00|``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    m = Z.shape[1]
    if m == 0:
        return np.arange(0)
    _, R, piv = linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.arange(0)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:rank])


def ols(Z, y, tol=1e-10, warn=True, what="design"):
    """Least squares of ``y`` on ``Z`` with pivoted dropping of dependent columns.

    Returns ``(coef, resid, kept)``; ``coef`` is full length with zeros at
    dropped columns.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kept = independent_columns(Z, tol)
    if kept.size < Z.shape[1] and warn:
        dropped = sorted(set(range(Z.shape[1])) - set(kept.tolist()))
        warnings.warn(
            f"{what}: dropped linearly dependent columns {dropped}",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    coef = np.zeros(Z.shape[1])
    if kept.size:
        Q, R = np.linalg.qr(Z[:, kept])
        coef[kept] = linalg.solve_triangular(R, Q.T @ y)
    resid = y - Z @ coef
    return coef, resid, kept
