"""OLS on a fixed model with HC0 covariance, delta-method intervals and Wald tests."""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from ._linalg import ols


class DroppedSlotError(ValueError):
    """A functional needs a slot that was dropped for rank deficiency."""


@dataclass
class ModelFit:
    model: object
    data: object
    slots: np.ndarray
    coefficients: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    n_used: int
    dropped: tuple = ()

    @property
    def theta(self):
        """Full slot-indexed coefficient vector, zero outside the model."""
        th = np.zeros(self.data.n_slots)
        th[self.slots] = self.coefficients
        return th


@dataclass
class ModelInterval:
    model: object
    estimate: float
    std_error: float
    lower: float
    upper: float
    alpha: float
    flags: tuple = field(default_factory=tuple)

    @property
    def length(self):
        return self.upper - self.lower

    def contains(self, value):
        return self.lower <= value <= self.upper

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "estimate": self.estimate,
            "se": self.std_error,
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            "flags": list(self.flags),
        }


def hc0_covariance(Z, resid):
    """(Z'Z)^{-1} Z' diag(e^2) Z (Z'Z)^{-1}, via a thin QR of ``Z``."""
    Q, R = np.linalg.qr(Z)
    B = linalg.solve_triangular(R, (Q * resid[:, None]).T)  # R^{-1} Q' diag(e)
    V = B @ B.T
    return 0.5 * (V + V.T)


def ols_hc_fit(data, model, hc="HC0"):
    """OLS of ``y`` on the model's slot columns with HC0 covariance."""
    if hc != "HC0":
        raise NotImplementedError(f"covariance variant {hc!r}")
    slots = np.asarray(model.slots(data.k), dtype=np.intp)
    if slots.size >= data.n:
        raise ValueError(f"model has {slots.size} slots but n={data.n}")
    Z = data.design(slots)
    coef, resid, kept = ols(Z, data.y, tol=1e-10, what="model fit")
    dropped = tuple(int(s) for i, s in enumerate(slots) if i not in set(kept.tolist()))
    Zk = Z[:, kept]
    V = hc0_covariance(Zk, resid) if kept.size else np.zeros((0, 0))
    return ModelFit(model, data, slots[kept], coef[kept], V, resid, data.n, dropped)


def plugin_fit(data, model, theta, resid):
    """A ModelFit carrying externally estimated coefficients (e.g. lasso) with
    HC0 covariance built from the supplied residuals."""
    slots = np.asarray(model.slots(data.k), dtype=np.intp)
    Z = data.design(slots)
    _, _, kept = ols(Z, data.y, tol=1e-10, what="plug-in fit")
    dropped = tuple(int(s) for i, s in enumerate(slots) if i not in set(kept.tolist()))
    slots = slots[kept]
    V = hc0_covariance(Z[:, kept], np.asarray(resid, dtype=np.float64))
    return ModelFit(model, data, slots, np.asarray(theta)[slots], V, np.asarray(resid), data.n, dropped)


def normal_quantile(alpha):
    return float(stats.norm.isf(alpha / 2.0))


def functional_interval(fit, f, alpha=0.05):
    """Delta-method interval ``estimate +/- z_{1-alpha/2} sqrt(g'Vg)``.

    Slots outside the model count as exactly zero with zero variance; the
    interval is flagged ``extrapolated-zero`` when ``f`` depends on any.
    """
    data = fit.data
    touched = f.touched_slots(data)
    bad = touched & set(fit.dropped)
    if bad:
        names = ", ".join(data.slot_name(s) for s in sorted(bad))
        raise DroppedSlotError(f"functional needs dropped slot(s): {names}")
    theta = fit.theta
    est = f.value(theta, data)
    g = f.gradient(theta, data)[fit.slots]
    se = float(np.sqrt(max(g @ fit.covariance @ g, 0.0)))
    z = normal_quantile(alpha)
    flags = ()
    if not touched <= set(fit.slots.tolist()):
        flags = ("extrapolated-zero",)
    return ModelInterval(fit.model, est, se, est - z * se, est + z * se, alpha, flags)


def wald_test(fit, slots):
    """Wald statistic for ``theta[slots] = 0`` with chi-square p-value.

    Returns ``(W, df, p)``.
    """
    slots = [int(s) for s in slots]
    pos = {int(s): i for i, s in enumerate(fit.slots)}
    missing = [s for s in slots if s not in pos]
    if missing:
        names = ", ".join(fit.data.slot_name(s) for s in missing)
        raise DroppedSlotError(f"slots not in fitted model: {names}")
    idx = [pos[s] for s in slots]
    if not idx:
        return 0.0, 0, 1.0
    b = fit.coefficients[idx]
    V = fit.covariance[np.ix_(idx, idx)]
    return wald_statistic(b, V)


def wald_statistic(b, V, tol=1e-10):
    b = np.asarray(b, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if b.size == 0:
        return 0.0, 0, 1.0
    w, U = np.linalg.eigh(V)
    if w.max() <= 0 or w.min() <= tol * w.max():
        raise np.linalg.LinAlgError("restricted covariance is singular")
    proj = U.T @ b
    W = float(np.sum(proj**2 / w))
    df = b.size
    return W, df, chi2_pvalue(W, df)


def chi2_pvalue(W, df):
    """Upper tail of the chi-square distribution."""
    if df == 0:
        return 1.0
    return float(stats.chi2.sf(W, df))
