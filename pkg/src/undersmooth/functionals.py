"""Scalar targets of the heterogeneous-effects model and their gradients.

Every functional maps a full slot-indexed coefficient vector ``theta`` (and
the data, for sample-average targets) to a real number. The ``*_batch``
methods take a ``(B, p)`` stack of coefficient vectors and are what the
greedy search calls.
"""
from dataclasses import dataclass

import numpy as np

from .data import base_slot, interaction_slot, treatment_slot


def _gamma_slots(k):
    return np.arange(k + 1, 2 * k + 2)


def cate_value(gamma, x_star):
    """Main treatment effect plus ``x_star`` dotted with the interaction terms.

    ``gamma`` is ``(main, zeta_1, ..., zeta_k)``.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.shape != (gamma.shape[0] - 1,):
        raise ValueError(f"x_star has dimension {x_star.shape}, expected {gamma.shape[0] - 1}")
    return float(gamma[0] + x_star @ gamma[1:])


def _check_margin(nu, cost):
    if not 0 < nu < 1:
        raise ValueError(f"margin nu must lie in (0, 1), got {nu}")
    if not cost > 0:
        raise ValueError(f"cost must be positive, got {cost}")


def _cates(G, X):
    # G: (B, k+1) gamma parts -> (B, n) individual effects
    return G[:, :1] + G[:, 1:] @ X.T


def profit_vs_none(gamma, X, nu, cost):
    """(nu/n) sum_i 1{nu*te_i > c} (te_i - c/nu), te_i = gamma_0 + x_i'zeta."""
    _check_margin(nu, cost)
    te = _cates(np.atleast_2d(gamma), np.asarray(X, dtype=np.float64))[0]
    act = nu * te > cost
    return float(nu * np.mean(np.where(act, te - cost / nu, 0.0)))


def profit_vs_all(gamma, X, nu, cost):
    """(nu/n) sum_i (1{nu*te_i > c} - 1)(te_i - c/nu)."""
    _check_margin(nu, cost)
    te = _cates(np.atleast_2d(gamma), np.asarray(X, dtype=np.float64))[0]
    act = nu * te > cost
    return float(nu * np.mean((act - 1.0) * (te - cost / nu)))


def profit_gradient(kind, gamma, X, nu, cost):
    """Gradient of a profit differential wrt the gamma part, indicators frozen."""
    _check_margin(nu, cost)
    X = np.asarray(X, dtype=np.float64)
    te = _cates(np.atleast_2d(gamma), X)[0]
    wts = (nu * te > cost).astype(np.float64)
    if kind == "profit_vs_all":
        wts = wts - 1.0
    elif kind != "profit_vs_none":
        raise ValueError(f"unknown profit kind {kind!r}")
    n = X.shape[0]
    return nu / n * np.concatenate([[wts.sum()], wts @ X])


class Functional:
    kind = "abstract"

    def touched_slots(self, data):
        raise NotImplementedError

    def value_batch(self, Theta, data):
        raise NotImplementedError

    def gradient_batch(self, Theta, data):
        raise NotImplementedError

    def value(self, theta, data):
        return float(self.value_batch(np.atleast_2d(theta), data)[0])

    def gradient(self, theta, data):
        return self.gradient_batch(np.atleast_2d(theta), data)[0]


@dataclass(frozen=True)
class Coefficient(Functional):
    """A single coefficient, addressed by its slot in the full layout."""

    slot: int
    kind = "coefficient"

    @classmethod
    def base(cls, j):
        return cls(base_slot(j))

    @classmethod
    def interaction(cls, j, k):
        return cls(interaction_slot(j, k))

    @classmethod
    def treatment(cls, k):
        return cls(treatment_slot(k))

    def touched_slots(self, data):
        return frozenset([self.slot])

    def value_batch(self, Theta, data):
        return Theta[:, self.slot].copy()

    def gradient_batch(self, Theta, data):
        g = np.zeros_like(Theta)
        g[:, self.slot] = 1.0
        return g

    def to_dict(self):
        return {"kind": self.kind, "slot": self.slot}


@dataclass(frozen=True, eq=False)
class CateAt(Functional):
    """Treatment effect for a hypothetical subject with covariates ``x_star``."""

    x_star: np.ndarray
    kind = "cate"

    def _xi(self, data):
        x = np.asarray(self.x_star, dtype=np.float64)
        if x.shape != (data.k,):
            raise ValueError(f"x_star has dimension {x.shape}, expected ({data.k},)")
        xi = np.zeros(data.n_slots)
        xi[_gamma_slots(data.k)] = np.concatenate([[1.0], x])
        return xi

    def touched_slots(self, data):
        return frozenset(np.flatnonzero(self._xi(data)).tolist())

    def value_batch(self, Theta, data):
        return Theta @ self._xi(data)

    def gradient_batch(self, Theta, data):
        return np.broadcast_to(self._xi(data), Theta.shape).copy()

    def to_dict(self):
        return {"kind": self.kind, "x_star": [float(v) for v in np.asarray(self.x_star)]}


@dataclass(frozen=True)
class _Profit(Functional):
    nu: float = 0.30
    cost: float = 0.70

    def __post_init__(self):
        _check_margin(self.nu, self.cost)

    def touched_slots(self, data):
        gs = _gamma_slots(data.k)
        live = np.concatenate([[True], np.any(data.X != 0, axis=0)])
        return frozenset(gs[live].tolist())

    def _weights(self, Theta, data):
        te = _cates(Theta[:, _gamma_slots(data.k)], data.X)
        act = (self.nu * te > self.cost).astype(np.float64)
        return te, act

    def gradient_batch(self, Theta, data):
        _, act = self._weights(Theta, data)
        if self.kind == "profit_vs_all":
            act = act - 1.0
        g = np.zeros_like(Theta)
        gs = _gamma_slots(data.k)
        g[:, gs[0]] = act.sum(axis=1)
        g[:, gs[1:]] = act @ data.X
        return self.nu / data.n * g

    def to_dict(self):
        return {"kind": self.kind, "nu": self.nu, "cost": self.cost}


class ProfitVsNone(_Profit):
    """Per-person profit gain of targeting ``1{nu*te(x) > c}`` over mailing no one."""

    kind = "profit_vs_none"

    def value_batch(self, Theta, data):
        te, act = self._weights(Theta, data)
        return self.nu * np.mean(act * (te - self.cost / self.nu), axis=1)


class ProfitVsAll(_Profit):
    """Per-person profit gain of the targeting rule over mailing everyone."""

    kind = "profit_vs_all"

    def value_batch(self, Theta, data):
        te, act = self._weights(Theta, data)
        return self.nu * np.mean((act - 1.0) * (te - self.cost / self.nu), axis=1)


@dataclass(frozen=True)
class HeterogeneityWald:
    """Joint test that all interaction coefficients in a model are zero.

    Not interval valued; consumed by ``tu.tu_wald_test``.
    """

    kind = "heterogeneity_wald"

    def slots(self, model, data):
        return [interaction_slot(j, data.k) for j in model.interact_indices]

    def to_dict(self):
        return {"kind": self.kind}


def functional_from_config(cfg, data):
    """Build a functional from ``{"kind": ..., params...}``.

    Coefficients may be given as ``slot`` or as ``{"interaction": j}`` /
    ``{"base": j}`` / ``{"treatment": true}``, where ``j`` is a 0-based
    covariate index or a covariate name.
    """
    kind = cfg["kind"]
    if kind == "coefficient":
        if "slot" in cfg:
            return Coefficient(int(cfg["slot"]))
        if cfg.get("treatment"):
            return Coefficient.treatment(data.k)
        for which in ("interaction", "base"):
            if which in cfg:
                j = cfg[which]
                if isinstance(j, str):
                    j = data.names.index(j)
                j = int(j)
                return Coefficient.interaction(j, data.k) if which == "interaction" else Coefficient.base(j)
        raise ValueError("coefficient functional needs 'slot', 'base', 'interaction' or 'treatment'")
    if kind == "cate":
        x = cfg["x_star"]
        if np.isscalar(x):
            x = np.full(data.k, float(x))
        return CateAt(np.asarray(x, dtype=np.float64))
    if kind in ("profit_vs_none", "profit_vs_all"):
        if "nu" not in cfg or "cost" not in cfg:
            raise ValueError(f"{kind} requires 'nu' and 'cost'")
        cls = ProfitVsNone if kind == "profit_vs_none" else ProfitVsAll
        return cls(float(cfg["nu"]), float(cfg["cost"]))
    if kind == "heterogeneity_wald":
        return HeterogeneityWald()
    raise ValueError(f"unknown functional kind {kind!r}")
