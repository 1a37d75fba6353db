"""Targeted undersmoothing.

Starting from an initially selected model, two greedy forward searches add
up to ``sbar`` covariates each: the lower search adds whichever candidate
pushes the interval's lower end furthest down, the upper search whichever
pushes the upper end furthest up. Reported bounds are running extrema along
each path, so the interval for ``sbar' < sbar`` is nested in the one for
``sbar``.

Candidate evaluation is vectorized: for a current design ``Z = QR`` and a
candidate block ``A`` the augmented fit follows from the Schur complement
``S = A~'A~`` with ``A~ = A - QQ'A``, so no candidate requires a fresh
factorization.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import RankDeficiencyWarning
from .data import HetModelSpec, base_slot, interaction_slot
from .inference import (
    DroppedSlotError,
    functional_interval,
    normal_quantile,
    ols_hc_fit,
    wald_test,
)
from .functionals import HeterogeneityWald
from .selection import select_initial_model

CHUNK = 512
SCHUR_TOL = 1e-10


@dataclass(frozen=True)
class Candidate:
    """A unit the search can add: covariate ``index`` via its level slot,
    its interaction slot, or both."""

    index: int
    base: bool
    interact: bool

    def slots(self, k):
        out = []
        if self.base:
            out.append(base_slot(self.index))
        if self.interact:
            out.append(interaction_slot(self.index, k))
        return out

    def apply(self, model):
        return model.add(
            base=(self.index,) if self.base else (),
            interact=(self.index,) if self.interact else (),
        )

    def label(self):
        kind = "pair" if self.base and self.interact else ("base" if self.base else "interact")
        return {"index": self.index, "kind": kind}


@dataclass
class PathStep:
    added: Candidate
    interval: object
    n_evaluated: int


@dataclass
class TUResult:
    lower: float
    upper: float
    initial_model: HetModelSpec
    initial_interval: object
    lower_path: list
    upper_path: list
    per_sbar: list
    alpha: float
    sbar: int
    truncated: bool = False
    skipped: int = 0
    flags: tuple = field(default_factory=tuple)

    @property
    def length(self):
        return self.upper - self.lower

    def to_dict(self):
        return {
            "interval": [self.lower, self.upper],
            "alpha": self.alpha,
            "sbar": self.sbar,
            "initial_model": self.initial_model.to_dict(),
            "initial_interval": self.initial_interval.to_dict(),
            "lower_path": [
                {"added": s.added.label(), "interval": s.interval.to_dict()} for s in self.lower_path
            ],
            "upper_path": [
                {"added": s.added.label(), "interval": s.interval.to_dict()} for s in self.upper_path
            ],
            "per_sbar": [{"sbar": i, "lower": lo, "upper": up} for i, (lo, up) in enumerate(self.per_sbar)],
            "truncated": self.truncated,
            "skipped_candidates": self.skipped,
            "flags": list(self.flags),
        }


def candidate_pool(model, k, candidates=None, paired=True):
    """Candidates not yet (fully) in ``model``, ordered by covariate index."""
    idx = range(k) if candidates is None else sorted({int(j) for j in candidates})
    base, inter = set(model.base_indices), set(model.interact_indices)
    out = []
    for j in idx:
        nb, ni = j not in base, j not in inter
        if paired:
            if nb or ni:
                out.append(Candidate(j, nb, ni))
        else:
            if nb:
                out.append(Candidate(j, True, False))
            if ni:
                out.append(Candidate(j, False, True))
    return out


class _Current:
    """Factorized fit of the current model."""

    def __init__(self, fit):
        self.fit = fit
        self.slots = fit.slots
        Z = fit.data.design(self.slots)
        self.Q, self.R = np.linalg.qr(Z)
        self.theta = fit.theta
        self.resid = fit.residuals


def evaluate_candidates(current, cands, f, alpha):
    """Intervals for every augmented model ``current + c`` at once.

    Returns ``(lower, upper, ok)`` arrays aligned with ``cands``; ``ok`` is
    False where the candidate is (numerically) collinear with the model.
    """
    data = current.fit.data
    k = data.k
    B = len(cands)
    lower = np.full(B, np.nan)
    upper = np.full(B, np.nan)
    ok = np.zeros(B, dtype=bool)
    z = normal_quantile(alpha)
    by_width = {}
    for i, c in enumerate(cands):
        by_width.setdefault(len(c.slots(k)), []).append(i)
    for w, members in by_width.items():
        for start in range(0, len(members), CHUNK):
            rows = np.asarray(members[start:start + CHUNK])
            slots = np.array([cands[i].slots(k) for i in rows], dtype=np.intp)  # (b, w)
            lo, up, good = _evaluate_block(current, slots, f, data, z)
            lower[rows], upper[rows], ok[rows] = lo, up, good
    return lower, upper, ok


def _evaluate_block(cur, cslots, f, data, z):
    Q, R, e = cur.Q, cur.R, cur.resid
    b, w = cslots.shape
    A = np.moveaxis(data.design(cslots), 2, 0)  # (w, n, b)
    QtA = [Q.T @ A[i] for i in range(w)]  # (m, b) each
    At = [A[i] - Q @ QtA[i] for i in range(w)]
    S = np.empty((b, w, w))
    for i in range(w):
        for j in range(i, w):
            S[:, i, j] = S[:, j, i] = np.einsum("nb,nb->b", At[i], At[j])
    scale = np.stack([np.einsum("nb,nb->b", A[i], A[i]) for i in range(w)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        Dn = 1.0 / np.sqrt(scale)
        Sn = np.nan_to_num(S * Dn[:, :, None] * Dn[:, None, :])
        good = np.all(scale > 0, axis=1) & (np.linalg.eigvalsh(Sn).min(axis=1) > SCHUR_TOL)
    S[~good] = np.eye(w)
    Sinv = np.linalg.inv(S)
    Ate = np.stack([e @ At[i] for i in range(w)], axis=1)  # (b, w)
    bA = np.einsum("bij,bj->bi", Sinv, Ate)
    E = e[:, None] - sum(At[i] * bA[:, i] for i in range(w))
    shift = linalg.solve_triangular(R, sum(QtA[i] * bA[:, i] for i in range(w)))  # (m, b)
    Theta = np.repeat(cur.theta[None, :], b, axis=0)
    Theta[:, cur.slots] -= shift.T
    Theta[np.arange(b)[:, None], cslots] = bA
    est = f.value_batch(Theta, data)
    G = f.gradient_batch(Theta, data)
    gZ = G[:, cur.slots]
    gA = np.take_along_axis(G, cslots, axis=1)
    h0 = Q @ linalg.solve_triangular(R, gZ.T, trans="T")  # (n, b)
    Ah0 = np.stack([np.einsum("nb,nb->b", A[i], h0) for i in range(w)], axis=1)
    coefh = np.einsum("bij,bj->bi", Sinv, gA - Ah0)
    H = h0 + sum(At[i] * coefh[:, i] for i in range(w))
    se = np.sqrt(np.einsum("nb,nb->b", E * H, E * H))
    lo, up = est - z * se, est + z * se
    lo[~good] = np.nan
    up[~good] = np.nan
    return lo, up, good


def _greedy(data, f, model, fit0, sbar, alpha, direction, candidates, paired):
    path = []
    truncated = False
    skipped = 0
    current = _Current(fit0)
    for _ in range(sbar):
        pool = candidate_pool(model, data.k, candidates, paired)
        pool = [c for c in pool if len(current.slots) + len(c.slots(data.k)) <= data.n - 1]
        if not pool:
            truncated = True
            break
        lo, up, good = evaluate_candidates(current, pool, f, alpha)
        skipped += int((~good).sum())
        if not good.any():
            truncated = True
            break
        # nan-aware argmin/argmax; first occurrence = lowest covariate index
        i = int(np.nanargmin(lo)) if direction == "lower" else int(np.nanargmax(up))
        chosen = pool[i]
        new_model = chosen.apply(model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            fit = ols_hc_fit(data, new_model)
        model = new_model
        path.append(PathStep(chosen, functional_interval(fit, f, alpha), len(pool)))
        current = _Current(fit)
    if skipped:
        warnings.warn(
            f"{direction} search skipped {skipped} collinear candidate evaluations",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    return path, truncated, skipped


def running_bounds(initial, lower_path, upper_path, sbar):
    """Per-sbar intervals as running min/max over path prefixes."""
    out = [(initial.lower, initial.upper)]
    lo, up = initial.lower, initial.upper
    for s in range(sbar):
        if s < len(lower_path):
            lo = min(lo, lower_path[s].interval.lower)
        if s < len(upper_path):
            up = max(up, upper_path[s].interval.upper)
        out.append((lo, up))
    return out


def tu_interval(data, f, sbar, alpha=0.05, initial=None, candidates=None, paired=True):
    """Targeted-undersmoothing interval for functional ``f``.

    ``initial`` defaults to :func:`select_initial_model`; ``candidates``
    restricts the covariates the searches may add.
    """
    if sbar < 0:
        raise ValueError("sbar must be non-negative")
    if initial is None:
        initial = select_initial_model(data)
    fit0 = ols_hc_fit(data, initial)
    iv0 = functional_interval(fit0, f, alpha)
    lower_path, t1, k1 = _greedy(data, f, initial, fit0, sbar, alpha, "lower", candidates, paired)
    upper_path, t2, k2 = _greedy(data, f, initial, fit0, sbar, alpha, "upper", candidates, paired)
    per = running_bounds(iv0, lower_path, upper_path, sbar)
    flags = ("truncated",) if (t1 or t2) else ()
    return TUResult(
        per[-1][0], per[-1][1], initial, iv0, lower_path, upper_path, per,
        alpha, sbar, t1 or t2, k1 + k2, flags,
    )


def split_indices(n, seed):
    """Random halves ``(A, B)`` of sizes ceil(n/2) and floor(n/2)."""
    perm = np.random.default_rng(seed).permutation(n)
    na = (n + 1) // 2
    return np.sort(perm[:na]), np.sort(perm[na:])


def tu_interval_split(data, f, sbar, alpha=0.05, split_seed=0, candidates=None, paired=True,
                      selector=None):
    """Sample-split variant: select on half A, search and infer on half B."""
    if data.n < 20:
        raise ValueError(f"sample split needs n >= 20, got {data.n}")
    a, b = split_indices(data.n, split_seed)
    selector = selector or select_initial_model
    initial = selector(data.subset(a))
    return tu_interval(data.subset(b), f, sbar, alpha, initial, candidates, paired)


def sensitivity_path(data, f, sbar_max, alpha=0.05, initial=None, candidates=None, paired=True):
    """One search of length ``sbar_max``; rows for every ``sbar`` are prefixes."""
    if sbar_max < 1:
        raise ValueError("sbar_max must be at least 1")
    res = tu_interval(data, f, sbar_max, alpha, initial, candidates, paired)
    return sensitivity_rows(res)


def sensitivity_rows(res):
    rows = []
    for s, (lo, up) in enumerate(res.per_sbar):
        rows.append({
            "sbar": s,
            "lower": lo,
            "upper": up,
            "length": up - lo,
            "lower_added": res.lower_path[s - 1].added.label() if 0 < s <= len(res.lower_path) else None,
            "upper_added": res.upper_path[s - 1].added.label() if 0 < s <= len(res.upper_path) else None,
        })
    return rows


@dataclass
class WaldTUResult:
    W: float
    df: int
    p: float
    path: list
    per_sbar: list
    initial_model: HetModelSpec

    def to_dict(self):
        return {
            "W": self.W,
            "df": self.df,
            "p": self.p,
            "initial_model": self.initial_model.to_dict(),
            "path": self.path,
            "per_sbar": self.per_sbar,
        }


def _wald_on(data, model):
    fit = ols_hc_fit(data, model)
    slots = HeterogeneityWald().slots(model, data)
    return wald_test(fit, slots)


def tu_wald_test(data, sbar, candidates=None, initial=None, paired=True):
    """Most conservative heterogeneity Wald test over up to ``sbar`` additions.

    Each greedy step adds the candidate with the largest p-value for the
    joint null that every interaction coefficient in the model is zero.
    """
    if initial is None:
        initial = select_initial_model(data)
    W, df, p = _wald_on(data, initial)
    path = [{"sbar": 0, "added": None, "W": W, "df": df, "p": p}]
    model = initial
    for step in range(1, sbar + 1):
        best = None
        pool = candidate_pool(model, data.k, candidates, paired)
        for c in pool:
            trial = c.apply(model)
            if trial.size() > data.n - 1:
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RankDeficiencyWarning)
                    res = _wald_on(data, trial)
            except (np.linalg.LinAlgError, DroppedSlotError):
                warnings.warn(f"skipping candidate {c.label()}: singular covariance",
                              RankDeficiencyWarning, stacklevel=2)
                continue
            if best is None or res[2] > best[1][2]:
                best = (c, res, trial)
        if best is None:
            break
        c, (W, df, p), model = best
        path.append({"sbar": step, "added": c.label(), "W": W, "df": df, "p": p})
    per_sbar = []
    top = path[0]
    for row in path:
        if row["p"] > top["p"]:
            top = row
        per_sbar.append({"sbar": row["sbar"], "W": top["W"], "df": top["df"], "p": top["p"]})
    final = per_sbar[-1]
    return WaldTUResult(final["W"], final["df"], final["p"], path, per_sbar, initial)
