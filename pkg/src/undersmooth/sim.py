"""Monte Carlo harness for the censored-Gaussian heterogeneous-effects design.

Each replication draws ``n`` observations from

    y = alpha0 + x'beta0 + d*gamma0 + d*x'zeta0 + eps,

with ``x_j = (w_j - tau_j) 1{w_j >= tau_j}``, ``w`` Gaussian AR(1) with
coefficient 0.8, ``tau_j ~ U(0, 1.28)``, ``d ~ Bernoulli(0.5)``, and
``eps ~ N(0, 1)``; the coefficients are a fixed sparse pattern scaled so the
population R^2 is ``r2_target``. The estimator battery is True, All, Lasso,
PL, LCV and TU(0..sbar_max), for a single interaction coefficient, the
treatment effect at ``x* = 0.5``, and the profit gain of targeting over
mailing no one.
"""
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._linalg import RankDeficiencyWarning
from .data import Dataset, HetModelSpec, interaction_slot
from .functionals import CateAt, Coefficient, ProfitVsNone
from .inference import functional_interval, ols_hc_fit, plugin_fit
from .selection import cv_selection, initial_selection
from .tu import tu_interval

log = logging.getLogger(__name__)

AR_COEF = 0.8
TAU_MAX = 1.28
ESTIMATORS = ("True", "All", "Lasso", "PL", "LCV", "TU")
FUNCTIONALS = ("RegCoef", "TE", "PI")
CHUNK_ROWS = 200_000


@dataclass(frozen=True)
class SimDesign:
    n: int = 400
    p: int = 202
    s0: int = 4
    r2_target: float = 0.25
    reps: int = 500
    seed: int = 20160801
    nu: float = 0.30
    cost: float = 0.70
    alpha: float = 0.05
    sbar_max: int = 10
    fixed_tau: bool = False
    oracle_draws: int = 1_000_000
    estimators: tuple = ESTIMATORS
    cv_folds: int = 10
    paired: bool = True
    cv_max_r2: float = 0.9

    def __post_init__(self):
        if self.p % 2:
            raise ValueError(f"p must be even, got {self.p}")
        if self.s0 % 4:
            raise ValueError(f"s0 must be divisible by 4, got {self.s0}")
        if self.s0 // 2 > self.k:
            raise ValueError(f"s0={self.s0} needs at least {self.s0 // 2} covariates")
        if not 0 <= self.r2_target < 1:
            raise ValueError("r2_target must lie in [0, 1)")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def k(self):
        return (self.p - 2) // 2

    @property
    def active(self):
        return self.s0 // 2

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d


def unit_coefficients(design):
    """Coefficient pattern at scale 1: ``(alpha, beta, gamma, zeta)``."""
    n, s0, k = design.n, design.s0, design.k
    q = s0 // 4
    ups = (-1.0) ** np.arange(k)  # upsilon_j = (-1)^(j-1), 1-based
    beta = np.zeros(k)
    beta[:q] = 2 / np.sqrt(s0)
    beta[q:2 * q] = 2 / np.sqrt(n * s0)
    zeta = np.zeros(k)
    zeta[:q] = 4 / np.sqrt(n * s0)
    zeta[q:2 * q] = 4 / np.sqrt(s0)
    return 1 / np.sqrt(s0), beta * ups, 1 / (2 * np.sqrt(s0)), zeta * ups


def draw_latent(rng, rows, cols):
    """Gaussian rows with corr(w_j, w_l) = 0.8^|j-l| via the AR(1) recursion."""
    eta = rng.standard_normal((rows, cols))
    w = np.empty_like(eta)
    w[:, 0] = eta[:, 0]
    innov = np.sqrt(1.0 - AR_COEF**2)
    for j in range(1, cols):
        w[:, j] = AR_COEF * w[:, j - 1] + innov * eta[:, j]
    return w


def censor(w, tau):
    return np.where(w >= tau, w - tau, 0.0)


def draw_tau(rng, size):
    return rng.uniform(0.0, TAU_MAX, size=size)


def fixed_tau_vector(design):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([design.seed, 7])))
    return draw_tau(rng, design.k)


def _oracle_rows(design, rng, rows, tau_fixed):
    """Covariates (first ``active`` columns only) and treatment for oracle draws."""
    a = design.active
    w = draw_latent(rng, rows, a)
    tau = tau_fixed[:a][None, :] if tau_fixed is not None else draw_tau(rng, (rows, a))
    x = censor(w, tau)
    d = (rng.random(rows) < 0.5).astype(np.float64)
    return x, d


def _oracle_rng(seed, tag):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag])))


@dataclass
class Calibration:
    c25: float
    unit_signal_var: float
    unit_signal_var_se: float
    draws: int
    seed: int


def calibrate_c25(design, oracle_draws=None, cal_seed=None):
    """Scale making Var(signal) / (Var(signal) + 1) equal ``r2_target``.

    Var(signal) at unit scale is estimated by Monte Carlo; only covariates
    with nonzero coefficients are simulated.
    """
    draws = int(oracle_draws or design.oracle_draws)
    if draws < 100_000:
        raise ValueError("calibration needs at least 1e5 oracle draws")
    seed = design.seed if cal_seed is None else cal_seed
    a0, b, g0, z = unit_coefficients(design)
    a = design.active
    tau_fixed = fixed_tau_vector(design) if design.fixed_tau else None
    rng = _oracle_rng(seed, 1)
    total = 0
    vals = []
    while total < draws:
        rows = min(CHUNK_ROWS, draws - total)
        x, d = _oracle_rows(design, rng, rows, tau_fixed)
        sig = a0 + x @ b[:a] + d * (g0 + x @ z[:a])
        vals.append(sig)
        total += rows
    sig = np.concatenate(vals)
    var = float(sig.var())
    dev2 = (sig - sig.mean()) ** 2
    se = float(dev2.std() / np.sqrt(draws))
    if design.r2_target == 0:
        c = 0.0
    else:
        c = float(np.sqrt(design.r2_target / (1 - design.r2_target) / var))
    return Calibration(c, var, se, draws, seed)


@dataclass
class SimTruth:
    c25: float
    alpha0: float
    beta0: np.ndarray
    gamma0: float
    zeta0: np.ndarray
    calibration: Calibration = None
    targets: dict = field(default_factory=dict)
    target_se: dict = field(default_factory=dict)
    tau: np.ndarray = None

    @property
    def theta(self):
        return np.concatenate([[self.alpha0], self.beta0, [self.gamma0], self.zeta0])

    def support_model(self):
        nz = np.flatnonzero((self.beta0 != 0) | (self.zeta0 != 0))
        return HetModelSpec.paired(nz)


def make_truth(design, c25=None, oracle_draws=None):
    """Calibrated coefficients plus the three population targets."""
    cal = None
    if c25 is None:
        cal = calibrate_c25(design, oracle_draws)
        c25 = cal.c25
    a0, b, g0, z = unit_coefficients(design)
    truth = SimTruth(c25, c25 * a0, c25 * b, c25 * g0, c25 * z, cal)
    if design.fixed_tau:
        truth.tau = fixed_tau_vector(design)
    targets, ses = true_targets(design, truth, oracle_draws)
    truth.targets, truth.target_se = targets, ses
    return truth


def true_targets(design, truth, oracle_draws=None):
    """``(zeta_{0,1}, TE(x*), E[profit gain vs. none])`` and Monte Carlo SEs."""
    draws = int(oracle_draws or design.oracle_draws)
    a = design.active
    zeta1 = float(truth.zeta0[0])
    cate = float(truth.gamma0 + 0.5 * truth.zeta0.sum())
    rng = _oracle_rng(design.seed, 2)
    nu, cost = design.nu, design.cost
    vals = []
    total = 0
    while total < draws:
        rows = min(CHUNK_ROWS, draws - total)
        x, _ = _oracle_rows(design, rng, rows, truth.tau)
        te = truth.gamma0 + x @ truth.zeta0[:a]
        vals.append(np.where(nu * te > cost, nu * te - cost, 0.0))
        total += rows
    gain = np.concatenate(vals)
    targets = {"RegCoef": zeta1, "TE": cate, "PI": float(gain.mean())}
    ses = {"RegCoef": 0.0, "TE": 0.0, "PI": float(gain.std() / np.sqrt(draws))}
    return targets, ses


def draw_dataset(design, truth, rng):
    """One replication's data; returns ``(Dataset, eps, tau)``."""
    n, k = design.n, design.k
    w = draw_latent(rng, n, k)
    tau = truth.tau if truth.tau is not None else draw_tau(rng, k)
    X = censor(w, tau[None, :])
    d = (rng.random(n) < 0.5).astype(np.float64)
    eps = rng.standard_normal(n)
    y = truth.alpha0 + X @ truth.beta0 + d * (truth.gamma0 + X @ truth.zeta0) + eps
    return Dataset(y, X, d), eps, tau


def replication_rng(seed, rep):
    """Independent counter-based stream for replication ``rep``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def sim_functionals(design):
    k = design.k
    return {
        "RegCoef": Coefficient(interaction_slot(0, k)),
        "TE": CateAt(np.full(k, 0.5)),
        "PI": ProfitVsNone(design.nu, design.cost),
    }


def _record(iv):
    return (iv.estimate, iv.lower, iv.upper)


def run_replication(design, truth, rep):
    """All estimators on one replication.

    Returns ``{"rep", "point": {(est, fun): (estimate, lower, upper)},
    "tu": {fun: [(lower, upper), ...]}}``.
    """
    rng = replication_rng(design.seed, rep)
    data, _, _ = draw_dataset(design, truth, rng)
    funs = sim_functionals(design)
    est = set(design.estimators)
    out = {"rep": rep, "point": {}, "tu": {}, "s0_size": None}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        if "True" in est:
            fit = ols_hc_fit(data, truth.support_model())
            for name, f in funs.items():
                out["point"][("True", name)] = _record(functional_interval(fit, f, design.alpha))
        if "All" in est and design.p < design.n:
            fit = ols_hc_fit(data, HetModelSpec.paired(range(design.k)))
            for name, f in funs.items():
                out["point"][("All", name)] = _record(functional_interval(fit, f, design.alpha))
        need_sel = est & {"Lasso", "PL", "TU"}
        if need_sel:
            sel = initial_selection(data)
            model = sel.model
            out["s0_size"] = len(model.base_indices)
            if "PL" in est:
                fit = ols_hc_fit(data, model)
                for name, f in funs.items():
                    out["point"][("PL", name)] = _record(functional_interval(fit, f, design.alpha))
            if "Lasso" in est:
                theta = sel.lasso_theta(design.k)
                resid = data.y - data.design(range(data.n_slots)) @ theta
                fit = plugin_fit(data, model, theta, resid)
                for name, f in funs.items():
                    out["point"][("Lasso", name)] = _record(functional_interval(fit, f, design.alpha))
            if "TU" in est:
                for name, f in funs.items():
                    res = tu_interval(data, f, design.sbar_max, design.alpha, initial=model,
                                      paired=design.paired)
                    out["tu"][name] = [tuple(b) for b in res.per_sbar]
        if "LCV" in est:
            cv_seed = int(rng.integers(2**63 - 1))
            sel = cv_selection(data, design.cv_folds, cv_seed, max_r2=design.cv_max_r2)
            theta = sel.lasso_theta(design.k)
            resid = data.y - data.design(range(data.n_slots)) @ theta
            fit = plugin_fit(data, sel.model, theta, resid)
            for name, f in funs.items():
                out["point"][("LCV", name)] = _record(functional_interval(fit, f, design.alpha))
    return out


def _safe_replication(args):
    design, truth, rep = args
    try:
        return run_replication(design, truth, rep)
    except Exception as exc:  # noqa: BLE001 - failures are counted and reported
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}


def _worker_init():
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except ImportError:
        pass


def run_replications(design, truth, threads=1, reps=None, progress=None):
    reps = range(design.reps) if reps is None else reps
    args = [(design, truth, r) for r in reps]
    if threads <= 1:
        out = []
        for a in args:
            out.append(_safe_replication(a))
            if progress:
                progress(len(out))
        return out
    with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init) as pool:
        return list(pool.map(_safe_replication, args, chunksize=max(1, len(args) // (8 * threads))))


@dataclass
class SimReport:
    design: SimDesign
    truth: SimTruth
    metrics: list
    path: list
    failures: list
    nesting_violations: int
    runtime: float
    records: list = field(default_factory=list, repr=False)

    def metric(self, estimator, functional, name):
        for row in self.metrics:
            if row["estimator"] == estimator and row["functional"] == functional:
                return row[name]
        raise KeyError((estimator, functional))

    def to_dict(self):
        return {
            "design": self.design.to_dict(),
            "truth": {
                "c25": self.truth.c25,
                "calibration": None if self.truth.calibration is None else asdict(self.truth.calibration),
                "targets": self.truth.targets,
                "target_se": self.truth.target_se,
            },
            "metrics": self.metrics,
            "path": self.path,
            "failures": self.failures,
            "nesting_violations": self.nesting_violations,
            "runtime_seconds": self.runtime,
        }


def summarize(values, lowers, uppers, target):
    """Bias, SD, RMSE, coverage (with binomial SE) and mean length."""
    est = np.asarray(values, dtype=np.float64)
    lo = np.asarray(lowers, dtype=np.float64)
    up = np.asarray(uppers, dtype=np.float64)
    cover = (lo <= target) & (target <= up)
    cov = float(cover.mean())
    row = {
        "coverage": cov,
        "coverage_se": float(np.sqrt(cov * (1 - cov) / cover.size)),
        "length": float(np.mean(up - lo)),
        "n": int(cover.size),
    }
    if est.size:
        err = est - target
        row["bias"] = float(err.mean())
        row["sd"] = float(err.std())
        row["rmse"] = float(np.sqrt(np.mean(err**2)))
    return row


def aggregate(design, truth, records, runtime=0.0):
    ok = [r for r in records if "error" not in r]
    failures = [{"rep": r["rep"], "error": r["error"]} for r in records if "error" in r]
    metrics = []
    for e in design.estimators:
        for fun in FUNCTIONALS:
            target = truth.targets[fun]
            if e == "TU":
                rows = [r["tu"][fun] for r in ok if fun in r["tu"]]
                for s in sorted({1, design.sbar_max}):
                    if not rows or s > design.sbar_max:
                        continue
                    lo = [b[s][0] for b in rows]
                    up = [b[s][1] for b in rows]
                    m = summarize([], lo, up, target)
                    metrics.append({"estimator": f"TU({s})", "functional": fun, **m})
                continue
            rows = [r["point"][(e, fun)] for r in ok if (e, fun) in r["point"]]
            if not rows:
                continue
            arr = np.asarray(rows)
            m = summarize(arr[:, 0], arr[:, 1], arr[:, 2], target)
            metrics.append({"estimator": e, "functional": fun, **m})
    path = []
    violations = 0
    if "TU" in design.estimators:
        for fun in FUNCTIONALS:
            rows = [r["tu"][fun] for r in ok if fun in r["tu"]]
            if not rows:
                continue
            b = np.asarray(rows)  # (reps, sbar+1, 2)
            violations += int(np.sum(b[:, 1:, 0] > b[:, :-1, 0]) + np.sum(b[:, 1:, 1] < b[:, :-1, 1]))
            target = truth.targets[fun]
            for s in range(b.shape[1]):
                m = summarize([], b[:, s, 0], b[:, s, 1], target)
                path.append({"functional": fun, "sbar": s, "mean_length": m["length"],
                             "coverage": m["coverage"], "coverage_se": m["coverage_se"]})
    if failures:
        log.warning("%d of %d replications failed", len(failures), len(records))
    return SimReport(design, truth, metrics, path, failures, violations, runtime, records)


def run_battery(design, threads=1, truth=None, progress=None):
    """Simulate ``design.reps`` replications and aggregate the metrics."""
    t0 = time.perf_counter()
    truth = truth or make_truth(design)
    records = run_replications(design, truth, threads, progress=progress)
    return aggregate(design, truth, records, time.perf_counter() - t0)
