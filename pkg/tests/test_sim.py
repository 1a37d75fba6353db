import numpy as np
import pytest
from scipy import stats
from scipy.linalg import cholesky, toeplitz

from undersmooth import sim
from undersmooth.sim import (
    SimDesign, aggregate, calibrate_c25, censor, draw_dataset, draw_latent, make_truth,
    replication_rng, run_battery, run_replication, summarize, true_targets, unit_coefficients,
)

SMALL = dict(n=120, p=22, s0=4, reps=4, oracle_draws=100_000, sbar_max=3)


@pytest.fixture(scope="module")
def small():
    design = SimDesign(**SMALL)
    return design, make_truth(design)


class TestDesign:
    @pytest.mark.parametrize("kw", [dict(p=203), dict(s0=6), dict(r2_target=1.0),
                                    dict(estimators=("True", "Ridge")), dict(p=4, s0=8)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimDesign(**kw)

    def test_k(self):
        assert SimDesign(p=602).k == 300


class TestCoefficients:
    @pytest.mark.parametrize("s0", [4, 8, 16])
    def test_pattern(self, s0):
        design = SimDesign(s0=s0)
        a, b, g, z = unit_coefficients(design)
        q, n = s0 // 4, design.n
        ups = np.array([(-1.0) ** j for j in range(design.k)])
        want_b = np.zeros(design.k)
        want_b[:q] = 2 / np.sqrt(s0)
        want_b[q:2 * q] = 2 / np.sqrt(n * s0)
        want_z = np.zeros(design.k)
        want_z[:q] = 4 / np.sqrt(n * s0)
        want_z[q:2 * q] = 4 / np.sqrt(s0)
        np.testing.assert_allclose(b, want_b * ups)
        np.testing.assert_allclose(z, want_z * ups)
        assert a == pytest.approx(1 / np.sqrt(s0)) and g == pytest.approx(1 / (2 * np.sqrt(s0)))
        assert np.count_nonzero(b) == np.count_nonzero(z) == s0 // 2


class TestDGP:
    def test_latent_correlations(self):
        w = draw_latent(np.random.default_rng(0), 100_000, 6)
        C = np.corrcoef(w, rowvar=False)
        se = (1 - 0.64**2) / np.sqrt(100_000)
        assert abs(C[1, 3] - 0.64) < 3 * se
        assert abs(C[0, 1] - 0.8) < 0.01
        np.testing.assert_allclose(w.std(axis=0), 1, atol=0.01)

    def test_latent_matches_toeplitz_law(self):
        # compare second moments with an independent Cholesky construction
        S = toeplitz(0.8 ** np.arange(5))
        L = cholesky(S, lower=True)
        ref = np.random.default_rng(1).standard_normal((100_000, 5)) @ L.T
        w = draw_latent(np.random.default_rng(2), 100_000, 5)
        np.testing.assert_allclose(np.cov(w, rowvar=False), np.cov(ref, rowvar=False), atol=0.02)

    def test_censoring(self):
        w = np.array([[-1.0, 0.5, 2.0]])
        np.testing.assert_array_equal(censor(w, np.array([0.0, 0.5, 1.0])), [[0.0, 0.0, 1.0]])

    def test_zero_fraction_matches_normal_cdf(self, small):
        design, truth = small
        big = SimDesign(**{**SMALL, "n": 100_000})
        data, eps, tau = draw_dataset(big, truth, replication_rng(1, 0))
        frac = np.mean(data.X == 0, axis=0)
        want = stats.norm.cdf(tau)
        assert np.all((want > 0.5) & (want < 0.9))
        np.testing.assert_allclose(frac, want, atol=4 * np.sqrt(0.25 / 100_000))
        assert 0.49 < data.d.mean() < 0.51
        np.testing.assert_allclose(
            data.y, truth.alpha0 + data.X @ truth.beta0 + data.d * (truth.gamma0 + data.X @ truth.zeta0) + eps)

    def test_streams_reproducible_and_distinct(self, small):
        design, truth = small
        a = draw_dataset(design, truth, replication_rng(5, 3))[0]
        b = draw_dataset(design, truth, replication_rng(5, 3))[0]
        c = draw_dataset(design, truth, replication_rng(5, 4))[0]
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)

    def test_fixed_tau_mode(self):
        design = SimDesign(**SMALL, fixed_tau=True)
        truth = make_truth(design)
        t1 = draw_dataset(design, truth, replication_rng(0, 0))[2]
        t2 = draw_dataset(design, truth, replication_rng(0, 1))[2]
        np.testing.assert_array_equal(t1, t2)


class TestCalibration:
    def test_zero_target(self):
        assert calibrate_c25(SimDesign(**{**SMALL, "r2_target": 0.0})).c25 == 0.0

    def test_scale_law(self, monkeypatch):
        design = SimDesign(**SMALL)
        base = calibrate_c25(design)
        orig = sim.unit_coefficients
        monkeypatch.setattr(sim, "unit_coefficients", lambda d: tuple(2 * np.asarray(v) for v in orig(d)))
        doubled = calibrate_c25(design)
        assert doubled.unit_signal_var == pytest.approx(4 * base.unit_signal_var)
        assert doubled.c25 == pytest.approx(base.c25 / 2)

    def test_needs_enough_draws(self):
        with pytest.raises(ValueError):
            calibrate_c25(SimDesign(**SMALL), oracle_draws=1000)

    def test_records_standard_error(self, small):
        cal = small[1].calibration
        assert 0 < cal.unit_signal_var_se < 0.05 * cal.unit_signal_var


class TestTargets:
    def test_closed_forms(self, small):
        design, truth = small
        t = truth.targets
        assert t["RegCoef"] == truth.zeta0[0]
        assert t["TE"] == pytest.approx(truth.gamma0 + 0.5 * truth.zeta0.sum())
        assert t["PI"] >= 0

    def test_never_target_gives_zero(self, small):
        design, truth = small
        d = SimDesign(**{**SMALL, "cost": 0.99, "nu": 0.01})
        assert true_targets(d, truth)[0]["PI"] == 0.0

    def test_profit_positive_when_effects_large(self, small):
        design, truth = small
        d = SimDesign(**{**SMALL, "cost": 0.01, "nu": 0.9})
        targets, ses = true_targets(d, truth)
        assert targets["PI"] > 0 and ses["PI"] > 0


class TestSummaries:
    def test_decomposition(self):
        r = np.random.default_rng(0)
        est = r.normal(1.0, 0.3, 500)
        m = summarize(est, est - 0.5, est + 0.5, 1.1)
        assert m["rmse"] ** 2 == pytest.approx(m["bias"] ** 2 + m["sd"] ** 2, abs=1e-6)
        cov = np.mean(np.abs(est - 1.1) <= 0.5)
        assert m["coverage"] == cov
        assert m["coverage_se"] == pytest.approx(np.sqrt(cov * (1 - cov) / 500))
        assert m["length"] == pytest.approx(1.0)


class TestBattery:
    def test_replication_deterministic(self, small):
        design, truth = small
        a = run_replication(design, truth, 2)
        b = run_replication(design, truth, 2)
        assert a == b

    def test_thread_count_irrelevant(self, small):
        design, truth = small
        one = run_battery(design, threads=1, truth=truth)
        two = run_battery(design, threads=2, truth=truth)
        assert one.metrics == two.metrics and one.path == two.path
        assert one.records == two.records

    def test_report_contents(self, small):
        design, truth = small
        rep = run_battery(design, truth=truth)
        names = {(m["estimator"], m["functional"]) for m in rep.metrics}
        for e in ("True", "All", "Lasso", "PL", "LCV", "TU(1)", "TU(3)"):
            for f in ("RegCoef", "TE", "PI"):
                assert (e, f) in names
        assert rep.nesting_violations == 0
        assert len(rep.path) == 3 * (design.sbar_max + 1)
        assert rep.failures == []

    def test_all_skipped_when_p_exceeds_n(self):
        design = SimDesign(n=40, p=62, s0=4, reps=1, oracle_draws=100_000, sbar_max=1,
                           estimators=("True", "All"))
        rec = run_replication(design, make_truth(design), 0)
        assert not any(e == "All" for e, _ in rec["point"])

    def test_failures_counted(self, small, monkeypatch):
        design, truth = small

        def boom(*a, **k):
            raise RuntimeError("singular")

        monkeypatch.setattr(sim, "run_replication", boom)
        records = sim.run_replications(design, truth)
        rep = aggregate(design, truth, records)
        assert len(rep.failures) == design.reps
        assert "singular" in rep.failures[0]["error"]
