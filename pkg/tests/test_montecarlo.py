import math

import numpy as np
import pytest

from wpcnrate import channel, montecarlo, schemes
from wpcnrate.channel import FadingParams
from wpcnrate.exceptions import InfeasibleError
from wpcnrate.montecarlo import SimConfig, simulate
from wpcnrate.schemes import ReliabilityTarget

from conftest import baseline

N = 1_000_000


class TestSimConfig:
    @pytest.mark.parametrize("kwargs", [dict(trials=0), dict(trials=2.5), dict(seed=-1),
                                        dict(seed=2**64), dict(scheme="XYZ"), dict(form="exact"),
                                        dict(jobs=0)])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_block_sizes(self):
        assert sum(montecarlo._block_sizes(N)) == N
        assert montecarlo._block_sizes(5) == [5]


class TestDeterminism:
    def test_same_seed_identical(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        cfg = SimConfig(trials=200_000, seed=11, scheme="KSC", form="fbl")
        a, b = simulate(sp, rt, cfg), simulate(sp, rt, cfg)
        assert a.error_rate == b.error_rate and a.kbar_hat == b.kbar_hat
        assert a.p_k0_hat == b.p_k0_hat and a.kbar_se == b.kbar_se

    def test_parallel_matches_serial(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        cfg = SimConfig(trials=300_000, seed=3, scheme="fCSI", form="fbl")
        plan = montecarlo.plan_scheme(sp, rt, "fCSI", "fbl")
        serial = simulate(sp, rt, cfg, plan)
        parallel = simulate(sp, rt, SimConfig(trials=300_000, seed=3, scheme="fCSI", form="fbl",
                                              jobs=2), plan)
        assert (serial.error_rate, serial.kbar_hat, serial.p_k0_hat) == \
            (parallel.error_rate, parallel.kbar_hat, parallel.p_k0_hat)

    def test_different_seeds_differ(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        a = simulate(sp, rt, SimConfig(trials=100_000, seed=1, scheme="KSC"))
        b = simulate(sp, rt, SimConfig(trials=100_000, seed=2, scheme="KSC"))
        assert a.kbar_hat != b.kbar_hat


class TestAgainstAnalysis:
    def test_ftr_asymptotic_hits_target(self):
        sp, rt = baseline(M=1), ReliabilityTarget(1e-2, 16)
        rep = simulate(sp, rt, SimConfig(trials=N, seed=5, scheme="FTR", inverse="numeric"))
        assert rep.error_within(1e-2)
        assert rep.p_k0_hat == 0.0 or rep.kbar_hat > rt.k0

    def test_ftr_fbl_error_matches_average(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        plan = montecarlo.plan_scheme(sp, rt, "FTR", "fbl")
        rep = simulate(sp, rt, SimConfig(trials=N, seed=6, scheme="FTR", form="fbl"), plan)
        assert rep.error_within(plan.outcome.error)
        assert rep.kbar_hat == plan.outcome.k_bits and rep.kbar_se == 0.0

    @pytest.mark.parametrize("form", ["asymptotic", "fbl"])
    def test_ksc(self, form):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        plan = montecarlo.plan_scheme(sp, rt, "KSC", form)
        rep = simulate(sp, rt, SimConfig(trials=N, seed=7, scheme="KSC", form=form), plan)
        out = plan.outcome
        target = rt.eps_th if form == "asymptotic" else out.error
        assert rep.error_within(target)
        assert abs(rep.kbar_hat - out.kbar) <= 3 * rep.kbar_se
        p = out.p_k0
        assert abs(rep.p_k0_hat - p) <= 3 * math.sqrt(p * (1 - p) / N)
        if form == "asymptotic":
            assert p == pytest.approx(channel.gamma_cdf(sp.fading.m1, out.threshold.threshold))

    @pytest.mark.parametrize("form", ["asymptotic", "fbl"])
    def test_fcsi(self, form):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        plan = montecarlo.plan_scheme(sp, rt, "fCSI", form)
        rep = simulate(sp, rt, SimConfig(trials=N, seed=8, scheme="fCSI", form=form), plan)
        out = plan.outcome
        assert rep.error_within(out.error)
        assert abs(rep.kbar_hat - out.kbar) <= 3 * rep.kbar_se
        p = out.p_k0
        assert abs(rep.p_k0_hat - p) <= 3 * math.sqrt(p * (1 - p) / N)
        assert p == pytest.approx(channel.product_cdf(sp.fading, out.threshold.threshold))

    def test_clt_scaling(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        plan = montecarlo.plan_scheme(sp, rt, "KSC", "asymptotic")
        small = simulate(sp, rt, SimConfig(trials=250_000, seed=9, scheme="KSC"), plan)
        large = simulate(sp, rt, SimConfig(trials=N, seed=10, scheme="KSC"), plan)
        assert small.kbar_se / large.kbar_se == pytest.approx(2.0, rel=0.2)
        assert small.error_se / large.error_se == pytest.approx(2.0, rel=0.2)

    def test_report_fields(self):
        sp, rt = baseline(M=2), ReliabilityTarget(1e-2, 16)
        rep = simulate(sp, rt, SimConfig(trials=50_000, seed=1, scheme="KSC"))
        assert rep.error_ci99 == pytest.approx(2.5758293035489 * rep.error_se)
        assert all(math.isfinite(x) for x in (rep.error_rate, rep.kbar_hat, rep.p_k0_hat,
                                              rep.wall_time))
        assert 0 <= rep.error_rate <= 1 and 0 <= rep.p_k0_hat <= 1


class TestGuards:
    def test_infeasible_raises_before_trials(self):
        sp, rt = baseline(M=1), ReliabilityTarget(1e-4, 16)
        for scheme in montecarlo.SCHEMES:
            for form in montecarlo.FORMS:
                with pytest.raises(InfeasibleError):
                    simulate(sp, rt, SimConfig(trials=10, scheme=scheme, form=form))

    def test_tiny_target_not_validated(self):
        sp, rt = baseline(M=4, psi=10.0), ReliabilityTarget(1e-6, 16)
        rep = simulate(sp, rt, SimConfig(trials=20_000, scheme="KSC"))
        assert not rep.error_validated
        ok = simulate(baseline(M=2), ReliabilityTarget(1e-3, 16), SimConfig(trials=20_000, scheme="KSC"))
        assert ok.error_validated

    def test_plan_rejects_unknown(self):
        with pytest.raises(ValueError):
            montecarlo.plan_scheme(baseline(), ReliabilityTarget(1e-2, 16), "ABC", "fbl")


class TestKS:
    def test_baseline_passes(self):
        res = montecarlo.ks_validate_product(FadingParams(5.0, 2.0, 4), trials=N, seed=1)
        assert res.passed
        assert res.critical_1pct == pytest.approx(1.63e-3)

    def test_detects_wrong_distribution(self):
        # samples drawn for M=4 tested against the M=2 CDF
        fp_true, fp_wrong = FadingParams(5.0, 2.0, 4), FadingParams(5.0, 2.0, 2)
        rng = np.random.default_rng(0)
        w = channel.sample_w(fp_true, rng, 100_000)
        cdf = montecarlo._tabulated_product_cdf(fp_wrong, 50.0)
        from scipy import stats
        assert stats.kstest(w, cdf).statistic > 1.63 / math.sqrt(100_000)

    def test_deterministic(self):
        fp = FadingParams(5.0, 2.0, 1)
        a = montecarlo.ks_validate_product(fp, 20_000, seed=4)
        b = montecarlo.ks_validate_product(fp, 20_000, seed=4)
        assert a.statistic == b.statistic

    def test_concentration(self):
        # sd(log w) ~ sqrt(2/200) = 0.1, so +-0.2 is about two standard deviations
        fp = FadingParams(200.0, 200.0, 1)
        lo, hi = channel.product_cdf(fp, 0.8), channel.product_cdf(fp, 1.2)
        assert lo < 0.05 and hi > 0.95
        assert lo == pytest.approx(channel.product_cdf_by_conditioning(fp, 0.8), rel=1e-6)
        assert hi == pytest.approx(channel.product_cdf_by_conditioning(fp, 1.2), rel=1e-6)

    def test_min_trials(self):
        with pytest.raises(ValueError):
            montecarlo.ks_validate_product(FadingParams(5.0, 2.0, 1), trials=100)


class TestGridOracle:
    @pytest.mark.parametrize("M", [1, 3, 8])
    @pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.3])
    def test_matches_newton_inverse(self, M, eps):
        fp = FadingParams(5.0, 2.0, M)
        assert montecarlo.grid_oracle_inverse(fp, eps) == pytest.approx(
            channel.product_cdf_inv_numeric(fp, eps), rel=1e-6)

    def test_monotone(self):
        fp = FadingParams(5.0, 2.0, 2)
        w = [montecarlo.grid_oracle_inverse(fp, e) for e in (1e-5, 1e-3, 0.1, 0.5, 0.9)]
        assert all(a < b for a, b in zip(w, w[1:]))

    @pytest.mark.parametrize("M,bound", [(1, 0.25), (8, 0.08)])
    def test_closed_form_envelope(self, M, bound):
        fp = FadingParams(4.0, 2.0, M)
        oracle = montecarlo.grid_oracle_inverse(fp, 0.1)
        approx = channel.product_cdf_inv_approx(fp, 0.1)
        assert abs(approx - oracle) / oracle <= bound
