import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpcnrate import channel, fbl
from wpcnrate.fbl import ApproximationRegimeWarning, RatePoint

from conftest import baseline


def q_oracle(x):
    mp.mp.dps = 40
    return float(mp.erfc(mp.mpf(x) / mp.sqrt(2)) / 2)


class TestCapacityDispersion:
    @pytest.mark.parametrize("gamma,c,v", [(0.0, 0.0, 0.0), (1.0, 1.0, 0.75), (3.0, 2.0, 15 / 16)])
    def test_values(self, gamma, c, v):
        assert fbl.capacity(gamma) == pytest.approx(c, abs=1e-15)
        assert fbl.dispersion(gamma) == pytest.approx(v, abs=1e-15)

    @given(st.floats(0, 1e7))
    def test_dispersion_range(self, gamma):
        # beyond ~1e8 the value 1 - 1/(1+gamma)^2 rounds to 1.0 in double precision
        assert 0.0 <= fbl.dispersion(gamma) < 1.0

    def test_arrays(self):
        g = np.array([0.0, 1.0, 3.0])
        np.testing.assert_allclose(fbl.capacity(g), [0, 1, 2], atol=1e-15)


class TestRatePoint:
    def test_validation(self):
        with pytest.raises(ValueError):
            RatePoint(-1, 200)
        with pytest.raises(ValueError):
            RatePoint(10, 0)

    def test_short_block_warns(self):
        with pytest.warns(ApproximationRegimeWarning):
            RatePoint(10, 50)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            RatePoint(10, 100)


class TestAwgnError:
    def test_at_capacity(self):
        gamma = 5.0
        k = 200 * fbl.capacity(gamma)
        assert fbl.awgn_error(gamma, k, 200) == pytest.approx(0.5, abs=1e-12)

    def test_deep_inside_capacity(self):
        assert fbl.awgn_error(1e6, 16, 200) < 1e-300

    def test_high_precision_value(self):
        # rate 2 bits/use against C(5) = log2(6)
        mp.mp.dps = 40
        arg = (mp.log(6) - 2 * mp.log(2)) * mp.sqrt(200 / (mp.mpf(35) / 36))
        oracle = float(mp.erfc(arg / mp.sqrt(2)) / 2)
        value = fbl.awgn_error(5.0, 400, 200)
        assert value == pytest.approx(oracle, rel=1e-12)
        assert value == pytest.approx(3.023e-9, rel=1e-3)

    def test_zero_snr(self):
        assert fbl.awgn_error(0.0, 10, 200) == 1.0
        assert fbl.awgn_error(0.0, 0, 200) == 0.5

    @given(st.floats(1e-3, 1e3), st.floats(1, 800))
    def test_matches_oracle(self, gamma, k):
        n = 200
        arg = (math.log1p(gamma) - k * math.log(2) / n) * math.sqrt(n / fbl.dispersion(gamma))
        assert fbl.awgn_error(gamma, k, n) == pytest.approx(q_oracle(arg), rel=1e-12, abs=1e-300)

    def test_monotone(self):
        ks = np.linspace(1, 1000, 200)
        gammas = np.geomspace(1e-2, 1e3, 200)
        e_k = fbl.awgn_error(4.0, ks, 200)
        e_g = fbl.awgn_error(gammas, 300.0, 200)
        assert np.all(np.diff(e_k) >= 0)
        assert np.all(np.diff(e_g) <= 0)

    def test_vector_matches_scalar(self):
        g = np.array([0.0, 0.3, 2.0, 40.0])
        k = np.array([5.0, 50.0, 300.0, 0.0])
        expected = [fbl.awgn_error(float(a), float(b), 200) for a, b in zip(g, k)]
        np.testing.assert_allclose(fbl.awgn_error(g, k, 200), expected, rtol=1e-14)


class TestFadingAverage:
    def test_deterministic_gain(self):
        sp = baseline()
        assert fbl.avg_error_fading(sp, 300, w=0.8) == fbl.awgn_error(sp.snr_scale * 0.8, 300, 200)

    def test_against_direct_integral(self):
        sp = baseline(M=2)
        k = 150
        mp.mp.dps = 20
        a, m1 = sp.fading.shape_g, sp.fading.m1

        def f(w):
            g = sp.snr_scale * w
            v = g * (2 + g) / (1 + g) ** 2
            arg = (mp.log1p(g) - k * mp.log(2) / sp.n) * mp.sqrt(sp.n / v)
            z = 2 * mp.sqrt(m1 * a * w)
            pdf = (2 * (m1 * a) ** ((a + m1) / 2) * w ** ((a + m1) / 2 - 1)
                   * mp.besselk(a - m1, z) / (mp.gamma(a) * mp.gamma(m1)))
            return mp.erfc(arg / mp.sqrt(2)) / 2 * pdf

        w_t = sp.outage_w(k)
        oracle = float(mp.quad(f, [0, w_t / 4, w_t / 2, w_t, 2 * w_t, 10 * w_t, mp.inf]))
        assert fbl.avg_error_fading(sp, k) == pytest.approx(oracle, rel=1e-7)

    def test_monte_carlo(self):
        sp = baseline()
        rng = np.random.default_rng(42)
        N = 10_000_000
        w = channel.sample_w(sp.fading, rng, N)
        e = fbl.awgn_error(sp.snr_scale * w, 100.0, sp.n)
        mean, se = e.mean(), e.std(ddof=1) / math.sqrt(N)
        assert abs(fbl.avg_error_fading(sp, 100) - mean) <= 3 * se

    def test_monotone_and_bounded(self):
        sp = baseline(M=2)
        vals = [fbl.avg_error_fading(sp, k) for k in range(20, 600, 40)]
        assert all(0 <= v <= 1 for v in vals)
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_long_block_limit(self):
        # fixed rate, growing n: the normal-approximation average tends to the outage
        sp0 = baseline(M=2)
        rate = 0.8
        gaps = []
        for n in (200, 2000, 20000):
            sp = baseline(M=2, v=5 * n, n=n)
            assert sp.snr_scale == sp0.snr_scale
            avg = fbl.avg_error_fading(sp, rate * n)
            out = fbl.asymptotic_outage(sp, rate * n)
            gaps.append(abs(avg - out) / out)
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 0.01

    def test_gap_shrinks_with_k(self):
        sp = baseline()
        gaps = []
        for k in (50, 150, 300, 500):
            avg = fbl.avg_error_fading(sp, k)
            out = fbl.asymptotic_outage(sp, k)
            gaps.append(abs(avg - out) / out)
        assert all(a > b for a, b in zip(gaps, gaps[1:]))


class TestAsymptoticOutage:
    def test_zero_bits(self):
        assert fbl.asymptotic_outage(baseline(), 0) == 0.0

    def test_monotone(self):
        sp = baseline(M=4)
        vals = [fbl.asymptotic_outage(sp, k) for k in range(10, 800, 30)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_inverse_consistency(self):
        sp = baseline()
        w = channel.product_cdf_inv_numeric(sp.fading, 1e-2)
        k = sp.n * math.log2(1 + sp.snr_scale * w)
        assert fbl.asymptotic_outage(sp, k) == pytest.approx(1e-2, rel=1e-9)


class TestConditionalError:
    @pytest.mark.parametrize("M,k,h", [(1, 16, 0.05), (2, 16, 0.13), (2, 120, 0.4),
                                       (4, 400, 1.0), (8, 900, 2.5), (2, 30, 1.5)])
    def test_routes_agree(self, M, k, h):
        sp = baseline(M=M)
        fast = fbl.conditional_error(sp, k, h)
        ref = fbl.conditional_error(sp, k, h, method="adaptive", epsrel=1e-12)
        assert fast == pytest.approx(ref, rel=1e-8, abs=1e-300)

    def test_against_mpmath(self):
        sp = baseline(M=2)
        k, h = 64, 0.2
        mp.mp.dps = 30
        a = sp.fading.shape_g

        def f(g):
            gam = sp.snr_scale * h * g
            v = gam * (2 + gam) / (1 + gam) ** 2
            arg = (mp.log1p(gam) - k * mp.log(2) / sp.n) * mp.sqrt(sp.n / v)
            return mp.erfc(arg / mp.sqrt(2)) / 2 * a ** a * g ** (a - 1) * mp.exp(-a * g) / mp.gamma(a)

        g_t = sp.outage_w(k) / h
        oracle = float(mp.quad(f, [0, g_t / 2, g_t, 2 * g_t, 5 * g_t, mp.inf]))
        assert fbl.conditional_error(sp, k, h) == pytest.approx(oracle, rel=1e-10)

    def test_vector_argument(self):
        sp = baseline(M=2)
        h = np.array([0.0, 0.1, 0.5, 2.0])
        out = fbl.conditional_error(sp, 50, h)
        assert out[0] == 1.0
        np.testing.assert_allclose(out[1:], [fbl.conditional_error(sp, 50, x) for x in h[1:]],
                                   rtol=1e-14)

    def test_monotone(self):
        sp = baseline(M=2)
        hs = np.geomspace(0.01, 5, 60)
        e = fbl.conditional_error(sp, 80, hs)
        assert np.all(np.diff(e) <= 0)
        ek = [fbl.conditional_error(sp, k, 0.5) for k in range(20, 400, 20)]
        assert all(a <= b for a, b in zip(ek, ek[1:]))

    def test_averages_to_fading_error(self):
        # integrating the conditional error over h recovers the fading average
        from scipy import integrate

        sp = baseline(M=2)
        m1 = sp.fading.m1
        k = 90
        val, _ = integrate.quad(lambda h: fbl.conditional_error(sp, k, h) * channel.gamma_pdf(m1, h),
                                0, np.inf, epsrel=1e-10, limit=200)
        assert val == pytest.approx(fbl.avg_error_fading(sp, k), rel=1e-7)

    def test_rejects_nonpositive_k(self):
        with pytest.raises(ValueError):
            fbl.conditional_error(baseline(), 0, 0.5)
        with pytest.raises(ValueError):
            fbl.conditional_error(baseline(), 10, 0.5, method="bogus")
