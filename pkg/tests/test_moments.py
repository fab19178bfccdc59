from __future__ import annotations

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from carhy.errors import InvalidOrder, NonpositiveVariance
from carhy.moments import chi2_central_moments, chi2_raw_moment, sigma_hat_moments


def gamma_raw_moment(r, s):
    return float(np.exp(s * np.log(2.0) + gammaln(r / 2 + s) - gammaln(r / 2)))


class TestRawMoments:
    def test_values(self):
        assert chi2_raw_moment(4, 1) == 4
        assert chi2_raw_moment(4, 2) == 24
        assert chi2_raw_moment(15, 3) == 15 * 17 * 19

    def test_against_gamma_ratio(self):
        for r in range(1, 61):
            for s in range(1, 5):
                assert chi2_raw_moment(r, s) == pytest.approx(gamma_raw_moment(r, s), rel=1e-10)

    @pytest.mark.parametrize("s", [0, 5, -1])
    def test_invalid_order(self, s):
        with pytest.raises(InvalidOrder):
            chi2_raw_moment(5, s)

    def test_vectorised(self):
        np.testing.assert_array_equal(chi2_raw_moment(np.array([1, 2, 3]), 2), [3, 8, 15])


class TestCentralMoments:
    def test_closed_forms(self):
        cm3, cm4 = chi2_central_moments(10)
        assert cm3 == 80
        assert cm4 == 1680
        for r in (1, 3, 7, 100, 1000):
            cm3, cm4 = chi2_central_moments(r)
            assert cm3 == pytest.approx(8 * r, rel=1e-12)
            assert cm4 == pytest.approx(12 * r * r + 48 * r, rel=1e-12)

    def test_against_simulation(self):
        rng = np.random.default_rng(5)
        x = rng.chisquare(5, 10_000_000)
        dev = x - 5.0
        cm3, cm4 = chi2_central_moments(5)
        assert np.mean(dev**3) == pytest.approx(cm3, rel=0.01)
        assert np.mean(dev**4) == pytest.approx(cm4, rel=0.01)

    def test_against_scipy_moments(self):
        for r in (2, 9, 31):
            m, v, skew, kurt = stats.chi2(r).stats(moments="mvsk")
            cm3, cm4 = chi2_central_moments(r)
            assert cm3 == pytest.approx(skew * v**1.5, rel=1e-12)
            assert cm4 == pytest.approx((kurt + 3) * v**2, rel=1e-12)


class TestSigmaMoments:
    def test_values(self):
        m = sigma_hat_moments(1.0, 15)
        assert m.var2 == pytest.approx(2 / 15)
        assert m.cm3 == pytest.approx(8 / 225)
        assert sigma_hat_moments(2.0, 15).var2 == pytest.approx(8 / 15)

    def test_scaling(self):
        base = sigma_hat_moments(1.0, 12)
        for c in (0.3, 2.0, 17.0):
            m = sigma_hat_moments(c, 12)
            assert m.var2 == pytest.approx(c**2 * base.var2, rel=1e-13)
            assert m.cm3 == pytest.approx(c**3 * base.cm3, rel=1e-13)
            assert m.cm4 == pytest.approx(c**4 * base.cm4, rel=1e-13)

    def test_jensen(self):
        for r in range(1, 50):
            m = sigma_hat_moments(1.7, r)
            assert m.var2 > 0 and m.cm4 >= m.var2**2

    def test_decay_rates(self):
        rs = np.array([10.0, 100.0, 1000.0])
        m = sigma_hat_moments(np.ones(3), rs)
        # each tenfold increase in r shrinks the quantity by 10^order
        for q, order in ((m.var2, 1), (m.cm3, 2), (m.cm4 - 3 * m.var2**2, 3)):
            ratios = q[:-1] / q[1:]
            np.testing.assert_allclose(ratios, 10.0**order, rtol=0.05)

    @pytest.mark.parametrize("s2", [0.0, -1.0, np.inf])
    def test_nonpositive(self, s2):
        with pytest.raises(NonpositiveVariance):
            sigma_hat_moments(s2, 10)

    def test_zero_allowed_in_batch_mode(self):
        m = sigma_hat_moments(np.array([0.0, 1.0]), 10, allow_zero=True)
        assert m.var2[0] == 0 and m.var2[1] > 0
