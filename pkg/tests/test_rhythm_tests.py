from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carhy.errors import InsufficientReplication, NonpositiveTau, ZeroAmplitude
from carhy.harmonic import build_design, fit_condition, fit_many
from carhy.rhythm_tests import (
    coefficient_test_batch,
    delta_gradient,
    mixture_pvalue,
    make_rng,
    rhythm_taus,
    rhythmicity_batch,
    test_differential_amplitude as tda,
    test_differential_mesor as tdm,
    test_differential_phase as tdp,
    test_differential_rhythmicity as tdr,
    test_rhythmicity as tr,
    transform,
    transform_test_batch,
    wrap_angle,
)

TIMES = (0, 4, 8, 12, 16, 20)
DESIGN = build_design(TIMES, (3,) * 6)


def profile(A, phi, mesor=1.0, design=DESIGN):
    t = design.sample_times
    return mesor + A * np.cos(2 * np.pi * (t - phi) / 24)


def noisy_fits(rng, specs, design=DESIGN, sd=1.0):
    return [fit_condition(profile(A, phi, m, design) + rng.normal(scale=sd, size=design.n), design)
            for A, phi, m in specs]


class TestZeroStatistic:
    def test_identical_conditions_give_p_one(self):
        rng = np.random.default_rng(0)
        y = profile(1.0, 5.0) + rng.normal(size=18)
        fits = [fit_condition(y, DESIGN)] * 3
        for fn in (tdr, tdm, tda, tdp):
            res = fn(fits)
            assert res.statistic == 0.0 and res.p_value == 1.0

    def test_tr_zero_amplitude_gives_p_one(self):
        stat, p, *_ = rhythmicity_batch(np.array([[3.0, 0.0, 0.0]]), np.ones(1),
                                        DESIGN.xtx_inv, 18, [(0,)], 1000)
        assert stat[0] == 0 and p[0] == 1.0


class TestDeltaGradient:
    def test_values(self):
        np.testing.assert_allclose(delta_gradient("DA", 1.0, 0.0), (0, 2 / 3, 0), atol=1e-15)
        np.testing.assert_allclose(delta_gradient("DP", 1.0, 0.0), (0, 0, 1), atol=1e-15)
        np.testing.assert_allclose(delta_gradient("DP", 0.0, 2.0), (0, -0.5, 0), atol=1e-15)

    def test_transform_value(self):
        r2 = math.sqrt(2)
        assert transform("DA", r2, r2) == pytest.approx(4 ** (1 / 3), rel=1e-14)
        assert transform("DP", r2, r2) == pytest.approx(math.pi / 4, rel=1e-14)

    def test_zero_amplitude(self):
        with pytest.raises(ZeroAmplitude):
            delta_gradient("DA", 0.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(r=st.floats(0.05, 20), phi=st.floats(-3.1, 3.1), kind=st.sampled_from(["DA", "DP"]))
    def test_finite_differences(self, r, phi, kind):
        a, b = r * math.cos(phi), r * math.sin(phi)
        h = 1e-6 * max(r, 1.0)
        g = delta_gradient(kind, a, b)
        fa = (transform(kind, a + h, b) - transform(kind, a - h, b)) / (2 * h)
        fb = (transform(kind, a, b + h) - transform(kind, a, b - h)) / (2 * h)
        assert g[0] == 0
        assert g[1] == pytest.approx(fa, rel=1e-5, abs=1e-7)
        assert g[2] == pytest.approx(fb, rel=1e-5, abs=1e-7)


class TestRhythmicity:
    def test_reproducible(self):
        rng = np.random.default_rng(1)
        fit = fit_condition(profile(0.5, 3.0) + rng.normal(size=18), DESIGN)
        a, b = tr(fit, N=5000, seed=42), tr(fit, N=5000, seed=42)
        assert a.p_value == b.p_value
        assert tr(fit, N=5000, seed=43).p_value != a.p_value or a.p_value == 1 / 5001

    def test_strong_signal_minimal_p(self):
        rng = np.random.default_rng(2)
        fit = fit_condition(profile(5.0, 3.0) + rng.normal(scale=0.1, size=18), DESIGN)
        assert tr(fit, N=2000).p_value == pytest.approx(1 / 2001)

    def test_taus_match_eigenvalues(self):
        d = build_design((1, 5, 9, 13, 17, 21), (1, 2, 3, 1, 2, 3))
        t1, t2 = rhythm_taus(1.7, d.xtx_inv)
        ev = np.linalg.eigvalsh(1.7 * d.xtx_inv[1:, 1:])
        np.testing.assert_allclose([t2, t1], ev, rtol=1e-12)

    def test_nonpositive_tau(self):
        bad = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(NonpositiveTau):
            rhythm_taus(1.0, bad)
        t1, t2 = rhythm_taus(np.array([1.0]), bad[None], strict=False)
        assert np.isnan(t1[0])

    def test_insufficient_replication(self):
        d = build_design((0, 8, 16), (1, 1, 1))
        with pytest.raises(InsufficientReplication):
            rhythmicity_batch(np.ones((1, 3)), np.ones(1), d.xtx_inv, 3, [(0,)])

    def test_mixture_against_direct_chi2(self):
        # equal weights: r*tau*(U1+U2)/U* is tau*2*F(2, r)
        from scipy import stats
        rng = make_rng((7,))
        p = mixture_pvalue(3.0, 0.5, 0.5, 15, 200_000, rng)
        assert p == pytest.approx(stats.f(2, 15).sf(3.0), abs=0.004)

    def test_null_uniformity(self):
        rng = np.random.default_rng(3)
        Y = 2.0 + rng.normal(size=(400, 18))
        g, s2 = fit_many(Y, DESIGN)
        _, p, *_ = rhythmicity_batch(g, s2, DESIGN.xtx_inv, 18, [(5, i) for i in range(400)], 2000)
        assert 0.02 <= np.mean(p <= 0.05) <= 0.09


class TestDifferential:
    def test_insufficient_replication(self):
        d = build_design((0, 8, 16), (2, 2, 2))
        fits = [fit_condition(np.arange(6.0) ** 1.5, d)] * 2
        with pytest.raises(InsufficientReplication):
            tdr(fits)

    def test_zero_amplitude_flag(self):
        gamma = np.array([[[1.0, 0.5, 0.5], [1.0, 0.0, 0.0]]])
        M = np.stack([DESIGN.xtx_inv] * 2)
        for kind in ("DA", "DP"):
            out = transform_test_batch(kind, gamma, np.ones((1, 2)), M, [18, 18])
            assert out.flags["zero_amplitude"][0] and np.isnan(out.p_value[0])

    def test_gating(self):
        rng = np.random.default_rng(5)
        fits = noisy_fits(rng, [(2, 5, 1), (2, 8, 1), (0.1, 5, 1)])
        gated = tdp(fits, tr_pvalues=[0.001, 0.002, 0.4])
        assert "gated_out" in gated.flags and math.isnan(gated.p_value)
        assert not math.isnan(gated.statistic)
        kept = tdp(fits, tr_pvalues=[0.001, 0.002, 0.003])
        assert "gated_out" not in kept.flags and 0 <= kept.p_value <= 1
        assert math.isnan(tda(fits, tr_pvalues=[0.01, np.nan, 0.01]).p_value)

    def test_detects_phase_shift(self):
        rng = np.random.default_rng(6)
        fits = noisy_fits(rng, [(3, 2, 1), (3, 10, 1)], sd=0.5)
        assert tdp(fits).p_value < 1e-4
        assert tdr(fits).p_value < 1e-4

    def test_phase_wrap(self):
        # peaks at 23.5h and 0.5h are one hour apart, just like 11.5h and 12.5h
        def coefs(peaks):
            w = 2 * np.pi * np.array(peaks) / 24
            return np.stack([np.ones(2), 2 * np.cos(w), 2 * np.sin(w)], axis=-1)[None]

        M = np.stack([DESIGN.xtx_inv] * 2)
        s2 = np.full((1, 2), 0.3)
        across = transform_test_batch("DP", coefs([23.5, 0.5]), s2, M, [18, 18])
        inside = transform_test_batch("DP", coefs([11.5, 12.5]), s2, M, [18, 18])
        np.testing.assert_allclose(across.statistic, inside.statistic, rtol=1e-9)
        assert wrap_angle(2 * math.pi - 0.1) == pytest.approx(-0.1)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    @pytest.mark.parametrize("kind", ["DA", "DP"])
    def test_rotation_invariance(self, kind):
        # a common clock shift rotates every (alpha, beta) by the same angle;
        # on an equispaced balanced design the covariance is isotropic
        rng = np.random.default_rng(8)
        gamma = rng.normal(size=(1, 3, 3)) + np.array([1.0, 2.0, 1.0])
        s2 = rng.uniform(0.2, 1.0, (1, 3))
        M = np.stack([DESIGN.xtx_inv] * 3)
        ang = 2 * math.pi * 7.3 / 24
        R = np.array([[1, 0, 0], [0, math.cos(ang), -math.sin(ang)], [0, math.sin(ang), math.cos(ang)]])
        a = transform_test_batch(kind, gamma, s2, M, [18] * 3)
        b = transform_test_batch(kind, gamma @ R.T, s2, M, [18] * 3)
        np.testing.assert_allclose(b.statistic, a.statistic, rtol=1e-9)
        np.testing.assert_allclose(b.p_value, a.p_value, rtol=1e-9)

    def test_batch_equals_per_gene(self):
        rng = np.random.default_rng(9)
        G = 6
        gam = rng.normal(size=(G, 3, 3)) + np.array([1.0, 1.5, 0.5])
        Y = gam @ DESIGN.X.T + rng.normal(scale=0.5, size=(G, 3, 18))
        fits = [[fit_condition(Y[g, k], DESIGN) for k in range(3)] for g in range(G)]
        gamma = np.array([[f.gamma_hat for f in row] for row in fits])
        s2 = np.array([[f.sigma2_hat for f in row] for row in fits])
        M = np.stack([DESIGN.xtx_inv] * 3)
        for kind, fn in (("DR", tdr), ("DM", tdm)):
            batch = coefficient_test_batch(kind, gamma, s2, M, [18] * 3)
            for g in range(G):
                res = fn(fits[g])
                assert res.statistic == batch.statistic[g] and res.p_value == batch.p_value[g]
        for kind, fn in (("DA", tda), ("DP", tdp)):
            batch = transform_test_batch(kind, gamma, s2, M, [18] * 3)
            for g in range(G):
                res = fn(fits[g])
                assert res.statistic == batch.statistic[g] and res.p_value == batch.p_value[g]

    def test_mesor_shift_invariance(self):
        rng = np.random.default_rng(10)
        Y = [profile(1, 5) + rng.normal(size=18), profile(1.5, 7) + rng.normal(size=18)]
        base = [fit_condition(y, DESIGN) for y in Y]
        moved = [fit_condition(y + c, DESIGN) for y, c in zip(Y, (5.0, -2.0))]
        for fn in (tdr, tda, tdp):
            assert fn(moved).statistic == pytest.approx(fn(base).statistic, rel=1e-9)
            assert fn(moved).p_value == pytest.approx(fn(base).p_value, rel=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        Y = [profile(1, 5) + rng.normal(size=18), profile(1.3, 8) + rng.normal(size=18)]
        base = [fit_condition(y, DESIGN) for y in Y]
        scaled = [fit_condition(7.5 * y, DESIGN) for y in Y]
        for fn in (tdr, tdm, tdp):
            a, b = fn(base), fn(scaled)
            assert b.statistic == pytest.approx(a.statistic, rel=1e-9)
            assert b.p_value == pytest.approx(a.p_value, rel=1e-9)
