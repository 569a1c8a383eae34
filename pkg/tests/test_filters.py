import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from trendlab.filters import (
    FilterSpec,
    VolEstimatorSpec,
    calibrate_gamma,
    ema,
    ema_raw,
    ema_theorem_residual,
    filter_product_identity,
    lag,
    realized_vol,
    risk_normalize,
    warmup_mask,
)


def brute_ema(x, tau):
    """Direct geometric sum, the definition rather than the recursion."""
    a = 1.0 - 2.0 / (tau + 1.0)
    n = len(x)
    out = np.empty(n)
    for t in range(n):
        w = a ** np.arange(t, -1, -1)
        out[t] = (1 - a) * np.dot(w, x[: t + 1])
    return out


class TestFilterSpec:
    def test_alpha_round_trip(self):
        spec = FilterSpec(180.0)
        assert FilterSpec.from_alpha(spec.alpha).tau == pytest.approx(180.0)

    def test_tau_prime_is_squared_decay(self):
        spec = FilterSpec(37.0)
        assert spec.companion.alpha == pytest.approx(spec.alpha**2)
        assert spec.tau_prime == pytest.approx(37 / 2 + 1 / 74)

    @pytest.mark.parametrize("tau", [1.0, 0.5, -3.0, math.inf, math.nan])
    def test_rejects_bad_tau(self, tau):
        with pytest.raises(ValueError):
            FilterSpec(tau)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            FilterSpec.from_alpha(1.0)


class TestEma:
    def test_hand_recursion(self):
        # tau = 3 gives a = 1/2
        assert_allclose(ema([1.0, 0.0, 0.0], 3.0), [0.5, 0.25, 0.125])

    def test_constant_input_converges(self):
        y = ema(np.ones(2000), 10.0)
        assert y[-1] == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(300)
        for tau in (2.0, 7.5, 60.0):
            assert_allclose(ema(x, tau), brute_ema(x, tau), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, 500))
        assert_allclose(ema(2 * x - 3 * y, 20.0), 2 * ema(x, 20.0) - 3 * ema(y, 20.0), atol=1e-12)

    def test_init_state(self):
        assert_allclose(ema([0.0, 0.0], 3.0, init=4.0), [2.0, 1.0])

    def test_axis(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((100, 3))
        assert_allclose(ema(m, 9.0)[:, 1], ema(m[:, 1], 9.0))

    def test_raw_filter_scaling(self):
        x = np.random.default_rng(3).standard_normal(50)
        spec = FilterSpec(11.0)
        assert_allclose((1 - spec.alpha) * ema_raw(x, spec.alpha), ema(x, spec))

    def test_tau_one_is_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        assert_allclose(ema(x, 1.0), x)

    def test_lag(self):
        assert_allclose(lag([1.0, 2.0, 3.0]), [0.0, 1.0, 2.0])


class TestTheorem:
    @settings(max_examples=200, deadline=None)
    @given(
        x=arrays(np.float64, st.integers(1, 400), elements=st.floats(-1e3, 1e3)),
        tau=st.floats(1.01, 1e4),
    )
    def test_residual_vanishes(self, x, tau):
        scale = max(1.0, float(np.max(np.abs(x))) ** 2)
        assert np.max(np.abs(ema_theorem_residual(x, tau))) <= 1e-10 * scale

    def test_product_identity(self):
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal((2, 5000))
        assert np.max(np.abs(filter_product_identity(x, y, 0.9, 0.7))) < 1e-10


class TestVolatility:
    def test_constant_vol_fixed_point(self):
        # |D| = c everywhere: sigma converges to gamma * c
        d = np.where(np.arange(2000) % 2, 1.0, -1.0) * 0.3
        spec = VolEstimatorSpec(gamma=1.0)
        assert realized_vol(d, spec)[-1] == pytest.approx(0.3)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        d = rng.standard_normal(3000)
        r1, _ = risk_normalize(d)
        r2, _ = risk_normalize(250.0 * d)
        assert_allclose(r1, r2, rtol=1e-12)

    def test_first_return_is_zero(self):
        r, sigma = risk_normalize(np.array([1.0, 2.0, -1.0]))
        assert r[0] == 0.0
        assert r[1] == pytest.approx(2.0 / sigma[0])

    def test_causal(self):
        rng = np.random.default_rng(6)
        d = rng.standard_normal(500)
        r_full, _ = risk_normalize(d)
        d2 = d.copy()
        d2[300:] *= 10
        r_cut, _ = risk_normalize(d2)
        assert_allclose(r_full[:300], r_cut[:300])

    def test_floor_on_stale_series(self):
        d = np.zeros(100)
        d[0] = 1.0
        sigma = realized_vol(d)
        assert np.all(sigma > 0)
        r, _ = risk_normalize(d)
        assert np.all(np.isfinite(r))

    def test_default_gamma_overshoots_unit_variance(self):
        d = np.random.default_rng(7).standard_normal(500_000)
        r, _ = risk_normalize(d)
        var = r[30:].var()
        # gamma = 1.05 leaves the variance about 10% above one on Gaussian data
        assert 1.05 < var < 1.15

    def test_calibrated_gamma_gives_unit_variance(self):
        rng = np.random.default_rng(8)
        g = calibrate_gamma(rng.standard_normal(500_000))
        assert 1.08 < g < 1.12
        d = rng.standard_normal(500_000)
        r, _ = risk_normalize(d, VolEstimatorSpec(gamma=g))
        assert r[30:].var() == pytest.approx(1.0, abs=0.01)

    def test_warmup(self):
        assert VolEstimatorSpec().warmup == 30
        assert warmup_mask(5, 2).tolist() == [False, False, True, True, True]
