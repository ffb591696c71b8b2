import math

import numpy as np
import pytest

from ergostab.ergodic import (AutocorrSeries, autocorrelation, bifurcation_scan,
                              detect_period, gmap_gd_lyapunov, gmap_raw_lyapunov,
                              lyapunov_1d, mixing_rate_fit, time_average)
from ergostab.errors import ParameterError, WindowError
from ergostab.landscapes import QuadraticMapLoss, gmap_curvature
from ergostab.rng import RngStream


class TestTimeAverage:
    def test_constant(self):
        assert time_average([3.0] * 10).value == 3.0

    def test_period_two_mean(self):
        series = [1.0, 3.0] * 50
        assert time_average(series).value == 2.0

    def test_cesaro_convergence(self):
        # series -> 2 geometrically; cumulative mean follows within 1e-3
        t = np.arange(10**4)
        series = 2.0 + 0.5 ** t
        avg = time_average(series, keep_running=True)
        assert abs(avg.running[-1] - 2.0) < 1e-3

    def test_translation_equivariance(self):
        gen = RngStream(1, 0).generator()
        series = gen.random(100)
        base = time_average(series, runup=10).value
        shifted = time_average(series + 5.0, runup=10).value
        assert shifted == pytest.approx(base + 5.0, abs=1e-12)

    def test_empty_window(self):
        with pytest.raises(WindowError):
            time_average([1.0, 2.0], runup=2)

    def test_runup_recorded(self):
        avg = time_average(np.arange(10.0), runup=4)
        assert (avg.runup, avg.window) == (4, 6)


class TestLyapunov:
    def test_linear_contraction(self):
        est = lyapunov_1d(lambda w: 0.5, 1.0, lambda w: 0.5 * w, steps=100)
        assert est.value == pytest.approx(math.log(0.5), abs=1e-12)

    def test_full_chaos_quadratic_map(self):
        # the s=4 map is smoothly conjugate to the doubling regime: ln 2
        est = gmap_raw_lyapunov(4.0, 0.2331, steps=10**6, runup=100)
        assert est.diverged_step == -1
        assert est.value == pytest.approx(math.log(2.0), abs=0.01)

    def test_gd_on_quadratic_bowl(self):
        eta = 0.5
        est = lyapunov_1d(lambda w: 1.0 - eta, 1.0,
                          lambda w: w - eta * w, steps=1000)
        assert est.value == pytest.approx(math.log(0.5), abs=1e-6)

    def test_converged_orbit_matches_fixed_point_derivative(self):
        # GD on the triple-composition loss converges to w*=0.5 for small eta
        s, eta = 1.0, 2.0
        est = gmap_gd_lyapunov(s, eta, 0.3, steps=5000, runup=2000)
        expected = math.log(abs(1.0 - eta * gmap_curvature(s, 0.5)))
        assert est.value == pytest.approx(expected, abs=1e-3)

    def test_derivative_floor(self):
        est = lyapunov_1d(lambda w: 0.0, 1.0, lambda w: w, steps=5)
        assert est.value == float("-inf")
        assert est.floor_hits == 5

    def test_steps_validated(self):
        with pytest.raises(ParameterError):
            lyapunov_1d(lambda w: 1.0, 0.0, lambda w: w, steps=0)


class TestDetectPeriod:
    def test_constant(self):
        assert detect_period([2.0] * 40, tol=1e-9) == 1

    def test_alternation(self):
        assert detect_period([1.0, 3.0] * 20, tol=1e-9) == 2

    def test_iid_uniform_aperiodic(self):
        gen = RngStream(2, 0).generator()
        assert detect_period(gen.random(64), tol=1e-6) is None

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            detect_period([], tol=1e-6)


class TestBifurcationScan:
    def scan(self, etas, **kw):
        args = dict(n_inits=20, runup=2000, keep=64, master_seed=3, tol=1e-8)
        args.update(kw)
        return bifurcation_scan(QuadraticMapLoss(1.0), etas, **args)

    def test_below_threshold_fixed_point(self):
        scan = self.scan([3.0])
        assert set(scan.periods[0]) == {1}
        for tail in scan.samples[0]:
            assert np.all(np.abs(tail - 0.5) < 1e-6)

    def test_above_threshold_not_fixed(self):
        # the fixed point destabilizes above eta = 2/0.625 = 3.2; the
        # confined dynamics lands on a non-fixed-point attractor
        scan = self.scan([3.3])
        assert 1 not in set(scan.periods[0])

    def test_tiny_step_size(self):
        scan = self.scan([0.05], runup=5000)
        assert set(scan.periods[0]) == {1}

    def test_unbounded_mode_flags_divergence(self):
        scan = self.scan([3.3], boundary="none")
        assert scan.diverged[0].all()

    def test_grid_validated(self):
        with pytest.raises(ParameterError):
            self.scan([2.0, 1.0])
        with pytest.raises(ParameterError):
            self.scan([])

    def test_worker_invariance(self):
        etas = [0.5, 1.5, 2.5, 3.0]
        a = self.scan(etas, workers=1)
        b = self.scan(etas, workers=4)
        assert a.periods == b.periods
        for i in range(len(etas)):
            for j in range(a.n_inits):
                assert np.array_equal(a.samples[i][j], b.samples[i][j])


class TestAutocorrelation:
    def test_constant_series(self):
        ac = autocorrelation([2.5] * 64, runup=0, tau_max=5)
        assert np.allclose(ac.values, 0.0)

    def test_period_two_closed_form(self):
        # mean 2, mean[x^2] = 5, lag-1 product mean = 3: C(0) = C(1) = 1/4
        ac = autocorrelation([1.0, 3.0] * 32, runup=0, tau_max=1)
        assert ac.values[0] == pytest.approx(0.25, abs=1e-12)
        assert ac.values[1] == pytest.approx(0.25, abs=1e-12)

    def test_iid_noise_decorrelates(self):
        T = 20000
        gen = RngStream(4, 0).generator()
        series = gen.random(T) + 0.5
        ac = autocorrelation(series, runup=0, tau_max=10)
        assert np.all(ac.values[1:] < 5.0 / math.sqrt(T))

    def test_positive_rescaling_invariance(self):
        # numerator and denominator both carry the square of the scale
        gen = RngStream(5, 0).generator()
        series = gen.random(256) + 1.0
        a = autocorrelation(series, runup=0, tau_max=8)
        b = autocorrelation(7.0 * series, runup=0, tau_max=8)
        assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-14)

    def test_zero_mean_guard(self):
        series = np.array([1.0, -1.0] * 32)
        ac = autocorrelation(series, runup=0, tau_max=2)
        assert ac.guard_triggered
        assert ac.values[0] == pytest.approx(1.0)  # unnormalized numerator

    def test_window_too_short(self):
        with pytest.raises(WindowError):
            autocorrelation([1.0, 2.0, 3.0], runup=0, tau_max=3)


class TestMixingRateFit:
    def test_exact_geometric(self):
        taus = np.arange(12)
        fit = mixing_rate_fit(0.8 ** taus)
        assert fit.rate == pytest.approx(0.8, abs=1e-10)

    def test_offset_absorbed(self):
        taus = np.arange(12)
        fit = mixing_rate_fit(0.5 * 0.9 ** taus)
        assert fit.rate == pytest.approx(0.9, abs=1e-10)

    def test_noisy_geometric(self):
        gen = RngStream(6, 0).generator()
        taus = np.arange(30)
        noisy = 0.7 ** taus * (1.0 + 0.05 * (2 * gen.random(30) - 1))
        fit = mixing_rate_fit(noisy)
        assert fit.rate == pytest.approx(0.7, abs=0.02)

    def test_autocorr_input_and_window(self):
        taus = np.arange(20)
        ac = AutocorrSeries(taus, 0.6 ** taus, 1.0, False)
        fit = mixing_rate_fit(ac, lag_window=(2, 15))
        assert fit.rate == pytest.approx(0.6, abs=1e-10)
        assert fit.lags_used[0] == 2

    def test_insufficient_data(self):
        with pytest.raises(WindowError):
            mixing_rate_fit([1.0, 0.5, 0.0, 0.0])
