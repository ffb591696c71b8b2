import numpy as np
import pytest

from ergostab.errors import ParameterError, WindowError
from ergostab.markov import (KoopmanMode, LossPartition, koopman_spectrum_linear,
                             spectral_gap, tv_convergence_curve, ulam_transition)
from ergostab.rng import RngStream

TWO_STATE = np.array([[0.9, 0.1], [0.2, 0.8]])


def simulate_two_state(n, seed=11):
    """Oracle chain for the recovery tests; states mapped to loss values."""
    gen = RngStream(seed, 0).generator()
    u = gen.random(n)
    vals = np.empty(n)
    s = 0
    for t in range(n):
        vals[t] = 0.25 if s == 0 else 0.75
        flip = u[t] < (0.1 if s == 0 else 0.2)
        s = 1 - s if flip else s
    return vals


class TestPartition:
    def test_edges_and_binning(self):
        part = LossPartition(0.0, 1.0, 4)
        idx, clamped = part.bin_index(np.array([0.1, 0.3, 0.6, 0.99]))
        assert idx.tolist() == [0, 1, 2, 3]
        assert clamped == 0

    def test_clamping_flagged(self):
        part = LossPartition(0.0, 1.0, 2)
        idx, clamped = part.bin_index(np.array([-0.5, 2.0, 0.4]))
        assert idx.tolist() == [0, 1, 0]
        assert clamped == 2

    def test_from_series_margin(self):
        part = LossPartition.from_series(np.array([1.0, 3.0]), k=8)
        assert part.lo < 1.0 < 3.0 < part.hi

    def test_degenerate_bins(self):
        with pytest.raises(ParameterError):
            LossPartition(0.0, 1.0, 1)


class TestUlam:
    def test_constant_series_self_loop(self):
        tm = ulam_transition(np.full(100, 0.7), k=8)
        occupied = np.unique(tm.partition.bin_index(np.full(1, 0.7))[0])
        i = occupied[0]
        assert tm.probs[i, i] == 1.0
        assert len(tm.uniform_rows) == tm.k - 1  # all other rows unobserved

    def test_period_two_permutation(self):
        series = np.array([0.2, 0.8] * 50)
        tm = ulam_transition(series, partition=LossPartition(0.0, 1.0, 2))
        assert tm.probs[0, 1] == 1.0 and tm.probs[1, 0] == 1.0
        assert tm.probs[0, 0] == 0.0 and tm.probs[1, 1] == 0.0

    def test_two_state_chain_recovery(self):
        vals = simulate_two_state(10**5)
        tm = ulam_transition(vals, partition=LossPartition(0.0, 1.0, 2))
        assert np.max(np.abs(tm.probs - TWO_STATE)) < 0.02

    def test_rows_stochastic_with_smoothing(self):
        vals = simulate_two_state(500)
        for smoothing in (0.0, 0.5, 3.0):
            tm = ulam_transition(vals, k=16, smoothing=smoothing)
            assert np.max(np.abs(tm.probs.sum(axis=1) - 1.0)) < 1e-12
            assert np.all(tm.probs >= 0.0)

    def test_short_series_rejected(self):
        with pytest.raises(WindowError):
            ulam_transition([1.0], k=4)

    def test_surrogate_label(self):
        tm = ulam_transition(simulate_two_state(100), k=4)
        assert tm.label == "markov-surrogate"


class TestSpectralGap:
    def test_two_state_closed_form(self):
        # trace 1.7, det 0.7 -> eigenvalues {1, 0.7}
        rep = spectral_gap(TWO_STATE)
        assert rep.moduli[0] == pytest.approx(1.0, abs=1e-8)
        assert rep.lambda2 == pytest.approx(0.7, abs=1e-12)
        assert rep.gap == pytest.approx(0.3, abs=1e-12)
        assert np.allclose(rep.stationary, [2 / 3, 1 / 3], atol=1e-12)

    def test_identity_no_gap(self):
        rep = spectral_gap(np.eye(3))
        assert rep.lambda2 == 1.0 and rep.gap == 0.0

    def test_rank_one_full_gap(self):
        P = np.tile([0.3, 0.5, 0.2], (3, 1))
        rep = spectral_gap(P)
        assert rep.lambda2 == pytest.approx(0.0, abs=1e-12)
        assert rep.gap == pytest.approx(1.0, abs=1e-12)

    def test_non_stochastic_rejected(self):
        with pytest.raises(ParameterError):
            spectral_gap(np.array([[0.5, 0.6], [0.2, 0.8]]))
        with pytest.raises(ParameterError):
            spectral_gap(np.array([[1.2, -0.2], [0.0, 1.0]]))


class TestKoopman:
    def test_scaled_identity(self):
        modes = koopman_spectrum_linear(0.9 * np.eye(2), np.zeros(2))
        assert [m.eigenvalue for m in modes] == pytest.approx([0.9, 0.9])
        for m in modes:
            assert m.defined and m.offset == 0.0

    def test_eigenfunction_identity_random(self):
        gen = RngStream(21, 0).generator()
        M = gen.standard_normal((6, 6))
        A = 0.8 * (M + M.T) / (2 * np.linalg.norm(M + M.T, 2))  # contraction
        b = gen.standard_normal(6)
        modes = koopman_spectrum_linear(A, b)
        for _ in range(100):
            w = gen.standard_normal(6)
            wn = A @ w + b
            for m in modes:
                fw = m.evaluate(w)
                resid = abs(m.evaluate(wn) - m.eigenvalue * fw) / (1 + abs(fw))
                assert resid < 1e-8

    def test_unit_eigenvalue_flagged(self):
        A = np.diag([1.0, 0.5])
        modes = koopman_spectrum_linear(A, np.array([0.3, 0.4]))
        unit = [m for m in modes if not m.defined]
        assert len(unit) == 1 and unit[0].eigenvalue == pytest.approx(1.0)
        with pytest.raises(ParameterError):
            unit[0].evaluate(np.zeros(2))

    def test_nonsymmetric_diagonalizable(self):
        A = np.array([[0.5, 0.3], [0.0, 0.2]])
        b = np.array([1.0, -1.0])
        modes = koopman_spectrum_linear(A, b)
        gen = RngStream(22, 0).generator()
        for _ in range(10):
            w = gen.standard_normal(2)
            for m in modes:
                assert m.evaluate(A @ w + b) == pytest.approx(
                    m.eigenvalue * m.evaluate(w), abs=1e-10)


class TestTVCurve:
    def test_stationary_start_is_flat_zero(self):
        pi = spectral_gap(TWO_STATE).stationary
        curve = tv_convergence_curve(TWO_STATE, pi, 10)
        assert np.max(curve) < 1e-12

    def test_two_state_rate(self):
        curve = tv_convergence_curve(TWO_STATE, np.array([1.0, 0.0]), 40)
        from ergostab.ergodic import mixing_rate_fit
        fit = mixing_rate_fit(curve)
        assert fit.rate == pytest.approx(0.7, abs=1e-6)

    def test_identity_never_mixes(self):
        curve = tv_convergence_curve(np.eye(2), np.array([0.3, 0.7]), 5)
        assert np.all(curve == curve[0]) and curve[0] > 0

    def test_monotone_for_reversible_point_mass(self):
        curve = tv_convergence_curve(TWO_STATE, np.array([0.0, 1.0]), 30)
        assert np.all(np.diff(curve) <= 1e-15)

    def test_bad_initial_rejected(self):
        with pytest.raises(ParameterError):
            tv_convergence_curve(TWO_STATE, np.array([0.7, 0.7]), 5)
