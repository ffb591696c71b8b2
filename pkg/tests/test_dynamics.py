import itertools

import numpy as np
import pytest

from ergostab.dynamics import (OptimizerConfig, OrbitSchedule, WeightCoordinate,
                               draw_batch, run_ensemble, run_orbit, step)
from ergostab.errors import DivergenceError, ParameterError
from ergostab.landscapes import QuadraticMapLoss, ToyNetLandscape, make_dataset
from ergostab.rng import RngStream


class Sphere:
    """Data-free quadratic bowl ||w||^2 / 2."""

    def mean_loss(self, X, Y, w):
        return 0.5 * float(w @ w)

    def mean_grad(self, X, Y, w):
        return np.array(w, dtype=float)

    def per_sample_losses(self, X, Y, w):
        return np.array([self.mean_loss(X, Y, w)])


def gd_config(eta, **kw):
    return OptimizerConfig(eta=eta, mode="gd", **kw)


class TestStep:
    def test_quadratic_half_step(self):
        w, v = step(np.array([1.0]), np.zeros(1), Sphere(), None,
                    gd_config(0.5), np.arange(1))
        assert w[0] == 0.5 and v[0] == -0.5

    def test_critical_point_fixed(self):
        w, _ = step(np.zeros(3), np.zeros(3), Sphere(), None,
                    gd_config(1.7), np.arange(1))
        assert np.array_equal(w, np.zeros(3))

    def test_zero_step_size_identity(self):
        v0 = np.array([0.2, -0.1])
        w, v = step(np.array([1.0, 2.0]), v0, Sphere(), None,
                    OptimizerConfig(eta=0.0, momentum=0.5, mode="gd"),
                    np.arange(1))
        assert np.array_equal(w, np.array([1.0, 2.0]) + 0.5 * v0)
        assert np.array_equal(v, 0.5 * v0)

    def test_momentum_zero_matches_plain_update(self):
        net = ToyNetLandscape(2, 3)
        ds = make_dataset(6, 2, 0.0, seed=1)
        gen = RngStream(2, 0).generator()
        w0 = gen.standard_normal(net.dim)
        batch = np.array([0, 2, 4])
        w1, _ = step(w0, np.zeros(net.dim), net, ds, gd_config(0.3), batch)
        mean_g = np.mean([net.grad((ds.X[i], ds.y[i]), w0) for i in batch], axis=0)
        assert np.allclose(w1, w0 - 0.3 * mean_g, atol=1e-14)

    def test_divergence_raises(self):
        # eta=3 on the bowl overshoots: w' = -2w, outside the radius
        with pytest.raises(DivergenceError):
            step(np.array([100.0]), np.zeros(1), Sphere(), None,
                 gd_config(3.0, divergence_radius=10.0), np.arange(1))

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            OptimizerConfig(eta=-1.0)
        with pytest.raises(ParameterError):
            OptimizerConfig(eta=0.1, momentum=1.0)
        with pytest.raises(ParameterError):
            OptimizerConfig(eta=0.1, mode="sgd")  # missing batch size


class TestDrawBatch:
    def test_full_batch_is_everything(self):
        gen = RngStream(0, 0).generator()
        assert np.array_equal(draw_batch(7, 7, gen), np.arange(7))

    def test_out_of_range(self):
        gen = RngStream(0, 0).generator()
        with pytest.raises(ParameterError):
            draw_batch(5, 6, gen)
        with pytest.raises(ParameterError):
            draw_batch(5, 0, gen)

    def test_inclusion_frequency(self):
        # any fixed index is included with probability m/n
        n, m, draws = 20, 5, 10**5
        gen = RngStream(77, 0).generator()
        hits = 0
        for _ in range(draws):
            if 3 in draw_batch(n, m, gen):
                hits += 1
        expect = m / n
        sigma = np.sqrt(expect * (1 - expect) / draws)
        assert abs(hits / draws - expect) < 3 * sigma

    def test_subset_uniformity(self):
        # brute-force enumeration of all 10 subsets at n=5, m=2
        n, m, draws = 5, 2, 10**5
        subsets = {c: 0 for c in itertools.combinations(range(n), m)}
        gen = RngStream(78, 0).generator()
        for _ in range(draws):
            subsets[tuple(draw_batch(n, m, gen))] += 1
        expect = draws / len(subsets)
        sigma = np.sqrt(expect * (1 - 1 / len(subsets)))
        for count in subsets.values():
            assert abs(count - expect) < 3 * sigma
        chi2 = sum((c - expect) ** 2 / expect for c in subsets.values())
        assert chi2 < 27.877  # chi-square 0.999 quantile, 9 dof


class TestRunOrbit:
    def test_hand_iterated_series(self):
        rec = run_orbit(np.array([1.0]), Sphere(), None, gd_config(0.5),
                        OrbitSchedule(0, 3), {"w": WeightCoordinate(0)})
        assert np.array_equal(rec.observable_series["w"], [0.5, 0.25, 0.125])
        assert not rec.diverged

    def test_empty_length_valid(self):
        rec = run_orbit(np.array([1.0]), Sphere(), None, gd_config(0.5),
                        OrbitSchedule(0, 0), {"w": WeightCoordinate(0)})
        assert rec.observable_series["w"].size == 0
        assert not rec.diverged

    def test_huge_step_size_flags_divergence(self):
        land = QuadraticMapLoss(1.0)
        rec = run_orbit(np.array([0.9]), land, None,
                        gd_config(200.0, divergence_radius=1e3),
                        OrbitSchedule(0, 50), {"w": WeightCoordinate(0)})
        assert rec.diverged and rec.diverged_step is not None
        assert rec.observable_series["w"].size < 50

    def test_runup_discarded(self):
        rec = run_orbit(np.array([1.0]), Sphere(), None, gd_config(0.5),
                        OrbitSchedule(2, 2), {"w": WeightCoordinate(0)})
        assert np.array_equal(rec.observable_series["w"], [0.125, 0.0625])

    def test_gd_equals_sgd_full_batch(self):
        net = ToyNetLandscape(2, 4)
        ds = make_dataset(8, 2, 0.0, seed=3)
        w0 = RngStream(4, 0).generator().standard_normal(net.dim)
        sched = OrbitSchedule(0, 25)
        obs = {"w": WeightCoordinate(1)}
        rec_gd = run_orbit(w0, net, ds, gd_config(0.1), sched, obs,
                           rng=RngStream(5, 0))
        rec_sgd = run_orbit(w0, net, ds,
                            OptimizerConfig(eta=0.1, mode="sgd", batch_size=8),
                            sched, obs, rng=RngStream(5, 0))
        assert np.array_equal(rec_gd.observable_series["w"],
                              rec_sgd.observable_series["w"])

    def test_weight_snapshots_stride(self):
        rec = run_orbit(np.array([1.0]), Sphere(), None, gd_config(0.5),
                        OrbitSchedule(0, 6, stride=2), {"w": WeightCoordinate(0)})
        assert rec.weight_snapshots.shape == (3, 1)
        assert np.array_equal(rec.weight_snapshots[:, 0], [0.5, 0.125, 0.03125])


class TestEnsemble:
    def _run(self, workers, master_seed=11):
        net = ToyNetLandscape(2, 3)
        ds = make_dataset(6, 2, 0.25, seed=9)
        inits = [net.random_init(RngStream(10, i).generator()) for i in range(5)]
        cfg = OptimizerConfig(eta=0.05, mode="sgd", batch_size=3)
        return run_ensemble(inits, net, ds, cfg, OrbitSchedule(5, 20),
                            {"w": WeightCoordinate(0)}, master_seed,
                            workers=workers)

    def test_identical_inits_deterministic_gd(self):
        net = ToyNetLandscape(2, 3)
        ds = make_dataset(6, 2, 0.0, seed=9)
        w0 = net.random_init(RngStream(10, 0).generator())
        recs = run_ensemble([w0, w0], net, ds, gd_config(0.05),
                            OrbitSchedule(0, 10), {"w": WeightCoordinate(0)}, 1)
        assert np.array_equal(recs[0].observable_series["w"],
                              recs[1].observable_series["w"])

    def test_seed_reproducibility(self):
        a = self._run(workers=1)
        b = self._run(workers=1)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.observable_series["w"],
                                  rb.observable_series["w"])

    def test_worker_count_invariance(self):
        serial = self._run(workers=1)
        parallel = self._run(workers=4)
        for rs, rp in zip(serial, parallel):
            assert np.array_equal(rs.observable_series["w"],
                                  rp.observable_series["w"])

    def test_empty_inits_rejected(self):
        with pytest.raises(ParameterError):
            run_ensemble([], Sphere(), None, gd_config(0.1),
                         OrbitSchedule(0, 1), {}, 0)
