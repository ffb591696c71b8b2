"""Experiment recipes behind the command-line runner.

Each recipe consumes a fully-resolved parameter dict and returns tables
(name -> (header, rows)) plus JSON documents.  All randomness is derived
from the master seed through fixed stream offsets, so reruns and different
worker counts produce identical results.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from ergostab import kernels
from ergostab.dynamics import (HeldoutLoss, OptimizerConfig, OrbitSchedule,
                               ProbeLosses, TrainLoss, WeightCoordinate,
                               draw_batch, run_orbit)
from ergostab.ergodic import (autocorrelation, bifurcation_scan, mixing_rate_fit,
                              time_average)
from ergostab.errors import DivergenceError, ErgostabError
from ergostab.landscapes import (LinearizedModel, QuadraticMapLoss, Teacher,
                                 ToyNetLandscape, linear_orbit,
                                 linearized_dynamics, make_dataset,
                                 ntk_fixed_point, ntk_mixing_rate)
from ergostab.markov import (LossPartition, koopman_spectrum_linear,
                             spectral_gap, tv_convergence_curve, ulam_transition)
from ergostab.rng import RngStream, substream_id
from ergostab.stability import (SASProtocol, empirical_risks, sas_lower_bound,
                                stochastic_perturbation, theorem1_bound,
                                theorem2_bound, weyl_stability_bound)

# stream offsets reserved per experiment role
_DATA_OFFSET = 1000
_HELDOUT_OFFSET = 2000
_ENSEMBLE_OFFSET = 500
_TEACHER_STREAM = 3
_PAIR_TAG = 77


class DivergenceDominated(ErgostabError):
    """Too many orbits diverged for the experiment to report anything."""


def _period_str(p) -> str:
    return "aperiodic" if p is None else str(int(p))


# ---------------------------------------------------------------------------

def run_bifurcate(p: dict, master_seed: int, workers: int) -> dict:
    count = int(np.floor((p["eta_max"] - p["eta_min"]) / p["eta_step"] + 1.5))
    etas = np.round(p["eta_min"] + p["eta_step"] * np.arange(count), 10)
    etas = etas[etas <= p["eta_max"] + 1e-12]
    scan = bifurcation_scan(QuadraticMapLoss(p["s"]), etas, p["n_inits"],
                            p["runup"], p["keep"], master_seed,
                            tol=p["tol"], boundary=p["boundary"],
                            radius=p["radius"], workers=workers)
    rows = []
    for i, eta in enumerate(scan.etas):
        for j in range(scan.n_inits):
            period = _period_str(scan.periods[i][j])
            diverged = bool(scan.diverged[i][j])
            tail = scan.samples[i][j]
            if tail.size == 0:
                rows.append([float(eta), j, 0, "", period, diverged])
            for k, value in enumerate(tail):
                rows.append([float(eta), j, k, float(value), period, diverged])
    if np.all(scan.diverged):
        raise DivergenceDominated("every scan cell diverged")
    header = ["eta", "init_id", "sample_index", "value", "period", "diverged"]
    consensus = {float(e): _period_str(c)
                 for e, c in zip(scan.etas, scan.consensus_periods())}
    doc = {"s": p["s"], "boundary": p["boundary"], "tol": p["tol"],
           "n_inits": p["n_inits"], "runup": p["runup"], "keep": p["keep"],
           "consensus_periods": consensus,
           "diverged_cells": int(scan.diverged.sum())}
    return {"tables": {"bifurcation.csv": (header, rows)},
            "documents": {"scan.json": doc}}


def run_lyapunov(p: dict, master_seed: int, workers: int) -> dict:
    rows = []
    header = ["map", "s", "eta", "init_id", "w0", "value", "floor_hits",
              "diverged_step"]
    etas = p["etas"] if p["map"] == "gd" else [0.0]
    for i, eta in enumerate(etas):
        for j in range(p["n_inits"]):
            stream = RngStream(master_seed, substream_id(j, i))
            w0 = float(stream.generator().random())
            if p["map"] == "gd":
                value, hits, dstep = kernels.gmap_gd_lyapunov(
                    p["s"], float(eta), w0, p["steps"], p["runup"],
                    boundary=p["boundary"])
            else:
                value, hits, dstep = kernels.gmap_raw_lyapunov(
                    p["s"], w0, p["steps"], p["runup"])
            rows.append([p["map"], p["s"], float(eta), j, w0, float(value),
                         int(hits), int(dstep)])
    return {"tables": {"lyapunov.csv": (header, rows)}, "documents": {}}


def _sweep_teacher(p: dict, master_seed: int) -> Teacher:
    w = RngStream(master_seed + _DATA_OFFSET, _TEACHER_STREAM).generator() \
        .standard_normal(p["d"])
    w /= np.linalg.norm(w)
    return Teacher(p["teacher"], w, noise_std=p["teacher_noise"])


def _sweep_net(p: dict) -> ToyNetLandscape:
    return ToyNetLandscape(p["d"], p["hidden"], p["activation"], p["loss"])


def _sweep_optimizer(p: dict) -> OptimizerConfig:
    mode = p["mode"]
    return OptimizerConfig(eta=p["eta"], momentum=p["momentum"], mode=mode,
                           batch_size=(p["batch_size"] if mode == "sgd" else None))


def _corruption_level(p: dict, level_index: int, level: float, master_seed: int,
                      teacher: Teacher, net, config):
    """SAS pairs plus a statistics ensemble for one corruption probability."""
    ds = make_dataset(p["n"], p["d"], level, teacher=teacher,
                      seed=master_seed + _DATA_OFFSET)
    ho = make_dataset(p["heldout"], p["d"], level, teacher=teacher,
                      seed=master_seed + _HELDOUT_OFFSET)
    probes = [(ho.X[i], float(ho.y[i])) for i in range(p["probes"])]
    pairs = [stochastic_perturbation(
                 ds, i % ds.n,
                 RngStream(master_seed, substream_id(i, level_index, _PAIR_TAG)))
             for i in range(p["pairs"])]
    protocol = SASProtocol(p["runup"], p["window"], p["inits_per_side"],
                           p["init_scale"])
    report = sas_lower_bound(net, pairs, probes, config, protocol,
                             master_seed + 31 * level_index,
                             workers=p.get("_workers", 1))

    schedule = OrbitSchedule(p["runup"], p["window"])
    observables = {"train": ProbeLosses(net, ds.X, ds.y),
                   "test": HeldoutLoss(net, ho.X, ho.y)}
    train_stats, test_stats, ac_runs = [], [], []
    diverged = 0
    for j in range(p["inits"]):
        stream = RngStream(master_seed + _ENSEMBLE_OFFSET + level_index * 97, j)
        w0 = net.random_init(stream.generator(), scale=p["init_scale"])
        record = run_orbit(w0, net, ds, config, schedule, observables, rng=stream)
        if record.diverged:
            diverged += 1
            continue
        train_stats.append(record.observable_series["train"].mean(axis=0))
        test_stats.append(time_average(record.observable_series["test"]).value)
        ac = autocorrelation(record.observable_series["test"], 0, p["tau_max"])
        ac_runs.append(np.abs(ac.values))
    if not train_stats:
        raise DivergenceDominated(f"all ensemble orbits diverged at p={level}")
    risks = empirical_risks(np.mean(train_stats, axis=0), [float(np.mean(test_stats))])
    mean_ac = np.mean(ac_runs, axis=0)
    mean_abs_autocorr = float(np.mean(mean_ac[1:p["tau_max"] + 1]))
    return report, risks, mean_ac, mean_abs_autocorr, diverged


def run_corrupt_sweep(p: dict, master_seed: int, workers: int) -> dict:
    p = dict(p, _workers=workers)
    teacher = _sweep_teacher(p, master_seed)
    net = _sweep_net(p)
    config = _sweep_optimizer(p)
    sweep_rows, pair_rows, ac_rows = [], [], []
    levels_doc = []
    for li, level in enumerate(p["p_list"]):
        report, risks, mean_ac, mabs, diverged = _corruption_level(
            p, li, level, master_seed, teacher, net, config)
        sweep_rows.append([level, float(report.beta_hat),
                           float(np.nanmean(report.per_pair_mean)),
                           float(np.nanmean(report.per_pair_sem)),
                           risks.empirical, risks.population, risks.gap,
                           mabs, len(report.invalid_pairs), diverged])
        for i in range(report.n_pairs):
            for q in range(report.n_probes):
                pair_rows.append([level, i, q, float(report.diffs[i, q])])
        for lag, value in enumerate(mean_ac):
            ac_rows.append([level, lag, float(value), False])
        levels_doc.append({
            "p": level, "beta_hat": float(report.beta_hat),
            "invalid_pairs": report.invalid_pairs,
            "risk_empirical": risks.empirical,
            "risk_population": risks.population,
            "gap": risks.gap, "mean_abs_autocorr": mabs,
        })
    return {
        "tables": {
            "sweep.csv": (["p", "beta_hat", "pair_diff_mean", "pair_diff_sem",
                           "risk_empirical", "risk_population", "gap",
                           "mean_abs_autocorr", "invalid_pairs",
                           "diverged_orbits"], sweep_rows),
            "pairs.csv": (["p", "pair_id", "probe_id", "diff"], pair_rows),
            "autocorr.csv": (["p", "lag", "C", "guard_flag"], ac_rows),
        },
        "documents": {"sweep.json": {
            "statistic": "beta_hat is a finite-sample lower bound",
            "observable": "probe-loss",
            "levels": levels_doc,
        }},
    }


def run_sas(p: dict, master_seed: int, workers: int) -> dict:
    p = dict(p, _workers=workers, p_list=[p["p"]])
    teacher = _sweep_teacher(p, master_seed)
    net = _sweep_net(p)
    config = _sweep_optimizer(p)
    report, risks, _, _, diverged = _corruption_level(
        p, 0, p["p"], master_seed, teacher, net, config)
    pair_rows = [[i, q, float(report.diffs[i, q])]
                 for i in range(report.n_pairs) for q in range(report.n_probes)]
    doc = {
        "statistic": "beta_hat is a finite-sample lower bound",
        "observable": report.observable,
        "protocol": {"runup": report.protocol.runup,
                     "window": report.protocol.window,
                     "inits_per_side": report.protocol.inits_per_side,
                     "pairs": report.n_pairs, "probes": report.n_probes},
        "beta_hat": float(report.beta_hat),
        "per_pair_mean": [float(x) for x in report.per_pair_mean],
        "per_pair_sem": [float(x) for x in report.per_pair_sem],
        "invalid_pairs": report.invalid_pairs,
        "risk_empirical": risks.empirical,
        "risk_population": risks.population,
        "gap": risks.gap,
        "diverged_ensemble_orbits": diverged,
    }
    return {"tables": {"pairs.csv": (["pair_id", "probe_id", "diff"], pair_rows)},
            "documents": {"stability.json": doc}}


def run_autocorr(p: dict, master_seed: int, workers: int) -> dict:
    """Per-corruption-level autocorrelation of the held-out loss series."""
    p = dict(p)
    teacher = _sweep_teacher(p, master_seed)
    net = _sweep_net(p)
    config = _sweep_optimizer(p)
    schedule = OrbitSchedule(p["runup"], p["window"])
    rows = []
    for li, level in enumerate(p["p_list"]):
        ds = make_dataset(p["n"], p["d"], level, teacher=teacher,
                          seed=master_seed + _DATA_OFFSET)
        ho = make_dataset(p["heldout"], p["d"], level, teacher=teacher,
                          seed=master_seed + _HELDOUT_OFFSET)
        observables = {"test": HeldoutLoss(net, ho.X, ho.y)}
        ac_runs, guards = [], False
        for j in range(p["inits"]):
            stream = RngStream(master_seed + _ENSEMBLE_OFFSET + li * 97, j)
            w0 = net.random_init(stream.generator(), scale=p["init_scale"])
            record = run_orbit(w0, net, ds, config, schedule, observables,
                               rng=stream)
            if record.diverged:
                continue
            ac = autocorrelation(record.observable_series["test"], 0, p["tau_max"])
            guards = guards or ac.guard_triggered
            ac_runs.append(np.abs(ac.values))
        if not ac_runs:
            raise DivergenceDominated(f"all orbits diverged at p={level}")
        mean_ac = np.mean(ac_runs, axis=0)
        for lag, value in enumerate(mean_ac):
            rows.append([level, lag, float(value), guards])
    return {"tables": {"autocorr.csv": (["p", "lag", "C", "guard_flag"], rows)},
            "documents": {}}


def run_ulam(p: dict, master_seed: int, workers: int) -> dict:
    """Loss-space transition surrogate of a chaotic descent orbit."""
    w0 = float(RngStream(master_seed, 0).generator().random())
    series, dstep = kernels.gmap_gd_loss_series(
        p["s"], p["eta"], w0, p["runup"], p["length"], boundary=p["boundary"])
    if series.size < max(2, p["length"] // 2):
        raise DivergenceDominated(f"orbit diverged at step {dstep}")
    tm = ulam_transition(series, 0, k=p["bins"], smoothing=p["smoothing"])
    report = spectral_gap(tm)
    start = np.zeros(tm.k)
    start[0] = 1.0
    curve = tv_convergence_curve(tm, start, p["tv_steps"])
    try:
        fitted = mixing_rate_fit(curve).rate
    except ErgostabError:
        fitted = float("nan")
    spec_rows = [[i, float(m)] for i, m in enumerate(report.moduli)]
    tv_rows = [[t, float(d)] for t, d in enumerate(curve)]
    doc = {
        "label": tm.label,
        "s": p["s"], "eta": p["eta"], "boundary": p["boundary"],
        "bins": tm.k, "sample_count": tm.sample_count,
        "smoothing": tm.smoothing,
        "uniform_rows": tm.uniform_rows, "clamped": tm.clamped,
        "partition": {"lo": tm.partition.lo, "hi": tm.partition.hi},
        "lambda2": report.lambda2, "spectral_gap": report.gap,
        "tv_fitted_rate": fitted,
        "stationary": [float(x) for x in report.stationary],
        "matrix": [[float(x) for x in row] for row in tm.probs],
    }
    return {"tables": {"spectrum.csv": (["mode_index", "modulus"], spec_rows),
                       "tv.csv": (["step", "distance"], tv_rows)},
            "documents": {"transition.json": doc}}


def run_ntk(p: dict, master_seed: int, workers: int) -> dict:
    gen = RngStream(master_seed, 0).generator()
    F = gen.standard_normal((p["n"], p["d_w"])) / math.sqrt(p["d_w"])
    Y = gen.standard_normal(p["n"])
    ref = np.zeros(p["d_w"])
    probe_model = LinearizedModel(F, Y, ref, eta=1.0)
    theta = probe_model.kernel_eigenvalues()
    eta = p["eta"] if p["eta"] > 0 else p["eta_fraction"] / float(theta[-1])
    model = LinearizedModel(F, Y, ref, eta=eta)
    A, b = linearized_dynamics(model)
    w_star = ntk_fixed_point(model, ridge=p["ridge"])
    rate = ntk_mixing_rate(model)

    orbit = linear_orbit(A, b, ref, p["steps"])
    errs = np.linalg.norm(orbit - w_star, axis=1)
    # take the ratio late in the orbit but well above the noise floor
    usable = np.nonzero(errs > errs[0] * 1e-9)[0]
    k = int(usable[-1]) if usable.size > 1 else len(errs) - 1
    contraction = float(errs[k] / errs[k - 1]) if k >= 1 else float("nan")

    modes = koopman_spectrum_linear(A, b)
    probe_gen = RngStream(master_seed, 1).generator()
    worst = 0.0
    for _ in range(p["koopman_probes"]):
        w = probe_gen.standard_normal(p["d_w"])
        wn = A @ w + b
        for mode in modes:
            if not mode.defined:
                continue
            fw = mode.evaluate(w)
            resid = abs(mode.evaluate(wn) - mode.eigenvalue * fw) / (1.0 + abs(fw))
            worst = max(worst, resid)

    pert_gen = RngStream(master_seed, 2).generator()
    F2 = F.copy()
    F2[p["perturb_row"] % p["n"]] = pert_gen.standard_normal(p["d_w"]) / math.sqrt(p["d_w"])
    model2 = LinearizedModel(F2, Y, ref, eta=eta)
    weyl = weyl_stability_bound(model, model2)

    doc = {
        "n": p["n"], "d_w": p["d_w"], "eta": float(eta),
        "theta_min": float(theta[0]), "theta_max": float(theta[-1]),
        "mixing_rate": float(rate),
        "fixed_point_residual": float(np.linalg.norm(A @ w_star + b - w_star)),
        "interpolation_residual": float(np.linalg.norm(Y - F @ (w_star - ref))),
        "contraction_ratio": contraction,
        "koopman_max_residual": float(worst),
        "koopman_undefined_modes": sum(not m.defined for m in modes),
        "weyl": {
            "inv_diff_norm": weyl.inv_diff_norm,
            "inv_theta_min_base": weyl.inv_theta_min_base,
            "inv_theta_min_perturbed": weyl.inv_theta_min_pert,
            "kernel_diff_norm": weyl.kernel_diff_norm,
            "max_residual_slack": float(np.max(weyl.weyl_residuals)),
        },
    }
    mode_rows = [[i, float(m.eigenvalue), m.defined] for i, m in enumerate(modes)]
    return {"tables": {"koopman.csv": (["mode_index", "eigenvalue", "defined"],
                                       mode_rows)},
            "documents": {"ntk.json": doc}}


def run_bound(p: dict, master_seed: int, workers: int) -> dict:
    t1 = theorem1_bound(p["empirical_risk"], p["beta"], p["n"], p["loss_bound"],
                        p["delta"])
    t2 = theorem2_bound(p["grad_lipschitz"], p["mixing_rate"], p["n"], p["m"],
                        p["eta"], p["constant"])
    doc = {
        "concentration_bound": {
            "bound": t1.bound,
            "empirical_risk": t1.empirical_risk,
            "stability_term": t1.stability_term,
            "concentration_term": t1.concentration_term,
            "inputs": {"beta": t1.beta, "loss_bound": t1.loss_bound,
                       "n": t1.n, "delta": t1.delta},
        },
        "operator_order_bound": {
            "value": t2,
            "note": "order bound; multiplicative constant supplied by caller",
            "inputs": {"grad_lipschitz": p["grad_lipschitz"],
                       "mixing_rate": p["mixing_rate"], "n": p["n"],
                       "m": p["m"], "eta": p["eta"], "constant": p["constant"]},
        },
    }
    return {"tables": {}, "documents": {"bound.json": doc}}


def run_orbit_experiment(p: dict, master_seed: int, workers: int) -> dict:
    stream = RngStream(master_seed, 0)
    if p["landscape"] == "gmap":
        landscape = QuadraticMapLoss(p["s"])
        trainset = None
        w0 = np.array([stream.generator().random()])
        observables = {"weight": WeightCoordinate(0), "loss": _GmapLoss(p["s"])}
    else:
        teacher = _sweep_teacher(p, master_seed)
        landscape = _sweep_net(p)
        trainset = make_dataset(p["n"], p["d"], p["p"], teacher=teacher,
                                seed=master_seed + _DATA_OFFSET)
        heldout = make_dataset(p["heldout"], p["d"], p["p"], teacher=teacher,
                               seed=master_seed + _HELDOUT_OFFSET)
        w0 = landscape.random_init(stream.generator(), scale=p["init_scale"])
        observables = {"train_loss": TrainLoss(landscape, trainset),
                       "test_loss": HeldoutLoss(landscape, heldout.X, heldout.y)}
    config = _sweep_optimizer(p) if p["landscape"] == "toynet" else \
        OptimizerConfig(eta=p["eta"], mode="gd")
    schedule = OrbitSchedule(p["runup"], p["length"])
    record = run_orbit(w0, landscape, trainset, config, schedule, observables,
                       rng=stream)
    names = sorted(record.observable_series)
    header = ["step"] + names + [f"cum_{n}" for n in names]
    rows = []
    steps = record.recorded_steps()
    cums = {n: np.cumsum(record.observable_series[n]) /
            np.arange(1, steps + 1) for n in names} if steps else {}
    for t in range(steps):
        rows.append([t] + [float(record.observable_series[n][t]) for n in names]
                    + [float(cums[n][t]) for n in names])
    doc = {"diverged": record.diverged, "diverged_step": record.diverged_step,
           "runup": record.runup, "length": record.length}
    return {"tables": {"orbit.csv": (header, rows)},
            "documents": {"orbit.json": doc}}


class _GmapLoss:
    """Loss observable for the data-free quadratic-map landscape."""

    def __init__(self, s):
        self.s = s

    def __call__(self, w):
        from ergostab.landscapes import gmap_loss
        return gmap_loss(self.s, float(w[0]))


RUNNERS = {
    "bifurcate": run_bifurcate,
    "lyapunov": run_lyapunov,
    "orbit": run_orbit_experiment,
    "autocorr": run_autocorr,
    "sas": run_sas,
    "ulam": run_ulam,
    "ntk": run_ntk,
    "bound": run_bound,
    "corrupt-sweep": run_corrupt_sweep,
}
