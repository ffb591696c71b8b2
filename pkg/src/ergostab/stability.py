"""Statistical stability of learning dynamics under single-sample swaps.

The stability coefficient of an algorithm is the supremum, over pairs of
datasets differing in one sample and over probe points, of the change in
ergodic loss averages.  A finite probe set and finitely many pairs only
certify a lower bound; everything here reports beta_hat as such.

Bound evaluators: the concentration bound

    risk <= empirical + beta + 2*(n*beta + L) * sqrt(log(2/delta) / (2n))

and the order-of-magnitude operator-perturbation bound
C * m * L_D * eta / (n^2 * (1 - lambda)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ergostab.dynamics import OptimizerConfig, OrbitSchedule, ProbeLosses, run_orbit
from ergostab.ergodic import time_average
from ergostab.errors import DivergenceError, ParameterError, SingularKernelError
from ergostab.landscapes import LinearizedModel, SyntheticDataset, resample_point
from ergostab.parallel import pmap
from ergostab.rng import RngStream, substream_id


@dataclass(frozen=True)
class PerturbedPair:
    """Datasets S and S' that agree everywhere except index k."""

    base: SyntheticDataset
    perturbed: SyntheticDataset
    index: int
    replacement: tuple


def stochastic_perturbation(dataset: SyntheticDataset, k: int,
                            rng) -> PerturbedPair:
    """Replace sample k with a fresh draw from the dataset's own generator.

    The replacement passes through the same corruption law as the original
    samples.  ``rng`` may be an RngStream or a numpy Generator.
    """
    if not 0 <= k < dataset.n:
        raise ParameterError(f"index {k} out of range for n={dataset.n}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    x, y, clean, corrupted = resample_point(dataset, gen)
    perturbed = dataset.replace(k, x, y, clean, corrupted)
    return PerturbedPair(dataset, perturbed, k, (x, y, clean, corrupted))


@dataclass(frozen=True)
class SASProtocol:
    runup: int = 200
    window: int = 1200
    inits_per_side: int = 1
    init_scale: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.runup < 0 or self.inits_per_side < 1:
            raise ParameterError("protocol needs window >= 1, runup >= 0, inits >= 1")


@dataclass
class StabilityReport:
    """Per-pair statistic differences and the stability lower bound."""

    diffs: np.ndarray            # (pairs, probes); nan rows for invalid pairs
    beta_hat: float              # max over valid pairs and probes (lower bound)
    per_pair_mean: np.ndarray
    per_pair_sem: np.ndarray
    invalid_pairs: list[int]     # pairs with a diverged orbit
    protocol: SASProtocol
    n_probes: int
    observable: str = "probe-loss"

    @property
    def n_pairs(self) -> int:
        return self.diffs.shape[0]


def _side_statistics(landscape, dataset, probes_X, probes_Y, config, protocol,
                     master_seed, pair_index):
    """Time-averaged probe losses, averaged over the per-side inits.

    Both sides of a pair call this with identical stream ids, so the
    initializations and batch draws are shared and differences isolate the
    data perturbation.
    """
    observables = {"probe_losses": ProbeLosses(landscape, probes_X, probes_Y)}
    schedule = OrbitSchedule(protocol.runup, protocol.window)
    stats = np.zeros(len(probes_X))
    for j in range(protocol.inits_per_side):
        stream = RngStream(master_seed, substream_id(j, pair_index))
        w0 = landscape.random_init(stream.generator(), scale=protocol.init_scale)
        record = run_orbit(w0, landscape, dataset, config, schedule,
                           observables, rng=stream)
        if record.diverged:
            raise DivergenceError(record.diverged_step)
        series = record.observable_series["probe_losses"]  # (window, probes)
        stats += series.mean(axis=0)
    return stats / protocol.inits_per_side


def _pair_worker(args):
    (i, pair, landscape, probes_X, probes_Y, config, protocol, master_seed) = args
    try:
        stat_s = _side_statistics(landscape, pair.base, probes_X, probes_Y,
                                  config, protocol, master_seed, i)
        stat_sp = _side_statistics(landscape, pair.perturbed, probes_X, probes_Y,
                                   config, protocol, master_seed, i)
    except DivergenceError:
        return i, None
    return i, np.abs(stat_s - stat_sp)


def sas_lower_bound(landscape, pairs: Sequence[PerturbedPair], probes,
                    config: OptimizerConfig, protocol: SASProtocol,
                    master_seed: int, workers: int = 1) -> StabilityReport:
    """Estimate the stability coefficient from perturbed dataset pairs.

    For every pair, orbits are run on both datasets with coupled streams;
    the per-probe time-averaged losses are differenced and beta_hat is the
    maximum difference over valid pairs and probes.  Pairs containing a
    diverged orbit are flagged invalid and excluded.
    """
    if len(probes) == 0:
        raise ParameterError("probe set must be non-empty")
    probes_X = np.array([np.atleast_1d(x) for x, _ in probes], dtype=float)
    probes_Y = np.array([y for _, y in probes], dtype=float)
    jobs = [(i, pair, landscape, probes_X, probes_Y, config, protocol, master_seed)
            for i, pair in enumerate(pairs)]
    results = pmap(_pair_worker, jobs, workers)

    diffs = np.full((len(pairs), len(probes)), np.nan)
    invalid = []
    for i, row in results:
        if row is None:
            invalid.append(i)
        else:
            diffs[i] = row
    valid = [i for i in range(len(pairs)) if i not in invalid]
    beta_hat = float(np.max(diffs[valid])) if valid else float("nan")
    nan = float("nan")
    per_pair_mean = np.array([float(np.mean(diffs[i])) if i in valid else nan
                              for i in range(len(pairs))])
    if len(probes) > 1:
        per_pair_sem = np.array(
            [float(np.std(diffs[i], ddof=1)) / math.sqrt(len(probes))
             if i in valid else nan for i in range(len(pairs))])
    else:
        per_pair_sem = np.where(np.isnan(per_pair_mean), nan, 0.0)
    return StabilityReport(diffs, beta_hat, per_pair_mean, per_pair_sem,
                           invalid, protocol, len(probes))


@dataclass(frozen=True)
class RiskReport:
    empirical: float     # mean time-averaged loss over training samples
    population: float    # held-out estimate of the expected statistic
    gap: float


def empirical_risks(train_stats: Sequence[float],
                    heldout_stats: Sequence[float]) -> RiskReport:
    """Risks built from per-sample loss statistics rather than final weights."""
    tr = np.asarray(train_stats, dtype=float)
    ho = np.asarray(heldout_stats, dtype=float)
    if tr.size == 0 or ho.size == 0:
        raise ParameterError("need statistics for training and held-out samples")
    if not (np.all(np.isfinite(tr)) and np.all(np.isfinite(ho))):
        raise ParameterError("missing (non-finite) loss statistics")
    r_emp = float(np.mean(tr))
    r_pop = float(np.mean(ho))
    return RiskReport(r_emp, r_pop, abs(r_pop - r_emp))


@dataclass(frozen=True)
class BoundReport:
    bound: float
    empirical_risk: float
    stability_term: float
    concentration_term: float
    beta: float
    loss_bound: float
    n: int
    delta: float


def theorem1_bound(empirical_risk: float, beta: float, n: int,
                   loss_bound: float, delta: float) -> BoundReport:
    """High-probability risk bound from the stability coefficient.

    bound = R_hat + beta + 2*(n*beta + L) * sqrt(log(2/delta) / (2n)),
    valid with probability at least 1 - delta.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if beta < 0.0 or loss_bound < 0.0:
        raise ParameterError("beta and the loss bound must be nonnegative")
    if n < 1:
        raise ParameterError("n must be >= 1")
    concentration = 2.0 * (n * beta + loss_bound) * math.sqrt(
        math.log(2.0 / delta) / (2.0 * n))
    return BoundReport(empirical_risk + beta + concentration, empirical_risk,
                       beta, concentration, beta, loss_bound, n, delta)


def theorem2_bound(grad_lipschitz: float, mixing_rate: float, n: int, m: int,
                   eta: float, constant: float = 1.0) -> float:
    """Order-of-magnitude stability bound from operator perturbation theory.

        C * m * L_D * eta / (n^2 * (1 - lambda))

    combining the single-swap perturbation size m*L_D*eta/n^2 with the
    1/(1 - lambda) amplification of a geometrically mixing chain.  The
    constant C is caller-supplied; the result is an order bound, not a
    certified one.
    """
    if not 0.0 <= mixing_rate < 1.0:
        if mixing_rate >= 1.0:
            raise DivergenceError(None, "uniform ergodicity violated (lambda >= 1)")
        raise ParameterError("mixing rate must lie in [0, 1)")
    if min(grad_lipschitz, eta, constant) < 0.0 or n < 1 or m < 1:
        raise ParameterError("inputs must be nonnegative with n, m >= 1")
    return constant * m * grad_lipschitz * eta / (n * n * (1.0 - mixing_rate))


@dataclass(frozen=True)
class WeylReport:
    inv_diff_norm: float          # ||K_S^-1 - K_S'^-1|| (spectral)
    inv_theta_min_base: float
    inv_theta_min_pert: float
    kernel_diff_norm: float       # ||K_S - K_S'||
    eigen_shifts: np.ndarray      # |theta_i(S') - theta_i(S)|, sorted spectra
    weyl_residuals: np.ndarray    # shifts - ||K_S - K_S'||; <= 0 up to roundoff


def weyl_stability_bound(model_s: LinearizedModel,
                         model_sp: LinearizedModel) -> WeylReport:
    """Spectral sensitivity of the inverse kernel under a dataset swap.

    Eigenvalue-interlacing gives |theta_i(K') - theta_i(K)| <= ||K' - K||;
    the inverse-kernel norm 1/theta_min controls how hard a swap can move
    the interpolant.
    """
    K_s, K_sp = model_s.kernel(), model_sp.kernel()
    if K_s.shape != K_sp.shape:
        raise ParameterError("kernels must have matching shapes")
    theta_s = np.linalg.eigvalsh(K_s)
    theta_sp = np.linalg.eigvalsh(K_sp)
    for name, theta in (("base", theta_s), ("perturbed", theta_sp)):
        if theta[0] <= 0 or theta[0] < 1e-12 * theta[-1]:
            raise SingularKernelError(f"{name} kernel is numerically singular")
    inv_diff = np.linalg.inv(K_s) - np.linalg.inv(K_sp)
    inv_diff_norm = float(np.linalg.norm(inv_diff, 2))
    kernel_diff_norm = float(np.linalg.norm(K_s - K_sp, 2))
    shifts = np.abs(theta_sp - theta_s)
    return WeylReport(inv_diff_norm, 1.0 / theta_s[0], 1.0 / theta_sp[0],
                      kernel_diff_norm, shifts, shifts - kernel_diff_norm)


def ntk_stability_transfer(beta_linear: float, lip_const: float,
                           epsilon: float) -> float:
    """Stability carried from the linearized orbit to the nearby true orbit.

    If the true and linearized orbits stay epsilon-close and the loss is
    lip_const-Lipschitz, stability degrades by at most 2*lip_const*epsilon.
    """
    if min(beta_linear, lip_const, epsilon) < 0.0:
        raise ParameterError("all inputs must be nonnegative")
    return beta_linear + 2.0 * lip_const * epsilon
