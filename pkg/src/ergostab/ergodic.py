"""Ergodic statistics of orbits.

Finite-window estimators for time averages, Lyapunov exponents of 1-D
dynamics, learning-rate bifurcation scans of the quadratic-map family, and
the product-form autocorrelation used as a mixing-rate predictor.  Every
report carries its (runup, window) so truncation of the infinite-time limit
stays auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ergostab import kernels
from ergostab.errors import ParameterError, WindowError
from ergostab.landscapes import QuadraticMapLoss
from ergostab.parallel import pmap
from ergostab.rng import RngStream, substream_id


@dataclass(frozen=True)
class ErgodicAverage:
    value: float
    runup: int
    window: int
    running: Optional[np.ndarray] = None  # cumulative means, for convergence plots


def time_average(series: Sequence[float], runup: int = 0,
                 keep_running: bool = False) -> ErgodicAverage:
    """Arithmetic mean of the post-runup window.

    The optional running series holds the cumulative means over the window,
    the standard convergence diagnostic for ergodic averages.
    """
    arr = np.asarray(series, dtype=float)
    if runup < 0 or arr.ndim != 1:
        raise ParameterError("runup must be >= 0 and series one-dimensional")
    window = arr[runup:]
    if window.size == 0:
        raise WindowError(f"empty window: series length {arr.size}, runup {runup}")
    running = None
    if keep_running:
        running = np.cumsum(window) / np.arange(1, window.size + 1)
    return ErgodicAverage(float(np.mean(window)), runup, int(window.size), running)


@dataclass(frozen=True)
class LyapunovEstimate:
    value: float               # nats per step
    steps: int
    runup: int
    floor_hits: int = 0
    diverged_step: int = -1
    log_derivatives: Optional[np.ndarray] = None


DERIVATIVE_FLOOR = 1e-300


def lyapunov_1d(map_derivative: Callable[[float], float], w0: float,
                evolve: Callable[[float], float], steps: int, runup: int = 0,
                floor_eps: float = DERIVATIVE_FLOOR,
                keep_series: bool = False) -> LyapunovEstimate:
    """Mean log |phi'| along the orbit of ``evolve`` started at w0.

    Works for any 1-D map; for gradient descent pass
    evolve = w - eta*l'(w) and map_derivative = 1 - eta*l''(w).
    Derivative magnitudes below floor_eps contribute -inf (counted in
    floor_hits) instead of raising.
    """
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    w = float(w0)
    for _ in range(runup):
        w = evolve(w)
    total = 0.0
    hits = 0
    series = [] if keep_series else None
    for _ in range(steps):
        d = abs(map_derivative(w))
        if d < floor_eps:
            hits += 1
            contrib = float("-inf")
        else:
            contrib = math.log(d)
        total += contrib
        if series is not None:
            series.append(contrib)
        w = evolve(w)
    logs = np.array(series) if series is not None else None
    return LyapunovEstimate(total / steps, steps, runup, hits, -1, logs)


def gmap_gd_lyapunov(s: float, eta: float, w0: float, steps: int, runup: int = 0,
                     boundary: str = "none",
                     radius: float = kernels.DEFAULT_RADIUS) -> LyapunovEstimate:
    """Fast path: Lyapunov exponent of GD on the quadratic-map loss."""
    value, hits, dstep = kernels.gmap_gd_lyapunov(
        s, eta, w0, steps, runup, radius=radius, boundary=boundary)
    return LyapunovEstimate(value, steps, runup, hits, dstep)


def gmap_raw_lyapunov(s: float, w0: float, steps: int,
                      runup: int = 0) -> LyapunovEstimate:
    """Fast path: Lyapunov exponent of the raw quadratic map iteration."""
    value, hits, dstep = kernels.gmap_raw_lyapunov(s, w0, steps, runup)
    return LyapunovEstimate(value, steps, runup, hits, dstep)


def detect_period(samples: Sequence[float], tol: float,
                  q_max: Optional[int] = None) -> Optional[int]:
    """Smallest period q with |x[t+q] - x[t]| < tol for all recorded t.

    Returns None for an aperiodic sample set.  q_max defaults to a quarter
    of the sample count so slow drifts are not misread as long periods.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ParameterError("samples must be non-empty")
    if q_max is None:
        q_max = max(1, arr.size // 4)
    for q in range(1, q_max + 1):
        if np.all(np.abs(arr[q:] - arr[:-q]) < tol):
            return q
    return None


@dataclass
class BifurcationScan:
    """Attractor samples and detected periods over a learning-rate grid."""

    etas: np.ndarray
    samples: list            # [i_eta][j_init] -> ndarray of post-runup values
    periods: list            # [i_eta][j_init] -> int or None
    diverged: np.ndarray     # bool, (n_eta, n_inits)
    n_inits: int
    runup: int
    keep: int
    tol: float
    boundary: str
    master_seed: int

    def consensus_periods(self) -> list:
        """Per-eta period when all non-diverged cells agree, else None."""
        out = []
        for i in range(len(self.etas)):
            ps = {self.periods[i][j] for j in range(self.n_inits)
                  if not self.diverged[i][j]}
            out.append(ps.pop() if len(ps) == 1 else None)
        return out


def _scan_row(args):
    (i_eta, eta, s, n_inits, runup, keep, tol, boundary, radius, master_seed) = args
    samples_row, periods_row, diverged_row = [], [], []
    for j in range(n_inits):
        stream = RngStream(master_seed, substream_id(j, i_eta))
        w0 = float(stream.generator().random())
        tail, dstep = kernels.gmap_gd_tail(s, eta, w0, runup, keep,
                                           radius=radius, boundary=boundary)
        samples_row.append(tail)
        diverged_row.append(dstep >= 0)
        periods_row.append(detect_period(tail, tol) if tail.size else None)
    return samples_row, periods_row, diverged_row


def bifurcation_scan(landscape: QuadraticMapLoss, eta_grid: Sequence[float],
                     n_inits: int, runup: int, keep: int, master_seed: int,
                     tol: float = 1e-8, boundary: str = "wrap",
                     radius: float = kernels.DEFAULT_RADIUS,
                     workers: int = 1) -> BifurcationScan:
    """Attractor scan of GD on the quadratic-map loss over a step-size grid.

    Each (eta, init) cell owns its rng stream, so results are independent of
    execution order.  The default boundary keeps orbits on the map's natural
    domain by wrapping; pass "none" for unconstrained descent with per-cell
    divergence flags, or "reflect" to fold escapes back into [0, 1].
    """
    etas = np.asarray(list(eta_grid), dtype=float)
    if etas.size == 0 or np.any(np.diff(etas) <= 0) or np.any(etas <= 0):
        raise ParameterError("eta grid must be positive and strictly increasing")
    if n_inits < 1:
        raise ParameterError("n_inits must be >= 1")
    jobs = [(i, float(eta), landscape.s, n_inits, runup, keep, tol, boundary,
             radius, master_seed) for i, eta in enumerate(etas)]
    rows = pmap(_scan_row, jobs, workers)
    samples = [r[0] for r in rows]
    periods = [r[1] for r in rows]
    diverged = np.array([r[2] for r in rows], dtype=bool)
    return BifurcationScan(etas, samples, periods, diverged, n_inits,
                           runup, keep, tol, boundary, master_seed)


@dataclass(frozen=True)
class AutocorrSeries:
    lags: np.ndarray
    values: np.ndarray
    mean: float
    guard_triggered: bool


def autocorrelation(series: Sequence[float], runup: int, tau_max: int,
                    guard: Optional[float] = None) -> AutocorrSeries:
    """Normalized product autocorrelation of a loss series.

        C(tau) = |mean_t[x_t * x_{t+tau}] - m^2| / m^2

    with m the mean of the post-runup window; every lag uses that same
    window.  This is deliberately the non-mean-subtracted product form.  If
    m^2 falls below the guard (default 1e-12 * max|x|^2) the unnormalized
    numerator is returned and the guard flag set.
    """
    arr = np.asarray(series, dtype=float)
    if arr.size <= runup + tau_max:
        raise WindowError(
            f"series of length {arr.size} too short for runup {runup} "
            f"+ tau_max {tau_max}")
    window = arr[runup:]
    m = float(np.mean(window))
    if guard is None:
        guard = 1e-12 * float(np.max(np.abs(window))) ** 2
    values = np.empty(tau_max + 1)
    for tau in range(tau_max + 1):
        prod = window[:window.size - tau] * window[tau:]
        values[tau] = abs(float(np.mean(prod)) - m * m)
    guarded = m * m < guard
    if not guarded:
        values /= m * m
    return AutocorrSeries(np.arange(tau_max + 1), values, m, guarded)


@dataclass(frozen=True)
class MixingRateFit:
    rate: float            # per-step multiplier in (0, 1]
    slope: float
    intercept: float
    lags_used: np.ndarray  # lags that survived the positive-value filter


def mixing_rate_fit(series, lag_window: Optional[tuple[int, int]] = None) -> MixingRateFit:
    """Geometric decay rate from a log-linear fit of a positive decay sequence.

    Accepts an AutocorrSeries or any sequence indexed by lag.  Non-positive
    values are filtered out before the fit; at least 3 positive points are
    required.
    """
    if isinstance(series, AutocorrSeries):
        lags, vals = series.lags, series.values
    else:
        vals = np.asarray(series, dtype=float)
        lags = np.arange(vals.size)
    if lag_window is not None:
        lo, hi = lag_window
        mask = (lags >= lo) & (lags <= hi)
        lags, vals = lags[mask], vals[mask]
    pos = vals > 0.0
    lags, vals = lags[pos], vals[pos]
    if lags.size < 3:
        raise WindowError("need at least 3 positive values to fit a decay rate")
    slope, intercept = np.polyfit(lags, np.log(vals), 1)
    rate = min(float(np.exp(slope)), 1.0)
    return MixingRateFit(rate, float(slope), float(intercept), lags)
