"""Learning algorithms as (possibly random) dynamical systems on weight space.

The update map is heavy-ball SGD/GD:

    v' = momentum * v - eta * g_batch
    w' = w + v'

where g_batch is the mean gradient over a uniformly drawn batch of m sample
indices (the full set for GD).  With momentum 0 this is the plain step
w' = w - (eta/m) * sum of per-sample gradients.

Orbits record observables after a discarded runup; divergence (non-finite
entries or weight norm beyond the configured radius) flags the record
instead of raising, so sweeps survive individual blow-ups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ergostab.errors import DivergenceError, ParameterError
from ergostab.parallel import pmap
from ergostab.rng import RngStream


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float
    momentum: float = 0.0
    mode: str = "gd"                 # "gd" or "sgd"
    batch_size: Optional[int] = None  # required for sgd; must equal n for gd
    divergence_radius: float = 1e6

    def __post_init__(self):
        if self.eta < 0.0:
            raise ParameterError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.mode not in ("gd", "sgd"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.divergence_radius <= 0.0:
            raise ParameterError("divergence radius must be positive")
        if self.mode == "sgd" and (self.batch_size is None or self.batch_size < 1):
            raise ParameterError("sgd requires batch_size >= 1")

    def resolve_batch_size(self, n: int) -> int:
        if self.mode == "gd":
            if self.batch_size is not None and self.batch_size != n:
                raise ParameterError(
                    f"gd uses the full batch; batch_size {self.batch_size} != n {n}")
            return n
        if self.batch_size > n:
            raise ParameterError(f"batch_size {self.batch_size} exceeds n {n}")
        return self.batch_size


@dataclass(frozen=True)
class OrbitSchedule:
    runup: int
    length: int
    stride: int = 0   # 0: keep no weight snapshots; k>0: every k-th post-runup step

    def __post_init__(self):
        if self.runup < 0 or self.length < 0 or self.stride < 0:
            raise ParameterError("schedule fields must be nonnegative")


@dataclass
class OrbitRecord:
    """Observable time series produced by iterating the update map once."""

    runup: int
    length: int
    stride: int
    observable_series: dict[str, np.ndarray]
    weight_snapshots: Optional[np.ndarray]
    diverged: bool = False
    diverged_step: Optional[int] = None

    def recorded_steps(self) -> int:
        if not self.observable_series:
            return 0
        return len(next(iter(self.observable_series.values())))


def draw_batch(n: int, m: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform m-subset of {0..n-1}, returned sorted.

    Any fixed index lands in the batch with probability m/n.
    """
    if m < 1 or m > n:
        raise ParameterError(f"batch size m={m} outside 1..n={n}")
    if m == n:
        return np.arange(n)
    idx = gen.choice(n, size=m, replace=False)
    idx.sort()
    return idx


def _check_weights(w: np.ndarray, radius: float, step: Optional[int]):
    if not np.all(np.isfinite(w)) or float(np.linalg.norm(w)) > radius:
        raise DivergenceError(step)


def step(w: np.ndarray, velocity: np.ndarray, landscape, trainset,
         config: OptimizerConfig, batch: np.ndarray,
         step_index: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """One heavy-ball update; raises DivergenceError on blow-up."""
    if trainset is None:
        Xb = Yb = None
    else:
        Xb, Yb = trainset.X[batch], trainset.y[batch]
    g = landscape.mean_grad(Xb, Yb, w)
    v_next = config.momentum * velocity - config.eta * g
    w_next = w + v_next
    _check_weights(w_next, config.divergence_radius, step_index)
    return w_next, v_next


def run_orbit(w0: np.ndarray, landscape, trainset, config: OptimizerConfig,
              schedule: OrbitSchedule,
              observables: Mapping[str, Callable[[np.ndarray], float]],
              rng: Optional[RngStream] = None) -> OrbitRecord:
    """Iterate the update map and record observables after the runup.

    Observable callables receive the weight vector and may return a scalar
    or a fixed-length 1-D array.  Divergence truncates every series at the
    same step and flags the record; it does not raise.
    """
    w = np.array(w0, dtype=float)
    v = np.zeros_like(w)
    n = trainset.n if trainset is not None else 1
    m = config.resolve_batch_size(n)
    gen = rng.generator() if rng is not None else None
    if config.mode == "sgd" and gen is None:
        raise ParameterError("sgd needs an RngStream for batch draws")
    full = np.arange(n)

    series: dict[str, list] = {name: [] for name in observables}
    snapshots: list[np.ndarray] = []
    diverged = False
    diverged_step = None

    total = schedule.runup + schedule.length
    for t in range(1, total + 1):
        batch = full if config.mode == "gd" else draw_batch(n, m, gen)
        try:
            w, v = step(w, v, landscape, trainset, config, batch, step_index=t)
        except DivergenceError as exc:
            diverged = True
            diverged_step = exc.step
            break
        if t > schedule.runup:
            k = t - schedule.runup - 1
            for name, fn in observables.items():
                series[name].append(np.asarray(fn(w), dtype=float))
            if schedule.stride > 0 and k % schedule.stride == 0:
                snapshots.append(w.copy())

    packed = {name: np.array(vals) for name, vals in series.items()}
    snap = np.array(snapshots) if snapshots else None
    return OrbitRecord(schedule.runup, schedule.length, schedule.stride,
                       packed, snap, diverged, diverged_step)


# --- picklable observable factories ---------------------------------------

@dataclass(frozen=True)
class TrainLoss:
    """Mean loss over the training set."""
    landscape: object
    trainset: object

    def __call__(self, w):
        return self.landscape.mean_loss(self.trainset.X, self.trainset.y, w)


@dataclass(frozen=True)
class HeldoutLoss:
    """Mean loss over a fixed held-out set."""
    landscape: object
    X: np.ndarray
    Y: np.ndarray

    def __call__(self, w):
        return self.landscape.mean_loss(self.X, self.Y, w)


@dataclass(frozen=True)
class ProbeLosses:
    """Per-probe loss vector; one orbit pass evaluates all probes."""
    landscape: object
    X: np.ndarray
    Y: np.ndarray

    def __call__(self, w):
        return self.landscape.per_sample_losses(self.X, self.Y, w)


@dataclass(frozen=True)
class WeightCoordinate:
    index: int = 0

    def __call__(self, w):
        return w[self.index]


@dataclass(frozen=True)
class WeightNorm:
    def __call__(self, w):
        return np.linalg.norm(w)


def _ensemble_worker(args):
    i, w0, landscape, trainset, config, schedule, observables, master_seed = args
    return run_orbit(w0, landscape, trainset, config, schedule, observables,
                     rng=RngStream(master_seed, stream_id=i))


def run_ensemble(inits: Sequence[np.ndarray], landscape, trainset,
                 config: OptimizerConfig, schedule: OrbitSchedule,
                 observables, master_seed: int,
                 workers: int = 1) -> list[OrbitRecord]:
    """One orbit per initialization; orbit i draws from stream id i.

    Results are identical for any worker count and ordered like the inputs.
    """
    if len(inits) == 0:
        raise ParameterError("ensemble needs at least one initialization")
    jobs = [(i, w0, landscape, trainset, config, schedule, observables, master_seed)
            for i, w0 in enumerate(inits)]
    return pmap(_ensemble_worker, jobs, workers)
