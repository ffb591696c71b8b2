"""Finite-state surrogate of the loss-space transition operator.

The loss process of a learning orbit is generally not Markovian; the
binned transition matrix built here is a Markov *surrogate* used to
estimate mixing rates, and is labeled as such in serialized output.
Also contains the exact observable-operator spectrum of affine dynamics
w <- A w + b: the eigenvalues of A with eigenfunctions
f_i(w) = v_i.w + v_i.b/(theta_i - 1) for left eigenvectors v_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ergostab.errors import ParameterError, WindowError

ROW_SUM_TOL = 1e-9
DENSE_EIG_LIMIT = 512


@dataclass(frozen=True)
class LossPartition:
    """Uniform binning of a loss interval; out-of-range values clamp."""

    lo: float
    hi: float
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ParameterError("partition needs at least 2 bins")
        if not self.hi > self.lo:
            raise ParameterError("partition interval is degenerate")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.k + 1)

    @classmethod
    def from_series(cls, series: np.ndarray, k: int = 64,
                    margin: float = 0.05) -> "LossPartition":
        """Cover [min, max] of the observed values with a relative margin."""
        lo, hi = float(np.min(series)), float(np.max(series))
        if hi == lo:
            pad = max(abs(lo), 1.0) * 1e-6
            return cls(lo - pad, hi + pad, k)
        pad = margin * (hi - lo)
        return cls(lo - pad, hi + pad, k)

    def bin_index(self, values: np.ndarray) -> tuple[np.ndarray, int]:
        """Bin of each value plus a count of clamped (out-of-range) values."""
        v = np.asarray(values, dtype=float)
        clamped = int(np.sum((v < self.lo) | (v > self.hi)))
        scaled = (v - self.lo) / (self.hi - self.lo) * self.k
        idx = np.clip(np.floor(scaled).astype(int), 0, self.k - 1)
        return idx, clamped


@dataclass
class TransitionMatrix:
    """Row-stochastic empirical transition matrix on loss bins."""

    probs: np.ndarray
    counts: np.ndarray
    partition: LossPartition
    smoothing: float
    sample_count: int
    uniform_rows: list[int]      # rows with no observed transitions
    clamped: int
    label: str = "markov-surrogate"

    @property
    def k(self) -> int:
        return self.probs.shape[0]


def ulam_transition(series: Sequence[float], runup: int = 0,
                    partition: Optional[LossPartition] = None, k: int = 64,
                    smoothing: float = 0.0) -> TransitionMatrix:
    """Count bin-to-bin transitions of a loss series and normalize rows.

    Rows with zero counts become uniform and are flagged.  Additive
    smoothing (default 0) is applied before normalization.
    """
    if smoothing < 0.0:
        raise ParameterError("smoothing must be nonnegative")
    arr = np.asarray(series, dtype=float)[runup:]
    if arr.size < 2:
        raise WindowError("need at least 2 post-runup values to count transitions")
    if partition is None:
        partition = LossPartition.from_series(arr, k=k)
    bins, clamped = partition.bin_index(arr)
    K = partition.k
    counts = np.zeros((K, K))
    np.add.at(counts, (bins[:-1], bins[1:]), 1.0)
    probs = counts + smoothing
    row_sums = probs.sum(axis=1)
    uniform_rows = [int(i) for i in np.nonzero(row_sums == 0.0)[0]]
    for i in uniform_rows:
        probs[i] = 1.0 / K
        row_sums[i] = 1.0
    probs /= row_sums[:, None]
    return TransitionMatrix(probs, counts, partition, smoothing,
                            int(arr.size), uniform_rows, clamped)


@dataclass(frozen=True)
class SpectralReport:
    moduli: np.ndarray          # sorted descending
    eigenvalues: np.ndarray     # complex, same order as moduli
    lambda2: float
    gap: float
    stationary: np.ndarray


def _as_stochastic(matrix) -> np.ndarray:
    P = matrix.probs if isinstance(matrix, TransitionMatrix) else np.asarray(matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ParameterError("transition matrix must be square")
    if np.any(P < -ROW_SUM_TOL):
        raise ParameterError("transition matrix has negative entries")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise ParameterError("rows do not sum to 1; not a stochastic matrix")
    return P


def spectral_gap(matrix) -> SpectralReport:
    """Full eigen-solve of a (small) row-stochastic matrix.

    lambda2 is the second-largest eigenvalue modulus; the stationary
    distribution is the normalized leading left eigenvector.
    """
    P = _as_stochastic(matrix)
    if P.shape[0] > DENSE_EIG_LIMIT:
        raise ParameterError(
            f"dense eigen-solve limited to {DENSE_EIG_LIMIT} bins; got {P.shape[0]}")
    eigvals = np.linalg.eigvals(P)
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    moduli = np.abs(eigvals)
    lambda2 = float(moduli[1]) if len(moduli) > 1 else 0.0
    lvals, lvecs = np.linalg.eig(P.T)
    lead = int(np.argmin(np.abs(lvals - 1.0)))
    pi = np.real(lvecs[:, lead])
    pi = np.clip(pi if pi.sum() >= 0 else -pi, 0.0, None)
    pi /= pi.sum()
    return SpectralReport(moduli, eigvals, lambda2, 1.0 - lambda2, pi)


@dataclass(frozen=True)
class KoopmanMode:
    """One observable-operator mode of affine dynamics.

    For eigenvalue 1 the affine offset is singular; such modes carry
    defined=False and no offset rather than raising.
    """

    eigenvalue: float
    left_vector: np.ndarray
    offset: Optional[float]
    defined: bool

    def evaluate(self, w: np.ndarray) -> float:
        if not self.defined:
            raise ParameterError("eigenfunction undefined for unit eigenvalue")
        return float(self.left_vector @ w + self.offset)


def koopman_spectrum_linear(A: np.ndarray, b: np.ndarray,
                            unit_tol: float = 1e-9) -> list[KoopmanMode]:
    """Eigenvalues of A with the induced affine eigenfunctions.

    Each mode satisfies f(A w + b) = theta * f(w) with
    f(w) = v.w + v.b/(theta - 1); verified by the residual tests.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
        raise ParameterError("need square A and matching offset vector")
    symmetric = np.allclose(A, A.T, atol=1e-12)
    if symmetric:
        theta, V = np.linalg.eigh(A)
        left = V.T            # orthonormal eigenvectors are their own left set
    else:
        theta_c, V = np.linalg.eig(A)
        if np.max(np.abs(np.imag(theta_c))) > 1e-12:
            raise ParameterError("complex spectrum; only real-diagonalizable A supported")
        theta = np.real(theta_c)
        left = np.linalg.inv(np.real(V))
    modes = []
    for i in range(len(theta)):
        v = left[i]
        if abs(theta[i] - 1.0) < unit_tol:
            modes.append(KoopmanMode(float(theta[i]), v, None, False))
        else:
            offset = float(v @ b / (theta[i] - 1.0))
            modes.append(KoopmanMode(float(theta[i]), v, offset, True))
    modes.sort(key=lambda m: -abs(m.eigenvalue))
    return modes


def tv_convergence_curve(matrix, initial: np.ndarray, steps: int) -> np.ndarray:
    """Total-variation distance to the stationary law after 0..steps steps."""
    P = _as_stochastic(matrix)
    mu = np.asarray(initial, dtype=float)
    if mu.shape != (P.shape[0],) or np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
        raise ParameterError("initial must be a distribution over the bins")
    pi = spectral_gap(P).stationary
    out = np.empty(steps + 1)
    cur = mu.copy()
    for t in range(steps + 1):
        out[t] = 0.5 * float(np.abs(cur - pi).sum())
        cur = cur @ P
    return out
