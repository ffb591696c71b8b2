"""Loss models with analytic gradients.

Three families:

* ``QuadraticMapLoss`` -- a one-dimensional, smooth, non-convex loss built by
  composing the quadratic interval map ``g_s(w) = 1 - s*w*(1-w)`` with itself
  three times.  Its curvature is available in closed form, which keeps
  learning-rate thresholds noise-free.
* ``LinearizedModel`` -- affine training dynamics of a model linearized at a
  reference point (kernel regression / tangent-kernel regime).
* ``ToyNetLandscape`` -- a small two-layer network on synthetic data with
  exact backprop gradients; the desk-scale stand-in for large-model runs.

Synthetic datasets with label corruption and single-sample resampling live
here as well.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ergostab.errors import ParameterError, SingularKernelError
from ergostab.rng import RngStream


class InstabilityWarning(UserWarning):
    """Linear dynamics is not a contraction; iteration will not converge."""


# ---------------------------------------------------------------------------
# quadratic-map family
# ---------------------------------------------------------------------------

def gmap_eval(s: float, w: float) -> float:
    """The quadratic interval map ``1 - s*w*(1-w)``."""
    return 1.0 - s * w * (1.0 - w)


def gmap_loss(s: float, w: float) -> float:
    """Triple self-composition of the quadratic map."""
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    return 1.0 - s * v * (1.0 - v)


def gmap_grad(s: float, w: float) -> float:
    """Exact derivative of the triple composition (chain rule)."""
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    return (s * (2.0 * v - 1.0)) * (s * (2.0 * u - 1.0)) * (s * (2.0 * w - 1.0))


def gmap_curvature(s: float, w: float) -> float:
    """Exact second derivative of the triple composition.

    With u = g(w), v = g(u) and g'' = 2s:

        l'' = g''(v) g'(u)^2 g'(w)^2 + g'(v) g''(u) g'(w)^2 + g'(v) g'(u) g''(w)
    """
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    gp_w = s * (2.0 * w - 1.0)
    gp_u = s * (2.0 * u - 1.0)
    gp_v = s * (2.0 * v - 1.0)
    gpp = 2.0 * s
    return gpp * gp_u * gp_u * gp_w * gp_w + gp_v * gpp * gp_w * gp_w + gp_v * gp_u * gpp


def gmap_sharpness(s: float, w: float) -> float:
    """Sharpness |l''(w)|; 2/sharpness is the local step-size stability limit."""
    return abs(gmap_curvature(s, w))


def gmap_sharpness_sup(s: float, grid_size: int = 4001) -> float:
    """Supremum of the sharpness over a fine grid on [0, 1]."""
    grid = np.linspace(0.0, 1.0, grid_size)
    return max(gmap_sharpness(s, w) for w in grid)


@dataclass(frozen=True)
class QuadraticMapLoss:
    """Data-free 1-D landscape; the sample argument of loss/grad is ignored."""

    s: float

    def __post_init__(self):
        if not 0.0 < self.s <= 4.0:
            raise ParameterError(f"family parameter s={self.s} outside (0, 4]")

    @property
    def dim(self) -> int:
        return 1

    def loss(self, z, w) -> float:
        return gmap_loss(self.s, float(w[0]))

    def grad(self, z, w) -> np.ndarray:
        return np.array([gmap_grad(self.s, float(w[0]))])

    def mean_loss(self, X, Y, w) -> float:
        return gmap_loss(self.s, float(w[0]))

    def mean_grad(self, X, Y, w) -> np.ndarray:
        return np.array([gmap_grad(self.s, float(w[0]))])

    def per_sample_losses(self, X, Y, w) -> np.ndarray:
        n = 1 if X is None else len(X)
        return np.full(n, gmap_loss(self.s, float(w[0])))


# ---------------------------------------------------------------------------
# linearized / tangent-kernel model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearizedModel:
    """Affine weight dynamics of a model linearized at ``reference``.

    ``features`` holds one gradient row per training point (n x d_w); the
    induced update is w <- A w + b with A = I - eta F^T F.
    """

    features: np.ndarray
    labels: np.ndarray
    reference: np.ndarray
    eta: float

    def __post_init__(self):
        F = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        r = np.asarray(self.reference, dtype=float)
        if F.ndim != 2 or y.shape != (F.shape[0],) or r.shape != (F.shape[1],):
            raise ParameterError(
                f"inconsistent shapes: features {F.shape}, labels {y.shape}, "
                f"reference {r.shape}")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "reference", r)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def kernel(self) -> np.ndarray:
        """Empirical kernel F F^T (n x n)."""
        return self.features @ self.features.T

    def kernel_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.kernel())


def linearized_dynamics(model: LinearizedModel) -> tuple[np.ndarray, np.ndarray]:
    """Affine update (A, b) with A = I - eta F^T F, b = eta (F^T F w_r + F^T y)."""
    F = model.features
    gram = F.T @ F
    A = np.eye(model.dim) - model.eta * gram
    b = model.eta * (gram @ model.reference + F.T @ model.labels)
    return A, b


def ntk_fixed_point(model: LinearizedModel, ridge: float = 0.0) -> np.ndarray:
    """Fixed point of the affine dynamics: reference + min-norm interpolant.

    Solves F^T (F F^T + ridge I)^{-1} y.  With ridge 0 the result exactly
    interpolates the labels; a rank-deficient kernel raises instead of being
    silently regularized.
    """
    if ridge < 0.0:
        raise ParameterError("ridge must be nonnegative")
    K = model.kernel()
    theta = np.linalg.eigvalsh(K)
    if ridge == 0.0 and theta[-1] > 0 and theta[0] < 1e-12 * theta[-1]:
        raise SingularKernelError(
            f"kernel numerically rank-deficient (theta_min/theta_max = "
            f"{theta[0] / theta[-1]:.2e}); pass ridge > 0 to regularize")
    try:
        coef = np.linalg.solve(K + ridge * np.eye(model.n), model.labels)
    except np.linalg.LinAlgError as exc:
        raise SingularKernelError(str(exc)) from exc
    return model.reference + model.features.T @ coef


def ntk_mixing_rate(model: LinearizedModel) -> float:
    """Convergence rate 1 - eta*theta_min of the affine dynamics.

    theta_min is the smallest eigenvalue of the kernel F F^T.  The rate is
    the spectral radius of A restricted to the subspace actually excited
    when iteration starts at the reference point (the orthogonal complement
    is pointwise fixed).  A warning is attached when that radius reaches 1,
    i.e. when eta*theta_max >= 2 or the kernel has a zero direction.
    """
    theta = model.kernel_eigenvalues()
    theta_min, theta_max = theta[0], theta[-1]
    rate = 1.0 - model.eta * theta_min
    radius = max(abs(1.0 - model.eta * theta_min), abs(1.0 - model.eta * theta_max))
    if radius >= 1.0:
        warnings.warn(
            f"linear dynamics is not a contraction (restricted spectral "
            f"radius {radius:.6g} >= 1); iteration will not converge",
            InstabilityWarning, stacklevel=2)
    return rate


def linear_orbit(A: np.ndarray, b: np.ndarray, w0: np.ndarray, steps: int) -> np.ndarray:
    """Iterate w <- A w + b; returns the (steps+1) x d array of iterates."""
    out = np.empty((steps + 1, len(w0)))
    out[0] = w0
    w = np.array(w0, dtype=float)
    for t in range(steps):
        w = A @ w + b
        out[t + 1] = w
    return out


# ---------------------------------------------------------------------------
# toy two-layer network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyNetLandscape:
    """Two-layer scalar-output network with exact backprop gradients.

    The flat weight vector is laid out as [W1 (hidden x d_in), b1, W2, b2].
    """

    d_in: int
    hidden: int
    activation: str = "tanh"
    loss_kind: str = "squared"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.loss_kind not in ("squared", "logistic"):
            raise ParameterError(f"unknown loss kind {self.loss_kind!r}")

    @property
    def dim(self) -> int:
        return self.hidden * self.d_in + self.hidden + self.hidden + 1

    def unpack(self, w: np.ndarray):
        h, d = self.hidden, self.d_in
        if w.shape != (self.dim,):
            raise ParameterError(f"weight vector has shape {w.shape}, "
                                 f"layout needs ({self.dim},)")
        W1 = w[:h * d].reshape(h, d)
        b1 = w[h * d:h * d + h]
        W2 = w[h * d + h:h * d + 2 * h]
        b2 = w[-1]
        return W1, b1, W2, b2

    def random_init(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Fan-in scaled Gaussian weights, zero biases."""
        h, d = self.hidden, self.d_in
        W1 = rng.standard_normal((h, d)) * (scale / np.sqrt(d))
        W2 = rng.standard_normal(h) * (scale / np.sqrt(h))
        w = np.zeros(self.dim)
        w[:h * d] = W1.ravel()
        w[h * d + h:h * d + 2 * h] = W2
        return w

    def predict(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(w)
        pre = X @ W1.T + b1
        z = np.tanh(pre) if self.activation == "tanh" else np.maximum(pre, 0.0)
        return z @ W2 + b2

    def per_sample_losses(self, X, Y, w) -> np.ndarray:
        f = self.predict(X, w)
        if self.loss_kind == "squared":
            return 0.5 * (f - Y) ** 2
        return np.logaddexp(0.0, -Y * f)

    def mean_loss(self, X, Y, w) -> float:
        return float(np.mean(self.per_sample_losses(X, Y, w)))

    def mean_grad(self, X, Y, w) -> np.ndarray:
        """Mean gradient over the batch, backpropagated exactly."""
        W1, b1, W2, b2 = self.unpack(w)
        m = len(X)
        pre = X @ W1.T + b1
        if self.activation == "tanh":
            z = np.tanh(pre)
            dz = 1.0 - z ** 2
        else:
            z = np.maximum(pre, 0.0)
            dz = (pre > 0.0).astype(float)
        f = z @ W2 + b2
        if self.loss_kind == "squared":
            g_out = f - Y
        else:
            g_out = -Y / (1.0 + np.exp(Y * f))
        dW2 = (z.T @ g_out) / m
        db2 = float(np.mean(g_out))
        back = np.outer(g_out, W2) * dz
        dW1 = (back.T @ X) / m
        db1 = back.mean(axis=0)
        g = np.empty(self.dim)
        h, d = self.hidden, self.d_in
        g[:h * d] = dW1.ravel()
        g[h * d:h * d + h] = db1
        g[h * d + h:h * d + 2 * h] = dW2
        g[-1] = db2
        return g

    def loss(self, z, w) -> float:
        x, y = z
        return float(self.per_sample_losses(np.atleast_2d(x), np.array([y]), w)[0])

    def grad(self, z, w) -> np.ndarray:
        x, y = z
        return self.mean_grad(np.atleast_2d(x), np.array([y]), w)


def toynet_loss(landscape: ToyNetLandscape, z, w) -> float:
    return landscape.loss(z, w)


def toynet_grad(landscape: ToyNetLandscape, z, w) -> np.ndarray:
    return landscape.grad(z, w)


# ---------------------------------------------------------------------------
# synthetic corrupted-label data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Teacher:
    """Data-generating rule: linear regressor or sign classifier."""

    kind: str  # "linear" or "sign"
    weights: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "sign"):
            raise ParameterError(f"unknown teacher kind {self.kind!r}")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def clean_labels(self, X: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        raw = X @ self.weights
        if self.kind == "sign":
            return np.where(raw >= 0.0, 1.0, -1.0)
        return raw + self.noise_std * gen.standard_normal(len(X))

    def corrupt(self, y: np.ndarray, flip: np.ndarray,
                gen: np.random.Generator) -> np.ndarray:
        """Apply corruption exactly where ``flip`` is set.

        Sign labels are flipped; regression labels are replaced by a label
        drawn independently of the input (fresh teacher sample).
        """
        out = y.copy()
        if self.kind == "sign":
            out[flip] = -out[flip]
        else:
            k = int(np.sum(flip))
            fresh_x = gen.standard_normal((k, len(self.weights)))
            out[flip] = self.clean_labels(fresh_x, gen)
        return out


@dataclass(frozen=True)
class SyntheticDataset:
    """n i.i.d. samples from a teacher, labels corrupted with probability p."""

    X: np.ndarray
    y: np.ndarray
    clean_y: np.ndarray
    corrupted: np.ndarray
    p: float
    seed: int
    teacher: Teacher

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int):
        return self.X[i], float(self.y[i])

    def replace(self, k: int, x: np.ndarray, y: float, clean_y: float,
                corrupted: bool) -> "SyntheticDataset":
        """Copy with sample k swapped out; every other index is untouched."""
        if not 0 <= k < self.n:
            raise ParameterError(f"index {k} out of range for n={self.n}")
        X = self.X.copy()
        ys = self.y.copy()
        cl = self.clean_y.copy()
        co = self.corrupted.copy()
        X[k], ys[k], cl[k], co[k] = x, y, clean_y, corrupted
        return SyntheticDataset(X, ys, cl, co, self.p, self.seed, self.teacher)


# dedicated rng substreams so the same seed couples X and flip draws across p
_DS_INPUTS, _DS_LABELS, _DS_FLIPS, _DS_TEACHER = 0, 1, 2, 3


def make_dataset(n: int, d: int, p: float, teacher: Teacher | None = None,
                 seed: int = 0) -> SyntheticDataset:
    """Draw a corrupted-label dataset, fully determined by the seed.

    Inputs are standard normal; each label is independently corrupted with
    probability p.  With a fixed seed the inputs, clean labels and corruption
    uniforms are shared across different p, so raising p only flips more
    labels.
    """
    if not 0.0 <= p <= 0.5:
        raise ParameterError(f"corruption probability p={p} outside [0, 0.5]")
    if teacher is None:
        tw = RngStream(seed, _DS_TEACHER).generator().standard_normal(d)
        teacher = Teacher("sign", tw / np.linalg.norm(tw))
    X = RngStream(seed, _DS_INPUTS).generator().standard_normal((n, d))
    label_gen = RngStream(seed, _DS_LABELS).generator()
    clean = teacher.clean_labels(X, label_gen)
    flip_gen = RngStream(seed, _DS_FLIPS).generator()
    flip = flip_gen.random(n) < p
    y = teacher.corrupt(clean, flip, flip_gen)
    return SyntheticDataset(X, y, clean, flip, p, seed, teacher)


def resample_point(dataset: SyntheticDataset, gen: np.random.Generator):
    """One fresh draw (x, y, clean_y, corrupted) from the dataset's generator,
    including its corruption law."""
    x = gen.standard_normal(dataset.d)
    clean = float(dataset.teacher.clean_labels(x[None, :], gen)[0])
    flip = bool(gen.random() < dataset.p)
    y = dataset.teacher.corrupt(np.array([clean]), np.array([flip]), gen)[0]
    return x, float(y), clean, flip


def dataset_to_json(dataset: SyntheticDataset) -> str:
    """Serialize to a single JSON document; floats round-trip bit-exactly."""
    doc = {
        "meta": {
            "n": dataset.n,
            "d": dataset.d,
            "p": dataset.p,
            "seed": dataset.seed,
            "teacher": {
                "kind": dataset.teacher.kind,
                "weights": dataset.teacher.weights.tolist(),
                "noise_std": dataset.teacher.noise_std,
            },
        },
        "samples": [
            [*dataset.X[i].tolist(), float(dataset.y[i]),
             float(dataset.clean_y[i]), bool(dataset.corrupted[i])]
            for i in range(dataset.n)
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def dataset_from_json(text: str) -> SyntheticDataset:
    doc = json.loads(text)
    meta = doc["meta"]
    t = meta["teacher"]
    teacher = Teacher(t["kind"], np.array(t["weights"]), t["noise_std"])
    n, d = meta["n"], meta["d"]
    X = np.empty((n, d))
    y = np.empty(n)
    clean = np.empty(n)
    corrupted = np.empty(n, dtype=bool)
    for i, row in enumerate(doc["samples"]):
        X[i] = row[:d]
        y[i] = row[d]
        clean[i] = row[d + 1]
        corrupted[i] = row[d + 2]
    return SyntheticDataset(X, y, clean, corrupted, meta["p"], meta["seed"], teacher)


# ---------------------------------------------------------------------------
# data-Lipschitz estimate for the gradient
# ---------------------------------------------------------------------------

def grad_data_lipschitz(landscape, weight_sampler, data_sampler, trials: int,
                        points_per_trial: int = 32,
                        rng: np.random.Generator | None = None) -> float:
    """Sampled lower bound on the Lipschitz constant of z -> grad l(z, w).

    For each trial a weight is sampled and all gradient-difference ratios
    ||g(z) - g(z')|| / ||z - z'|| over a batch of sampled data points are
    maximized.  The true constant is at least the returned value; reports
    should label it a lower bound.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if rng is None:
        rng = RngStream(0, 0).generator()
    best = 0.0
    for _ in range(trials):
        w = weight_sampler(rng)
        zs = [data_sampler(rng) for _ in range(points_per_trial)]
        flat = np.array([np.concatenate([np.atleast_1d(x), [y]]) for x, y in zs])
        grads = np.array([landscape.grad(z, w) for z in zs])
        dz = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
        dg = np.linalg.norm(grads[:, None, :] - grads[None, :, :], axis=2)
        mask = dz > 1e-12  # degenerate pairs are skipped
        if np.any(mask):
            best = max(best, float(np.max(dg[mask] / dz[mask])))
    return best
