"""ergostab: ergodic statistics and stability analysis of learning dynamics.

Treats gradient-based training as a dynamical system and measures its
time-averaged behavior: Lyapunov exponents and bifurcations of 1-D descent,
stability of loss statistics under single-sample dataset swaps, spectral
estimates of loss-space mixing, and the resulting generalization bounds.
"""

__version__ = "0.1.0"

from ergostab.kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
