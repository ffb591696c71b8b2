"""Kernel backend selection and typed wrappers.

The compiled extension is preferred when importable; otherwise the
pure-Python twin is used.  Set ERGOSTAB_KERNELS=python (or =c) to force a
backend explicitly, e.g. for benchmarking.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("ERGOSTAB_KERNELS", "auto").lower()

if _requested in ("python", "py"):
    from ergostab import _speedups_py as _impl
    BACKEND = "python"
elif _requested == "c":
    from ergostab import _speedups as _impl  # ImportError here is deliberate
    BACKEND = "c"
else:
    try:
        from ergostab import _speedups as _impl
        BACKEND = "c"
    except ImportError:
        from ergostab import _speedups_py as _impl
        BACKEND = "python"

BOUNDARY_CODES = {"none": 0, "wrap": 1, "reflect": 2}

DEFAULT_RADIUS = 1e6
DERIVATIVE_FLOOR = 1e-300


def _boundary_code(boundary: str) -> int:
    try:
        return BOUNDARY_CODES[boundary]
    except KeyError:
        raise ValueError(f"unknown boundary mode {boundary!r}; "
                         f"expected one of {sorted(BOUNDARY_CODES)}") from None


def gmap_gd_tail(s: float, eta: float, w0: float, runup: int, keep: int,
                 radius: float = DEFAULT_RADIUS,
                 boundary: str = "none") -> tuple[np.ndarray, int]:
    """Last `keep` iterates of GD on the quadratic-map loss.

    Returns (tail, diverged_step); diverged_step is -1 for a bounded orbit
    and the tail is truncated at the divergence otherwise.
    """
    out = np.empty(keep, dtype=np.float64)
    dstep = _impl.gmap_gd_tail(s, eta, w0, int(runup), int(keep),
                               radius, _boundary_code(boundary), out)
    if dstep >= 0:
        out = out[:max(0, dstep - runup)]
    return out, dstep


def gmap_gd_lyapunov(s: float, eta: float, w0: float, steps: int, runup: int,
                     radius: float = DEFAULT_RADIUS,
                     floor_eps: float = DERIVATIVE_FLOOR,
                     boundary: str = "none") -> tuple[float, int, int]:
    """(mean log |phi'|, derivative-floor hits, diverged_step) for the GD map."""
    return _impl.gmap_gd_lyapunov(s, eta, w0, int(steps), int(runup),
                                  radius, floor_eps, _boundary_code(boundary))


def gmap_raw_lyapunov(s: float, w0: float, steps: int, runup: int,
                      radius: float = DEFAULT_RADIUS,
                      floor_eps: float = DERIVATIVE_FLOOR) -> tuple[float, int, int]:
    """(mean log |g_s'|, derivative-floor hits, diverged_step) for raw iteration."""
    return _impl.gmap_raw_lyapunov(s, w0, int(steps), int(runup), radius, floor_eps)


def gmap_gd_loss_series(s: float, eta: float, w0: float, runup: int, length: int,
                        radius: float = DEFAULT_RADIUS,
                        boundary: str = "none") -> tuple[np.ndarray, int]:
    """Loss values along a GD orbit after the runup; truncated on divergence."""
    out = np.empty(length, dtype=np.float64)
    dstep = _impl.gmap_gd_loss_series(s, eta, w0, int(runup), int(length),
                                      radius, _boundary_code(boundary), out)
    if dstep >= 0:
        out = out[:max(0, dstep - runup)]
    return out, dstep
