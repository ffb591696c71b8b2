"""Pure-Python twin of the compiled kernels.

Selected at import time by ergostab.kernels when the C extension is absent
or disabled.  Expressions and their evaluation order match _speedups.pyx
exactly so the two backends trace identical orbits.
"""

from math import fabs, floor, isfinite, log

_B_NONE, _B_WRAP, _B_REFLECT = 0, 1, 2
_NEG_INF = float("-inf")


def _apply_boundary(w, boundary):
    if boundary == _B_WRAP:
        w = w - floor(w)
    elif boundary == _B_REFLECT:
        w = w - 2.0 * floor(0.5 * w)
        if w > 1.0:
            w = 2.0 - w
    return w


def _gd_step(s, eta, w):
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    d = (s * (2.0 * v - 1.0)) * (s * (2.0 * u - 1.0)) * (s * (2.0 * w - 1.0))
    return w - eta * d


def _curvature(s, w):
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    gp_w = s * (2.0 * w - 1.0)
    gp_u = s * (2.0 * u - 1.0)
    gp_v = s * (2.0 * v - 1.0)
    gpp = 2.0 * s
    return gpp * gp_u * gp_u * gp_w * gp_w + gp_v * gpp * gp_w * gp_w + gp_v * gp_u * gpp


def gmap_gd_tail(s, eta, w0, runup, keep, radius, boundary, out):
    w = w0
    for t in range(runup):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return t
    for t in range(keep):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return runup + t
        out[t] = w
    return -1


def gmap_gd_lyapunov(s, eta, w0, steps, runup, radius, floor_eps, boundary):
    w = w0
    total = 0.0
    hits = 0
    for t in range(runup):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return _NEG_INF, 0, t
    for t in range(steps):
        deriv = fabs(1.0 - eta * _curvature(s, w))
        if deriv < floor_eps:
            hits += 1
            total = total - float("inf")
        else:
            total += log(deriv)
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return total / steps, hits, runup + t
    return total / steps, hits, -1


def gmap_raw_lyapunov(s, w0, steps, runup, radius, floor_eps):
    w = w0
    total = 0.0
    hits = 0
    for t in range(runup):
        w = 1.0 - s * w * (1.0 - w)
        if not isfinite(w) or fabs(w) > radius:
            return _NEG_INF, 0, t
    for t in range(steps):
        deriv = fabs(s * (2.0 * w - 1.0))
        if deriv < floor_eps:
            hits += 1
            total = total - float("inf")
        else:
            total += log(deriv)
        w = 1.0 - s * w * (1.0 - w)
        if not isfinite(w) or fabs(w) > radius:
            return total / steps, hits, runup + t
    return total / steps, hits, -1


def gmap_gd_loss_series(s, eta, w0, runup, length, radius, boundary, out):
    w = w0
    for t in range(runup):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return t
    for t in range(length):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return runup + t
        u = 1.0 - s * w * (1.0 - w)
        v = 1.0 - s * u * (1.0 - u)
        out[t] = 1.0 - s * v * (1.0 - v)
    return -1
