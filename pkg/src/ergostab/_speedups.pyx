# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for one-dimensional map iteration.

Hot paths only: gradient-descent orbits of the triple-composition quadratic
map family and the per-step log-derivative sums used for Lyapunov exponents.
The pure-Python fallback (_speedups_py) mirrors every expression in the same
evaluation order so both backends produce identical trajectories.
"""

from libc.math cimport fabs, floor, isfinite, log

# boundary codes: 0 unbounded, 1 wrap onto [0,1), 2 reflect into [0,1]
DEF B_NONE = 0
DEF B_WRAP = 1
DEF B_REFLECT = 2


cdef inline double _apply_boundary(double w, int boundary) nogil:
    if boundary == B_WRAP:
        w = w - floor(w)
    elif boundary == B_REFLECT:
        w = w - 2.0 * floor(0.5 * w)
        if w > 1.0:
            w = 2.0 - w
    return w


cdef inline double _gd_step(double s, double eta, double w) nogil:
    cdef double u, v, d
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    d = (s * (2.0 * v - 1.0)) * (s * (2.0 * u - 1.0)) * (s * (2.0 * w - 1.0))
    return w - eta * d


cdef inline double _curvature(double s, double w) nogil:
    # second derivative of the triple composition at w
    cdef double u, v, gp_w, gp_u, gp_v, gpp
    u = 1.0 - s * w * (1.0 - w)
    v = 1.0 - s * u * (1.0 - u)
    gp_w = s * (2.0 * w - 1.0)
    gp_u = s * (2.0 * u - 1.0)
    gp_v = s * (2.0 * v - 1.0)
    gpp = 2.0 * s
    return gpp * gp_u * gp_u * gp_w * gp_w + gp_v * gpp * gp_w * gp_w + gp_v * gp_u * gpp


def gmap_gd_tail(double s, double eta, double w0, long runup, long keep,
                 double radius, int boundary, double[::1] out):
    """Iterate GD on the quadratic-map loss, store the last `keep` iterates.

    Returns the divergence step (counting all steps from 0) or -1.
    """
    cdef double w = w0
    cdef long t
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


def gmap_gd_lyapunov(double s, double eta, double w0, long steps, long runup,
                     double radius, double floor_eps, int boundary):
    """Mean log multiplier of the GD map along an orbit.

    Returns (value, floor_hits, diverged_step).  Derivative magnitudes below
    floor_eps contribute -inf and are counted rather than raised.
    """
    cdef double w = w0
    cdef double total = 0.0
    cdef double deriv
    cdef long t, hits = 0
    for t in range(runup):
        w = _gd_step(s, eta, w)
        w = _apply_boundary(w, boundary)
        if not isfinite(w) or fabs(w) > radius:
            return float("-inf"), 0, t
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


def gmap_raw_lyapunov(double s, double w0, long steps, long runup,
                      double radius, double floor_eps):
    """Mean log |g_s'| along a raw iteration of the quadratic map itself."""
    cdef double w = w0
    cdef double total = 0.0
    cdef double deriv
    cdef long t, hits = 0
    for t in range(runup):
        w = 1.0 - s * w * (1.0 - w)
        if not isfinite(w) or fabs(w) > radius:
            return float("-inf"), 0, t
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


def gmap_gd_loss_series(double s, double eta, double w0, long runup, long length,
                        double radius, int boundary, double[::1] out):
    """Record the loss value along a GD orbit after the runup.

    Returns the divergence step or -1.
    """
    cdef double w = w0
    cdef double u, v
    cdef long t
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
