"""Adaptive Gauss-Legendre quadrature for positive integrands given in log form.

The integrand is supplied as ``logf(x)`` (vectorized) so that integrals whose
values over- or underflow double precision can still be computed; the result
is returned as a log as well.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive refinement failed to reach the requested tolerance."""


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _logsumexp_weighted(logv, w):
    m = np.max(logv)
    if not np.isfinite(m):
        return -math.inf
    return m + math.log(np.sum(w * np.exp(logv - m)))


def _panel(logf, a, b, n):
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    nodes = a + half * (x + 1.0)
    return _logsumexp_weighted(logf(nodes), w * half)


def log_integrate(logf, a: float, b: float, rel_tol: float = 1e-12,
                  order: int = 20, max_depth: int = 40, max_panels: int = 20000) -> float:
    """Return ``log(int_a^b exp(logf(x)) dx)`` by adaptive bisection.

    Each panel is accepted when its single ``order``-point estimate agrees
    with the sum over its two halves to ``rel_tol`` relative to the running
    total.  Raises :class:`QuadratureError` when refinement runs out.
    """
    if not b > a:
        return -math.inf
    whole = _panel(logf, a, b, order)
    stack = [(a, b, whole, 0)]
    accepted = []
    panels = 0
    while stack:
        lo, hi, est, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(logf, lo, mid, order)
        right = _panel(logf, mid, hi, order)
        both = np.logaddexp(left, right)
        panels += 1
        scale = max(whole, both) if np.isfinite(whole) else both
        if not np.isfinite(both):
            accepted.append(both)
            continue
        diff = abs(math.exp(est - both) - 1.0) if np.isfinite(est) else math.inf
        # error of this panel measured against the whole integral
        if diff * math.exp(both - scale) <= rel_tol or (both - scale) < math.log(rel_tol) - 40:
            accepted.append(both)
            continue
        if depth >= max_depth or panels > max_panels:
            raise QuadratureError(
                f"adaptive quadrature did not converge on [{lo:.6g}, {hi:.6g}]")
        stack.append((lo, mid, left, depth + 1))
        stack.append((mid, hi, right, depth + 1))
    accepted = np.sort(np.asarray(accepted))
    return float(np.logaddexp.reduce(accepted))


def log_integrate_unimodal(logf, peak_guess: float, rel_tol: float = 1e-12,
                           drop: float = 60.0, lower: float = -math.inf,
                           upper: float = math.inf, scale: float = 1.0) -> float:
    """Integrate ``exp(logf)`` over ``(lower, upper)`` for a unimodal ``logf``.

    The peak is located by golden-section search, the support is truncated
    where ``logf`` has dropped by ``drop`` below its maximum, and the two
    sides of the peak are integrated separately.
    """
    peak = _find_peak(logf, peak_guess, scale, lower, upper)
    top = float(logf(np.array([peak]))[0])
    lo = _find_edge(logf, peak, top - drop, -scale, lower)
    hi = _find_edge(logf, peak, top - drop, scale, upper)
    total = -math.inf
    if peak > lo:
        total = np.logaddexp(total, log_integrate(logf, lo, peak, rel_tol))
    if hi > peak:
        total = np.logaddexp(total, log_integrate(logf, peak, hi, rel_tol))
    return float(total)


def _f1(logf, x):
    return float(logf(np.array([x]))[0])


def _find_peak(logf, x0, step, lower, upper):
    x0 = min(max(x0, lower), upper)
    f0 = _f1(logf, x0)
    # bracket the maximum by walking uphill with growing steps
    for direction in (1.0, -1.0):
        x1 = x0 + direction * step
        if not lower <= x1 <= upper:
            continue
        f1 = _f1(logf, x1)
        if f1 > f0:
            a, fa, b, fb, h = x0, f0, x1, f1, step
            while True:
                h *= 2.0
                c = b + direction * h
                if not lower <= c <= upper:
                    c = upper if direction > 0 else lower
                    fc = _f1(logf, c)
                    if fc >= fb:
                        return c
                    break
                fc = _f1(logf, c)
                if fc <= fb:
                    break
                a, fa, b, fb = b, fb, c, fc
            lo, hi = sorted((a, c))
            return _golden(logf, lo, hi)
    lo = max(x0 - step, lower)
    hi = min(x0 + step, upper)
    return _golden(logf, lo, hi)


def _golden(logf, lo, hi, iters=80):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc, fd = _f1(logf, c), _f1(logf, d)
    for _ in range(iters):
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = _f1(logf, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = _f1(logf, d)
        if hi - lo < 1e-12 * max(1.0, abs(lo)):
            break
    return 0.5 * (lo + hi)


def _find_edge(logf, peak, level, step, limit):
    """First point beyond ``peak`` (direction of ``step``) where logf < level."""
    x = peak
    h = step
    for _ in range(200):
        nxt = x + h
        if (step > 0 and nxt >= limit) or (step < 0 and nxt <= limit):
            return limit
        if _f1(logf, nxt) < level:
            return nxt
        x = nxt
        h *= 1.5
    raise QuadratureError("integrand does not decay; cannot truncate support")
