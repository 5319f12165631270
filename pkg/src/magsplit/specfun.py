"""Scaled special functions evaluated stably at large parameters.

Everything that can overflow (the Tricomi integral carries a Gamma(alpha)
scale with alpha ~ nu * lambda) is returned in log form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import QuadratureError, log_integrate_unimodal


class SeriesError(RuntimeError):
    """A power series failed to converge within its term budget."""


@dataclass(frozen=True)
class LogValue:
    """``sign * exp(log_magnitude)``; zero is ``sign == 0, log_magnitude == -inf``."""

    log_magnitude: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError("sign must be -1, 0 or 1")
        if self.sign == 0 and self.log_magnitude != -math.inf:
            raise ValueError("zero must carry log_magnitude = -inf")

    @classmethod
    def zero(cls) -> "LogValue":
        return cls(-math.inf, 0)

    @classmethod
    def from_float(cls, x: float) -> "LogValue":
        if x == 0:
            return cls.zero()
        return cls(math.log(abs(x)), 1 if x > 0 else -1)

    def __float__(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)

    def __mul__(self, other: "LogValue") -> "LogValue":
        if self.sign == 0 or other.sign == 0:
            return LogValue.zero()
        return LogValue(self.log_magnitude + other.log_magnitude, self.sign * other.sign)

    def __truediv__(self, other: "LogValue") -> "LogValue":
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero LogValue")
        if self.sign == 0:
            return LogValue.zero()
        return LogValue(self.log_magnitude - other.log_magnitude, self.sign * other.sign)


# -- modified Bessel I0 --------------------------------------------------

_SERIES_CUTOFF = 20.0


def _i0e_series(z):
    # sum_k (z^2/4)^k / (k!)^2, then scale by exp(-z)
    q = 0.25 * z * z
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 200):
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return total * np.exp(-z)


def _i0e_asymptotic(z):
    # exp(-z) I0(z) ~ (2 pi z)^(-1/2) sum_k ((2k-1)!!)^2 / (k! 8^k z^k)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 60):
        nxt = term * (2 * k - 1) ** 2 / (8.0 * k * z)
        if np.all(nxt <= 1e-17 * total):
            total = total + nxt
            break
        term = nxt
        total = total + term
    return total / np.sqrt(2.0 * np.pi * z)


def bessel_i0_scaled(z):
    """``exp(-z) * I0(z)`` for real ``z >= 0`` (scalar or array)."""
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("bessel_i0_scaled requires z >= 0")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    small = flat < _SERIES_CUTOFF
    if np.any(small):
        out[small] = _i0e_series(flat[small])
    if np.any(~small):
        out[~small] = _i0e_asymptotic(flat[~small])
    out = out.reshape(np.shape(arr))
    return float(out) if np.ndim(arr) == 0 else out


def log_bessel_i0(z):
    """``log I0(z)`` without overflow."""
    z = np.asarray(z, dtype=float)
    return z + np.log(bessel_i0_scaled(z))


# -- ring identity ---------------------------------------------------------

def ring_phase_integral(xi: float, beta: float, nodes: int | None = None) -> float:
    """``int_0^{2pi} exp(i xi sin(theta) + beta cos(theta)) dtheta``.

    Evaluated by the periodic trapezoid rule on the contour
    ``theta = u + i*eta`` with ``tanh(eta) = xi/beta``, along which the
    integrand stops oscillating.  Shifting the contour is exact because the
    integrand is entire and 2*pi periodic; on the real contour the answer
    would be swamped by cancellation once ``xi`` approaches ``beta``.
    """
    xi = float(xi)
    beta = float(beta)
    if xi == 0.0 and beta == 0.0:
        return 2.0 * math.pi
    if not beta > abs(xi):
        raise ValueError("ring_phase_integral requires beta > |xi|")
    eta = math.atanh(xi / beta)
    kappa = math.sqrt(beta * beta - xi * xi)
    if nodes is None:
        nodes = 2 * int(math.ceil(kappa)) + 64
    u = 2.0 * np.pi * np.arange(nodes) / nodes
    theta = u + 1j * eta
    # subtract the peak exponent kappa before exponentiating
    expo = 1j * xi * np.sin(theta) + beta * np.cos(theta) - kappa
    val = np.mean(np.exp(expo)) * 2.0 * math.pi
    return float(val.real) * math.exp(kappa)


# -- confluent hypergeometric functions -----------------------------------

def tricomi_w_logintegrand(alpha: float, y: float):
    """log of ``exp(-y t) t^alpha (1+t)^(-alpha)`` in ``s = log t`` (Jacobian included)."""
    def logf(s):
        t = np.exp(s)
        return -y * t + alpha * s - alpha * np.logaddexp(0.0, s)
    return logf


def laplace_point(alpha: float, y: float) -> float:
    """Interior maximizer ``t`` of ``-y t + alpha log(t/(1+t))``."""
    return 0.5 * (math.sqrt(1.0 + 4.0 * alpha / y) - 1.0)


def tricomi_u_log(alpha: float, y: float, rel_tol: float = 1e-10) -> LogValue:
    """``log W(alpha, y)`` with ``W = int_0^inf exp(-y t) t^(alpha-1) (1+t)^(-alpha) dt``.

    ``W = Gamma(alpha) U(alpha, 1, y)``; the Gamma factor is deliberately
    kept so it never has to be evaluated.
    """
    if not alpha > 0 or not y > 0:
        raise ValueError("tricomi_u_log requires alpha > 0 and y > 0")
    logf = tricomi_w_logintegrand(alpha, y)
    s_star = math.log(laplace_point(alpha, y))
    # width of the peak in s; small alpha gives a long left tail ~ exp(alpha s)
    width = 1.0 / math.sqrt(y * math.exp(s_star) + alpha / 4.0 + 1e-300)
    width = min(max(width, 1e-3), 50.0)
    try:
        val = log_integrate_unimodal(logf, s_star, rel_tol=rel_tol * 0.1,
                                     drop=60.0 - math.log(rel_tol) / 2, scale=width)
    except QuadratureError as exc:
        raise QuadratureError(f"tricomi_u_log({alpha}, {y}): {exc}") from exc
    return LogValue(val, 1)


def tricomi_w_ratio(alpha: float, y: float, rel_tol: float = 1e-12) -> float:
    """``-W_y(alpha, y) / W(alpha, y)``, the log-derivative of W in y (sign flipped)."""
    # -dW/dy = int exp(-y t) t^alpha (1+t)^(-alpha) dt = W-type integral with one more power of t
    logf1 = _shifted(alpha, y)
    s_star = math.log(0.5 * (math.sqrt(1.0 + 4.0 * (alpha + 1) / y) - 1.0) + 1e-300)
    width = min(max(1.0 / math.sqrt(y * math.exp(s_star) + alpha / 4.0 + 1e-300), 1e-3), 50.0)
    num = log_integrate_unimodal(logf1, s_star, rel_tol=rel_tol, scale=width,
                                 drop=60.0 - math.log(rel_tol) / 2)
    den = tricomi_u_log(alpha, y, rel_tol).log_magnitude
    return math.exp(num - den)


def _shifted(alpha, y):
    def logf(s):
        t = np.exp(s)
        return -y * t + (alpha + 1.0) * s - alpha * np.logaddexp(0.0, s)
    return logf


def kummer_m_log(alpha: float, y: float, b: float = 1.0, max_terms: int = 5000) -> LogValue:
    """``M(alpha, b; y)`` by the ascending series, returned as a LogValue.

    Terms are accumulated relative to the running largest term so that
    alternating series (``alpha < 0``) and large ``y`` are both handled; the
    series stops when the term ratio guarantees the tail is below 1e-17 of
    the partial sum.
    """
    if y < 0:
        raise ValueError("kummer_m_log requires y >= 0")
    if y == 0:
        return LogValue(0.0, 1)
    # terms: t_k = (alpha)_k / (b)_k * y^k / k!
    log_scale = 0.0
    term = 1.0
    total = 1.0
    for k in range(max_terms):
        ratio = (alpha + k) / ((b + k) * (k + 1)) * y
        term *= ratio
        if term == 0.0:
            break
        total += term
        big = max(abs(term), abs(total))
        if big > 1e250:
            term /= big
            total /= big
            log_scale += math.log(big)
        # once (alpha+k) > 0 the ratio shrinks monotonically; bound the tail
        if alpha + k > 0 and abs(ratio) < 0.5 and abs(term) <= 1e-17 * abs(total):
            break
    else:
        raise SeriesError(f"kummer_m_log({alpha}, {y}) did not converge")
    if total == 0.0:
        return LogValue.zero()
    return LogValue(math.log(abs(total)) + log_scale, 1 if total > 0 else -1)


def kummer_m_logderiv(alpha: float, y: float) -> float:
    """``M'(alpha,1;y)/M(alpha,1;y)`` using ``M' = alpha M(alpha+1, 2; y)``."""
    if alpha == 0:
        return 0.0
    m = kummer_m_log(alpha, y)
    mp = kummer_m_log(alpha + 1.0, y, b=2.0)
    return alpha * float(mp / m)
