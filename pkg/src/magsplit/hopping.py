"""Magnetic hopping coefficient rho(d) between two disc wells.

With ``d = dist * e1`` the hopping integral reduces to a radial integral
against the angular kernel ``L(r)``.  ``L`` is computed two ways: as the
oscillatory angular integral, and through the Bessel representation whose
integrand is positive.  A third route integrates the full complex
two-dimensional integrand directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import QuadratureError, gauss_legendre, log_integrate_unimodal
from .radial import (GroundState, NormalizationBracket, exterior_exponent, laplace_tstar,
                     normalization_bracket, overlap_well_integral)
from .specfun import LogValue, bessel_i0_scaled


class OutOfRegimeError(ValueError):
    """An asymptotic formula was requested outside the regime where it applies."""


def _check_dist(gs: GroundState, dist: float):
    if not dist > 2.0 * gs.radius:
        raise ValueError("hopping requires dist > 2a (disjoint wells)")


# -- kernels -------------------------------------------------------------------

def log_kernel_bessel(gs: GroundState, dist: float, r: float) -> float:
    """``log L(r)`` from the non-oscillatory Bessel representation.

    The integrand in ``s = log t`` is
    ``-lam R^2 t/2 + alpha (s - log(1+t)) + z + log(i0e(z))`` with
    ``R^2 = r^2 + dist^2`` and ``z = lam dist r sqrt(t(t+1))``.
    """
    _check_dist(gs, dist)
    if not 0.0 < r <= gs.radius:
        raise ValueError("kernel requires 0 < r <= a")
    lam, alpha = gs.lam, gs.alpha
    big_r2 = r * r + dist * dist
    c = lam * dist * r
    if gs.is_free:
        # alpha = 0: phi_out is a pure Gaussian; the ring identity has beta = xi, I0(0) = 1
        return gs.log_c_lambda + math.log(r) - 0.25 * lam * big_r2 + math.log(2.0 * math.pi)

    def logf(s):
        t = np.exp(s)
        z = c * np.sqrt(t * (t + 1.0))
        return (-0.5 * lam * big_r2 * t + alpha * (s - np.logaddexp(0.0, s))
                + z + np.log(bessel_i0_scaled(z)))

    # peak guess: Laplace point of the dominant exponent
    t_guess = laplace_tstar(gs.nu, max(dist - r, 1e-6))
    tol = gs.config.tolerances.quadrature_rel
    try:
        log_int = log_integrate_unimodal(logf, math.log(t_guess), rel_tol=tol * 0.1,
                                         scale=0.5, drop=60.0 - math.log(tol) / 2)
    except QuadratureError as exc:
        raise QuadratureError(f"kernel_bessel(dist={dist}, r={r}): {exc}") from exc
    return (gs.log_c_lambda + math.log(r) - 0.25 * lam * big_r2
            + math.log(2.0 * math.pi) + log_int)


def kernel_bessel(gs: GroundState, dist: float, r: float) -> float:
    """Angular kernel ``L_dist(r)`` via the Bessel representation (positive)."""
    return math.exp(log_kernel_bessel(gs, dist, r))


@dataclass(frozen=True)
class KernelSample:
    r: float
    L_value: float
    L_oscillatory: float
    imag_part: float
    nodes: int


def _angular_nodes(lam, dist, r):
    # >= 16 nodes per oscillation of the phase lam dist r sin(theta) / 2
    periods = lam * dist * r / (2.0 * math.pi)
    n = max(64, int(16 * math.ceil(periods + 1)))
    return n + (n % 2)


def kernel_oscillatory_complex(gs: GroundState, dist: float, r: float,
                               nodes: int | None = None, rel_tol: float = 1e-12,
                               max_doublings: int = 8) -> tuple[complex, int]:
    """Periodic trapezoid rule for the oscillatory angular kernel.

    Doubles the node count until two successive estimates agree to
    ``rel_tol``; returns the complex estimate and the node count used.
    """
    _check_dist(gs, dist)
    if not 0.0 <= r <= gs.radius:
        raise ValueError("kernel requires 0 <= r <= a")
    lam = gs.lam
    if r == 0.0:
        return 0j, 0
    n = nodes or _angular_nodes(lam, dist, r)

    def estimate(n):
        theta = 2.0 * np.pi * np.arange(n) / n
        rho = np.sqrt(r * r + dist * dist - 2.0 * r * dist * np.cos(theta))
        logp = gs.log_phi_out_fast(rho)
        vals = np.exp(0.5j * lam * dist * r * np.sin(theta) + logp)
        return r * 2.0 * np.pi * np.mean(vals)

    prev = estimate(n)
    for _ in range(max_doublings):
        n *= 2
        cur = estimate(n)
        if abs(cur - prev) <= rel_tol * abs(cur):
            return cur, n
        prev = cur
    raise QuadratureError(
        f"kernel_oscillatory did not converge (dist={dist}, r={r}, nodes={n})")


def kernel_oscillatory(gs: GroundState, dist: float, r: float) -> float:
    val, _ = kernel_oscillatory_complex(gs, dist, r)
    if abs(val.imag) > 1e-9 * abs(val.real) + 1e-300:
        raise QuadratureError("oscillatory kernel has a non-negligible imaginary part")
    return float(val.real)


def kernel_sample(gs: GroundState, dist: float, r: float) -> KernelSample:
    val, n = kernel_oscillatory_complex(gs, dist, r)
    return KernelSample(r=r, L_value=kernel_bessel(gs, dist, r), L_oscillatory=val.real,
                        imag_part=val.imag, nodes=n)


# -- hopping routes --------------------------------------------------------------

@dataclass(frozen=True)
class HoppingResult:
    dist: float
    rho_direct: complex
    rho_angular: float
    rho_bessel: float
    log_abs_rho: float
    lower_bound: float
    upper_bound: float
    log_lower_bound: float
    log_upper_bound: float
    gamma0_effective: float
    failed_routes: tuple[str, ...] = ()

    @property
    def route_disagreement(self) -> float:
        vals = [abs(self.rho_direct), abs(self.rho_angular), abs(self.rho_bessel)]
        ref = abs(self.rho_bessel)
        return max(abs(a - b) for a in vals for b in vals) / ref if ref else 0.0

    @property
    def within_bounds(self) -> bool:
        return self.log_lower_bound <= self.log_abs_rho <= self.log_upper_bound


def _radial_nodes(gs: GroundState, n: int = 48):
    x, w = gauss_legendre(n)
    a = gs.radius
    r = 0.5 * a * (x + 1.0)
    return r, 0.5 * a * w


def log_abs_rho_bessel(gs: GroundState, dist: float, n_r: int = 48) -> LogValue:
    """``rho`` by radial quadrature against the Bessel kernel, as a LogValue."""
    _check_dist(gs, dist)
    depth = gs.config.well.depth
    if depth == 0.0:
        return LogValue.zero()
    r, w = _radial_nodes(gs, n_r)
    logs = np.array([log_kernel_bessel(gs, dist, float(ri)) for ri in r])
    logs = logs + gs.log_phi_in(r) + np.log(w)
    log_abs = 2.0 * math.log(gs.lam) + math.log(abs(depth)) + float(np.logaddexp.reduce(logs))
    return LogValue(log_abs, -1)


def rho_bessel(gs: GroundState, dist: float) -> float:
    return float(log_abs_rho_bessel(gs, dist))


def rho_angular(gs: GroundState, dist: float, n_r: int = 48) -> float:
    _check_dist(gs, dist)
    depth = gs.config.well.depth
    if depth == 0.0:
        return 0.0
    r, w = _radial_nodes(gs, n_r)
    kern = np.array([kernel_oscillatory(gs, dist, float(ri)) for ri in r])
    phi = np.exp(gs.log_phi_in(r))
    return gs.lam ** 2 * depth * float(np.sum(w * phi * kern))


def rho_direct(gs: GroundState, dist: float, n_r: int = 40, n_theta: int | None = None,
               with_phase: bool = True) -> complex:
    """Tensor-product polar quadrature of the full complex hopping integrand.

    Gauss-Legendre in ``r`` on (0, a] times the periodic trapezoid rule on
    the full circle; the phase is ``exp(i lam dist x2 / 2)``.
    """
    _check_dist(gs, dist)
    depth = gs.config.well.depth
    if depth == 0.0:
        return 0j
    lam = gs.lam
    x, w = gauss_legendre(n_r)
    a = gs.radius
    r = 0.5 * a * (x + 1.0)
    wr = 0.5 * a * w
    if n_theta is None:
        n_theta = 2 * _angular_nodes(lam, dist, a)
    theta = 2.0 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    x1, x2 = rr * np.cos(tt), rr * np.sin(tt)
    dist_to_d = np.sqrt((x1 - dist) ** 2 + x2 ** 2)
    log_out = gs.log_phi_out_fast(dist_to_d.ravel()).reshape(dist_to_d.shape)
    log_in = gs.log_phi_in(r)[:, None]
    phase = 0.5 * lam * dist * x2 if with_phase else np.zeros_like(x2)
    # scale out the largest exponent so the sum cannot underflow
    expo = log_in + log_out
    top = float(np.max(expo))
    vals = np.exp(1j * phase + expo - top) * rr
    total = np.sum(wr[:, None] * vals) * (2.0 * np.pi / n_theta)
    return complex(lam ** 2 * depth * total * math.exp(top))


# -- bounds ------------------------------------------------------------------

# The envelope constants are the ones the bound proofs compose, each measured
# once on the reference configuration (lam=10, depth=-2, a=0.5, dist=2) and
# frozen here; checks allow a factor PREFACTOR_WINDOW either way.
#
#   lower: 2 pi C1 D, with C1 = inf_z I0(z) e^-z (sqrt(2 pi z) + 1) = 1 and D the
#          Laplace constant of the t-integral (min over r in (0, a]),
#          see laplace_lower_constant.
#   upper: 2 pi * overlap integral * decay prefactor sup phi(r) / (sqrt(lam) e^{-lam (r^2-a^2)/4}),
#          see upper_chain_constant.
BESSEL_C1 = 1.0
BESSEL_C2 = 1.8041132311931312
HOPPING_LOWER_PREFACTOR = 2.0 * math.pi * BESSEL_C1 * 0.5406657944376222
HOPPING_UPPER_PREFACTOR = 2.0 * math.pi * 0.2543433932246759 * 0.09418024916354857
PREFACTOR_WINDOW = 10.0
# slack c in s(lam) = c log(lam) / lam for the exponent-rate sandwich: the
# lam^(5/2) prefactor of the upper envelope contributes (4 * 5/2) log(lam) / lam
EXPONENT_SLACK = 10.0


def bessel_bracket_constants(z_max: float = 1e6, n: int = 20001) -> tuple[float, float]:
    """``(inf, sup)`` over ``z >= 0`` of ``I0(z) e^-z (sqrt(2 pi z) + 1)`` on a log grid."""
    z = np.concatenate([[0.0], np.logspace(-6, math.log10(z_max), n)])
    g = bessel_i0_scaled(z) * (np.sqrt(2.0 * np.pi * z) + 1.0)
    return float(np.min(g)), float(np.max(g))


def laplace_lower_constant(gs: GroundState, dist: float, r: float) -> float:
    """``D(lam, r) = lam J(r) exp(lam sqrt(2 nu) (dist - r))`` with

    ``J(r) = int_0^inf exp(-lam (dist-r)^2 t/2 - lam nu/t) / (t sqrt(2 pi lam r dist sqrt(t(t+1))) + t) dt``,
    the integral left after bounding ``I0`` from below in the kernel.
    """
    _check_dist(gs, dist)
    lam, nu = gs.lam, gs.nu
    half_sq = 0.5 * (dist - r) ** 2

    def logf(s):
        t = np.exp(s)
        den = np.log(t * np.sqrt(2.0 * np.pi * lam * r * dist * np.sqrt(t * (t + 1.0))) + t)
        return -lam * half_sq * t - lam * nu / t - den + s

    log_j = log_integrate_unimodal(logf, 0.5 * math.log(nu / half_sq), rel_tol=1e-12, scale=0.1)
    return math.exp(math.log(lam) + log_j + lam * math.sqrt(2.0 * nu) * (dist - r))


def upper_chain_constant(gs: GroundState, n_r: int = 400) -> float:
    """``2 pi * int phi |v| r dr * sup_{r>a} phi(r) / (sqrt(lam) exp(-lam (r^2 - a^2)/4))``."""
    a = gs.radius
    r = a * (1.0 + np.concatenate([[1e-12], np.geomspace(1e-6, 7.0, n_r)]))
    log_ratio = gs.log_phi_out(r) - 0.5 * math.log(gs.lam) + 0.25 * gs.lam * (r * r - a * a)
    return 2.0 * math.pi * overlap_well_integral(gs).value * math.exp(float(np.max(log_ratio)))


def log_hopping_envelopes(gs: GroundState, dist: float,
                          overlap: float | None = None) -> tuple[float, float]:
    """``(log lower, log upper)`` hopping envelopes before the prefactor window.

    lower: ``C_lambda lam^-1 exp(-lam (dist^2 + 4 sqrt(2 nu) dist + a^2)/4) * lam^2 * int phi |v| r dr``
    upper: ``lam^(5/2) exp(-lam ((dist - a)^2 - a^2) / 4)``
    """
    _check_dist(gs, dist)
    lam, nu, a = gs.lam, gs.nu, gs.radius
    if overlap is None:
        overlap = overlap_well_integral(gs).value
    log_lo = (gs.log_c_lambda - math.log(lam) + 2.0 * math.log(lam) + math.log(overlap)
              - 0.25 * lam * (dist * dist + 4.0 * math.sqrt(2.0 * nu) * dist + a * a))
    log_up = 2.5 * math.log(lam) - 0.25 * lam * ((dist - a) ** 2 - a * a)
    return log_lo, log_up


def hopping_bounds(gs: GroundState, dist: float) -> tuple[float, float]:
    """Lower and upper envelopes for ``|rho|`` including the frozen prefactors and window."""
    lo, up = log_hopping_envelopes(gs, dist)
    lo += math.log(HOPPING_LOWER_PREFACTOR / PREFACTOR_WINDOW)
    up += math.log(HOPPING_UPPER_PREFACTOR * PREFACTOR_WINDOW)
    return math.exp(lo), math.exp(up)


def exponent_rate_window(gs: GroundState, dist: float,
                         slack: float | None = None) -> tuple[float, float]:
    """Interval for ``-(4/lam) log|rho|``.

    ``[(dist-a)^2 - a^2 - s, dist^2 + 4 sqrt(2 nu) dist + a^2 + s]`` with
    ``s = c log(lam) / lam``; pass ``slack=0`` for the bare exponents.
    """
    a, nu, lam = gs.radius, gs.nu, gs.lam
    c = EXPONENT_SLACK if slack is None else slack
    s = c * math.log(lam) / lam
    return ((dist - a) ** 2 - a * a - s,
            dist * dist + 4.0 * math.sqrt(2.0 * nu) * dist + a * a + s)


def hopping_all_routes(gs: GroundState, dist: float) -> HoppingResult:
    _check_dist(gs, dist)
    failed = []
    if gs.config.well.depth == 0.0:
        return HoppingResult(dist, 0j, 0.0, 0.0, -math.inf, 0.0, 0.0, -math.inf, -math.inf,
                             math.nan)
    try:
        lv = log_abs_rho_bessel(gs, dist)
        rb = float(lv)
        log_abs = lv.log_magnitude
    except QuadratureError:
        failed.append("bessel")
        rb, log_abs = math.nan, math.nan
    try:
        ra = rho_angular(gs, dist)
    except QuadratureError:
        failed.append("angular")
        ra = math.nan
    try:
        rd = rho_direct(gs, dist)
    except QuadratureError:
        failed.append("direct")
        rd = complex(math.nan, math.nan)
    if math.isnan(log_abs):
        log_abs = math.log(abs(ra)) if not math.isnan(ra) else math.nan
    lo, up = log_hopping_envelopes(gs, dist)
    lo += math.log(HOPPING_LOWER_PREFACTOR / PREFACTOR_WINDOW)
    up += math.log(HOPPING_UPPER_PREFACTOR * PREFACTOR_WINDOW)
    nu, lam = gs.nu, gs.lam
    gamma0 = -(4.0 / lam) * lo - dist * dist - 4.0 * math.sqrt(2.0 * nu) * dist
    return HoppingResult(
        dist=dist, rho_direct=rd, rho_angular=ra, rho_bessel=rb, log_abs_rho=log_abs,
        lower_bound=math.exp(lo), upper_bound=math.exp(up), log_lower_bound=lo,
        log_upper_bound=up, gamma0_effective=gamma0, failed_routes=tuple(failed),
    )


# -- Laplace asymptotics ---------------------------------------------------------

def laplace_exterior_asymptote(gs: GroundState, r: float, log: bool = False) -> float:
    """Laplace-method approximation of ``phi_out(r)``.

    ``C sqrt(2 pi / (lam nu) (1 + t*^2/(1+2t*))) exp(-lam q(r))``.
    """
    if not r > gs.radius:
        raise ValueError("laplace_exterior_asymptote requires r > a")
    lam, nu = gs.lam, gs.nu
    t = laplace_tstar(nu, r)
    if lam * nu * t < 4.0:
        raise OutOfRegimeError(
            f"lam*nu*t* = {lam * nu * t:.3g} < 4: endpoint-dominated, asymptote not valid")
    pref = 2.0 * math.pi / (lam * nu) * (1.0 + t * t / (1.0 + 2.0 * t))
    val = gs.log_c_lambda + 0.5 * math.log(pref) - lam * exterior_exponent(nu, r)
    return val if log else math.exp(val)


# -- ratio ---------------------------------------------------------------------------

# Frozen K*: sup of the kernel ratio tilde L_{x dist}(r) / tilde L_dist(r) over
# x in {1, sqrt 2, sqrt 3} and r in (0, a] at the reference configuration.  It is
# attained at x = 1; the x > 1 ratios are ~4e-5 and ~9e-9.
RATIO_CONSTANT = 1.0


@dataclass(frozen=True)
class RatioReport:
    x: float
    dist: float
    log_ratio: float
    log_bound: float
    kernel_ratio_max: float
    holds: bool
    kernel_samples: tuple = field(default=(), repr=False)


def log_tilde_kernel(gs: GroundState, dist: float, r: float) -> float:
    """``log tilde L_dist(r)``: the Bessel kernel with ``exp(-lam(r^2+dist^2)/8)`` split off."""
    return log_kernel_bessel(gs, dist, r) + 0.125 * gs.lam * (r * r + dist * dist)


def hopping_ratio_check(gs: GroundState, dist: float, x: float,
                        k_star: float | None = None, n_kernel: int = 8) -> RatioReport:
    """Compare ``|rho(x dist)/rho(dist)|`` with ``K* exp(-lam (x^2-1) dist^2 / 8)`` in log space."""
    _check_dist(gs, dist)
    if not x >= 1.0:
        raise ValueError("x must be >= 1")
    k_star = RATIO_CONSTANT if k_star is None else k_star
    log_near = log_abs_rho_bessel(gs, dist).log_magnitude
    log_far = log_abs_rho_bessel(gs, x * dist).log_magnitude if x > 1 else log_near
    log_ratio = log_far - log_near
    log_bound = math.log(k_star) - gs.lam * (x * x - 1.0) * dist * dist / 8.0
    rs = np.linspace(gs.radius / n_kernel, gs.radius, n_kernel)
    samples = []
    worst = -math.inf
    for r in rs:
        kr = log_tilde_kernel(gs, x * dist, float(r)) - log_tilde_kernel(gs, dist, float(r))
        samples.append((float(r), math.exp(kr)))
        worst = max(worst, kr)
    return RatioReport(x=x, dist=dist, log_ratio=log_ratio, log_bound=log_bound,
                       kernel_ratio_max=math.exp(worst), holds=log_ratio <= log_bound + 1e-12,
                       kernel_samples=tuple(samples))


__all__ = [
    "HoppingResult", "KernelSample", "RatioReport", "NormalizationBracket",
    "kernel_bessel", "kernel_oscillatory", "hopping_all_routes", "hopping_bounds",
    "laplace_tstar", "laplace_exterior_asymptote", "hopping_ratio_check",
    "normalization_bracket",
]
