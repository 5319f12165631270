"""Single-well radial ground state of the magnetic disc-well Hamiltonian.

With ``y = lam r^2 / 2`` and ``phi = exp(-y/2) psi(y)``, the radial equation
is Kummer's equation in each region.  Inside the disc the regular solution
is ``M(alpha_in, 1; y)``; outside it is the decaying Tricomi solution, kept
in its integral form ``W(alpha, y) = Gamma(alpha) U(alpha, 1, y)``.  The
ground state energy is the lowest zero of the Wronskian at ``r = a``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import specfun
from .model import ModelConfig, WellSpec
from .quadrature import gauss_legendre


class NoBoundStateError(RuntimeError):
    """No sign change of the matching function below the first Landau level."""


class ConvergenceError(RuntimeError):
    pass


class ConsistencyError(RuntimeError):
    """A computed quantity contradicts a structural property (e.g. positivity)."""


@dataclass(frozen=True)
class GroundState:
    e0: float
    alpha: float
    nu: float
    c_lambda: float
    log_c_lambda: float
    alpha_in: float
    log_amp_in: float
    interior_samples: np.ndarray = field(repr=False)  # shape (n, 2): r, phi(r)
    config: ModelConfig = field(repr=False)
    matching_residual: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def lam(self) -> float:
        return self.config.lam

    @property
    def radius(self) -> float:
        return self.config.well.radius

    @property
    def is_free(self) -> bool:
        return self.alpha == 0.0

    # -- evaluation ----------------------------------------------------

    def log_phi_in(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        y = 0.5 * self.lam * r * r
        if self.is_free:
            return self.log_c_lambda - 0.5 * y
        out = np.empty_like(r)
        for i, yi in enumerate(y):
            m = specfun.kummer_m_log(self.alpha_in, float(yi))
            if m.sign <= 0:
                raise ConsistencyError("interior ground state changes sign")
            out[i] = self.log_amp_in - 0.5 * yi + m.log_magnitude
        return out

    def log_phi_out(self, r) -> np.ndarray:
        """``log phi(r)`` for ``r > a`` from the exterior integral form."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        y = 0.5 * self.lam * r * r
        if self.is_free:
            return self.log_c_lambda - 0.5 * y
        tol = self.config.tolerances.quadrature_rel
        logw = np.array([specfun.tricomi_u_log(self.alpha, float(yi), tol).log_magnitude
                         for yi in y])
        return self.log_c_lambda - 0.5 * y + logw

    def log_phi(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.radius
        if np.any(inside):
            out[inside] = self.log_phi_in(r[inside])
        if np.any(~inside):
            out[~inside] = self.log_phi_out_fast(r[~inside])
        return out

    def phi(self, r) -> np.ndarray:
        return np.exp(self.log_phi(r))

    def log_phi_out_fast(self, r) -> np.ndarray:
        """Chebyshev interpolant of ``log phi_out`` in ``log r`` (cached per range)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.is_free:
            return self.log_phi_out(r)
        lo, hi = float(r.min()), float(r.max())
        for (a, b), cheb in self._cache.items():
            if a <= lo and hi <= b:
                return cheb(np.log(r))
        a = self.radius
        b = max(hi * 1.5, 4.0 * a, 4.0 * math.sqrt(2.0 / self.lam) + a)
        if lo < a:
            raise ValueError("log_phi_out_fast requires r >= a")
        cheb = _log_cheb(self.log_phi_out, a, b)
        self._cache[(a, b)] = cheb
        return cheb(np.log(r))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "e0": self.e0, "alpha": self.alpha, "nu": self.nu,
            "c_lambda": self.c_lambda, "log_c_lambda": self.log_c_lambda,
            "alpha_in": self.alpha_in, "log_amp_in": self.log_amp_in,
            "matching_residual": self.matching_residual,
            "interior_samples": self.interior_samples.tolist(),
            "config": self.config.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GroundState":
        return cls(
            e0=d["e0"], alpha=d["alpha"], nu=d["nu"], c_lambda=d["c_lambda"],
            log_c_lambda=d["log_c_lambda"], alpha_in=d["alpha_in"],
            log_amp_in=d["log_amp_in"], matching_residual=d["matching_residual"],
            interior_samples=np.asarray(d["interior_samples"], dtype=float),
            config=ModelConfig.from_dict(d["config"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundState":
        return cls.from_dict(json.loads(text))


def _log_cheb(logf, a, b, deg=64):
    """Interpolate ``logf`` on [a, b] by Chebyshev polynomials in ``log r``."""
    cheb = np.polynomial.Chebyshev.interpolate(
        lambda u: logf(np.exp(u)), deg, domain=[math.log(a), math.log(b)])
    return cheb


# -- matching ----------------------------------------------------------------

def _alpha_out(lam: float, e: float) -> float:
    return (lam - e) / (2.0 * lam)


def _alpha_in(lam: float, e: float, depth: float) -> float:
    return (lam - (e - lam * lam * depth)) / (2.0 * lam)


def matching_function(e: float, lam: float, well: WellSpec, rel_tol: float = 1e-12) -> float:
    """Normalized Wronskian of the interior and exterior solutions at ``r = a``.

    Both solutions are written as ``exp(-y/2) psi(y)``; the common Gaussian
    cancels, leaving ``M' + M * W1/W`` where ``W1 = -dW/dy``.  Dividing by
    ``hypot(M, M')`` keeps the function bounded, continuous through zeros
    of ``M`` and zero exactly at eigenvalues.
    """
    y = 0.5 * lam * well.radius ** 2
    a_in = _alpha_in(lam, e, well.depth)
    a_out = _alpha_out(lam, e)
    m = specfun.kummer_m_log(a_in, y)
    mp = specfun.LogValue.zero() if a_in == 0 else (
        specfun.LogValue.from_float(a_in) * specfun.kummer_m_log(a_in + 1.0, y, b=2.0))
    ratio = specfun.tricomi_w_ratio(a_out, y, rel_tol)
    big = max(m.log_magnitude, mp.log_magnitude)
    mv = m.sign * math.exp(m.log_magnitude - big) if m.sign else 0.0
    mpv = mp.sign * math.exp(mp.log_magnitude - big) if mp.sign else 0.0
    return (mpv + mv * ratio) / math.hypot(mv, mpv)


def log_derivative_mismatch(gs: GroundState) -> float:
    """|d log phi/dr (inside) - d log phi/dr (outside)| at r = a, relative."""
    lam, well = gs.lam, gs.config.well
    y = 0.5 * lam * well.radius ** 2
    inner = -0.5 + specfun.kummer_m_logderiv(gs.alpha_in, y)
    outer = -0.5 - specfun.tricomi_w_ratio(gs.alpha, y)
    return abs(inner - outer) / max(abs(inner), abs(outer), 1.0)


def solve_ground_state(config: ModelConfig, n_samples: int = 1025) -> GroundState:
    """Radial ground state ``(e0, alpha, nu, C_lambda, interior samples)``."""
    lam = config.lam
    well = config.well
    tol = config.tolerances
    if well.depth == 0.0:
        return _free_ground_state(config, n_samples)
    lo, hi = lam * lam * well.depth, lam
    # panels no wider than lam/2 so neighbouring radial levels are not skipped
    n_panels = max(64, int(math.ceil((hi - lo) / (0.5 * lam))))
    edges = np.linspace(lo, hi, n_panels + 1)[1:-1]
    prev_e, prev_f = None, None
    bracket = None
    for e in edges:
        f = matching_function(e, lam, well)
        if prev_f is not None and np.sign(f) != np.sign(prev_f):
            bracket = (prev_e, e, prev_f, f)
            break
        prev_e, prev_f = e, f
    if bracket is None:
        raise NoBoundStateError(
            f"no sign change of the matching function on ({lo:.6g}, {hi:.6g})")
    e0 = _bisect(lambda e: matching_function(e, lam, well), *bracket,
                 rel=tol.match_rel, max_iter=max(tol.max_iterations, 200))
    return _assemble(config, e0, n_samples)


def _bisect(f, a, b, fa, fb, rel, max_iter):
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
        if abs(b - a) <= 1e-15 * max(abs(a), abs(b)) or abs(b - a) <= rel * 1e-3 * max(abs(a), 1.0):
            break
    else:
        raise ConvergenceError("bisection stagnated")
    # final linear interpolation inside the tiny bracket
    if fb != fa:
        return a - fa * (b - a) / (fb - fa)
    return 0.5 * (a + b)


def _assemble(config: ModelConfig, e0: float, n_samples: int) -> GroundState:
    lam = config.lam
    a = config.well.radius
    alpha = _alpha_out(lam, e0)
    alpha_in = _alpha_in(lam, e0, config.well.depth)
    y_a = 0.5 * lam * a * a
    qtol = config.tolerances.quadrature_rel
    log_m_a = specfun.kummer_m_log(alpha_in, y_a)
    if log_m_a.sign <= 0:
        raise ConsistencyError("interior solution not positive at r = a")
    log_w_a = specfun.tricomi_u_log(alpha, y_a, qtol).log_magnitude

    # unit-matched shapes u(r) = phi(r) / phi(a)
    def log_u_in(r):
        r = np.atleast_1d(r)
        vals = []
        for ri in r:
            y = 0.5 * lam * ri * ri
            m = specfun.kummer_m_log(alpha_in, y)
            if m.sign <= 0:
                raise ConsistencyError("interior ground state changes sign")
            vals.append(-0.5 * (y - y_a) + m.log_magnitude - log_m_a.log_magnitude)
        return np.array(vals)

    x, w = gauss_legendre(96)
    r_in = 0.5 * a * (x + 1.0)
    inner = 2.0 * math.pi * 0.5 * a * np.sum(w * r_in * np.exp(2 * log_u_in(r_in)))

    # outer: (2 pi / lam) int_{y_a}^inf e^{-(y-y_a)} (W(y)/W(y_a))^2 dy, via log y
    u_lo, u_hi = math.log(y_a), math.log(y_a + 80.0)
    cheb = np.polynomial.Chebyshev.interpolate(
        lambda u: np.array([specfun.tricomi_u_log(alpha, float(math.exp(ui)), qtol).log_magnitude
                            for ui in np.atleast_1d(u)]),
        64, domain=[u_lo, u_hi])
    xo, wo = gauss_legendre(200)
    uo = u_lo + 0.5 * (u_hi - u_lo) * (xo + 1.0)
    yo = np.exp(uo)
    integrand = np.exp(-(yo - y_a) + 2.0 * (cheb(uo) - log_w_a)) * yo
    outer = 2.0 * math.pi / lam * 0.5 * (u_hi - u_lo) * np.sum(wo * integrand)

    log_k = -0.5 * math.log(inner + outer)  # phi(a)
    log_c = log_k + 0.5 * y_a - log_w_a
    log_amp_in = log_k + 0.5 * y_a - log_m_a.log_magnitude
    r_s = np.linspace(0.0, a, n_samples)
    phi_s = np.exp(log_k + log_u_in(r_s))
    samples = np.column_stack([r_s, phi_s])
    gs = GroundState(
        e0=e0, alpha=alpha, nu=alpha / lam, c_lambda=math.exp(log_c), log_c_lambda=log_c,
        alpha_in=alpha_in, log_amp_in=log_amp_in, interior_samples=samples, config=config,
    )
    if not np.all(phi_s > 0):
        raise ConsistencyError("ground state samples are not strictly positive")
    object.__setattr__(gs, "matching_residual", log_derivative_mismatch(gs))
    return gs


def _free_ground_state(config: ModelConfig, n_samples: int) -> GroundState:
    # lowest Landau level: e0 = lam, phi = sqrt(lam / 2 pi) exp(-lam r^2 / 4)
    lam = config.lam
    log_c = 0.5 * math.log(lam / (2.0 * math.pi))
    r_s = np.linspace(0.0, config.well.radius, n_samples)
    samples = np.column_stack([r_s, np.exp(log_c - 0.25 * lam * r_s ** 2)])
    return GroundState(e0=lam, alpha=0.0, nu=0.0, c_lambda=math.exp(log_c), log_c_lambda=log_c,
                       alpha_in=0.0, log_amp_in=log_c, interior_samples=samples, config=config)


def evaluate_phi_out(gs: GroundState, r) -> np.ndarray | float:
    """Exterior ground state ``C_lambda exp(-lam r^2/4) W(alpha, lam r^2/2)`` for ``r > a``."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr <= gs.radius):
        raise ValueError("evaluate_phi_out requires r > a; use the interior samples inside")
    out = np.exp(gs.log_phi_out(arr.ravel())).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def norm_check(gs: GroundState) -> tuple[float, float]:
    """(inner, outer) contributions to ||phi||^2.

    The inner part integrates the stored samples (composite Simpson), the
    outer part integrates the exterior form by Gauss-Legendre in ``r``.
    """
    from scipy.integrate import simpson

    r, p = gs.interior_samples[:, 0], gs.interior_samples[:, 1]
    inner = 2.0 * math.pi * simpson(p * p * r, x=r)
    a = gs.radius
    ell = math.sqrt(2.0 / gs.lam)
    r_max = a + 14.0 * ell
    edges = np.linspace(a, r_max, 17)
    x, w = gauss_legendre(40)
    outer = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        rr = lo + 0.5 * (hi - lo) * (x + 1.0)
        outer += 0.5 * (hi - lo) * np.sum(w * rr * np.exp(2.0 * gs.log_phi_out(rr)))
    return inner, 2.0 * math.pi * outer


# -- bounds -----------------------------------------------------------------

def laplace_tstar(nu: float, r: float) -> float:
    """Minimizer ``t*`` of ``r^2 t / 2 + nu log(1 + 1/t)``: ``(sqrt(1 + 8 nu / r^2) - 1) / 2``."""
    if not nu > 0 or not r > 0:
        raise ValueError("laplace_tstar requires nu > 0 and r > 0")
    x = 8.0 * nu / (r * r)
    # (sqrt(1+x) - 1)/2 without cancellation for small x
    return 0.5 * x / (math.sqrt(1.0 + x) + 1.0)


def exterior_exponent(nu: float, r: float) -> float:
    """``q(r) = (1 + 2 t*) r^2 / 4 + nu log(1 + 1/t*)``."""
    t = laplace_tstar(nu, r)
    return 0.25 * (1.0 + 2.0 * t) * r * r + nu * math.log1p(1.0 / t)


@dataclass(frozen=True)
class DecayBounds:
    mu0: float
    mu1: float
    lam: float
    radius: float

    def lower(self, r):
        r = np.asarray(r, dtype=float)
        a2 = self.radius ** 2
        return np.exp(-math.log(self.lam)
                      - (0.25 + self.mu0) * self.lam * ((r * r - a2) + self.mu1))

    def upper(self, r):
        r = np.asarray(r, dtype=float)
        return math.sqrt(self.lam) * np.exp(-0.25 * self.lam * (r * r - self.radius ** 2))

    def log_lower(self, r):
        r = np.asarray(r, dtype=float)
        return (-math.log(self.lam)
                - (0.25 + self.mu0) * self.lam * ((r * r - self.radius ** 2) + self.mu1))

    def log_upper(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * math.log(self.lam) - 0.25 * self.lam * (r * r - self.radius ** 2)


# Frozen prefactors (measured on lam=10, depth=-2, a=0.5 over r in (a, 4]).
# phi_out / envelope at r -> a+ is the extreme ratio for both envelopes.
DECAY_UPPER_PREFACTOR = 0.0941802491636663
DECAY_LOWER_PREFACTOR = 693292950420.3278
NORMALIZATION_UPPER_PREFACTOR = 0.05643146612551871
NORMALIZATION_LOWER_PREFACTOR = 77368495.45905708
PREFACTOR_WINDOW = 10.0


@dataclass(frozen=True)
class EnvelopeCheck:
    r: np.ndarray
    log_phi: np.ndarray
    log_lower: np.ndarray  # prefactor and window applied
    log_upper: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.sum((self.log_phi < self.log_lower) | (self.log_phi > self.log_upper)))

    @property
    def holds(self) -> bool:
        return self.violations == 0


def decay_envelope_check(gs: GroundState, r) -> EnvelopeCheck:
    """Compare ``evaluate_phi_out`` against the decay envelopes with frozen prefactors."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r <= gs.radius):
        raise ValueError("decay envelopes apply for r > a")
    db = decay_bounds(gs)
    lw = math.log(PREFACTOR_WINDOW)
    return EnvelopeCheck(
        r=r, log_phi=gs.log_phi_out(r),
        log_lower=db.log_lower(r) + math.log(DECAY_LOWER_PREFACTOR) - lw,
        log_upper=db.log_upper(r) + math.log(DECAY_UPPER_PREFACTOR) + lw)


def decay_log_slope(gs: GroundState, r_lo: float, r_hi: float, n: int = 64) -> float:
    """Least-squares slope of ``log phi_out`` against ``r^2`` on ``[r_lo, r_hi]``."""
    r = np.linspace(r_lo, r_hi, n)
    return float(np.polyfit(r * r, gs.log_phi_out(r), 1)[0])


def decay_constants(well: WellSpec) -> tuple[float, float]:
    """``(mu0, mu1)`` of the Gaussian lower envelope.

    ``mu1`` is fixed by requiring ``(1/4 + mu0)(r^2 - a^2 + mu1)`` to equal
    ``(1/4 + mu0) r^2 + a (1/4 (a-2)^2 + 2|v_min|) / 2``.
    """
    a = well.radius
    vmin = abs(well.depth)
    mu0 = 2.0 * (vmin / 2.0) ** 0.75 * a ** -1.5
    shift = 0.5 * a * (0.25 * (a - 2.0) ** 2 + 2.0 * vmin)
    mu1 = shift / (0.25 + mu0) + a * a
    return mu0, mu1


def decay_bounds(gs: GroundState) -> DecayBounds:
    mu0, mu1 = decay_constants(gs.config.well)
    return DecayBounds(mu0=mu0, mu1=mu1, lam=gs.lam, radius=gs.radius)


@dataclass(frozen=True)
class OverlapReport:
    value: float
    sup_norm: float
    sup_norm_over_lam2: float


def overlap_well_integral(gs: GroundState) -> OverlapReport:
    """``int_0^a phi(r) (-v0(r)) r dr`` from the interior samples."""
    from scipy.integrate import simpson

    r, p = gs.interior_samples[:, 0], gs.interior_samples[:, 1]
    v = gs.config.well.potential(r)
    value = float(simpson(p * (-v) * r, x=r))
    sup = float(np.max(p))
    if gs.config.well.depth < 0 and not value > 0:
        raise ConsistencyError("overlap integral is not positive")
    return OverlapReport(value=value, sup_norm=sup, sup_norm_over_lam2=sup / gs.lam ** 2)


@dataclass(frozen=True)
class NormalizationBracket:
    log_lower: float
    log_upper: float
    log_c_lambda: float

    @property
    def lower(self) -> float:
        return math.exp(self.log_lower)

    @property
    def upper(self) -> float:
        return math.exp(self.log_upper)

    @property
    def holds(self) -> bool:
        """``C_lambda`` inside the bracket with frozen prefactors and window."""
        lw = math.log(PREFACTOR_WINDOW)
        lo = self.log_lower + math.log(NORMALIZATION_LOWER_PREFACTOR) - lw
        up = self.log_upper + math.log(NORMALIZATION_UPPER_PREFACTOR) + lw
        return lo <= self.log_c_lambda <= up


def normalization_bracket(gs: GroundState) -> NormalizationBracket:
    """Closed-form envelopes for ``C_lambda`` (log form).

    Upper: ``lam (2 pi a (1 + t*^2/(1+2t*)) / (nu q'(a)))^(-1/2) exp(lam q(a))``.
    Lower shape: ``lam^(-1/2) exp(-lam a ((a-2)^2/4 + 2|v_min|) / 2)``.
    """
    lam, nu, a = gs.lam, gs.nu, gs.radius
    vmin = abs(gs.config.well.depth)
    t = laplace_tstar(nu, a)
    q = exterior_exponent(nu, a)
    dq = a * (0.5 + t)
    pref = 2.0 * math.pi * a / (nu * dq) * (1.0 + t * t / (1.0 + 2.0 * t))
    log_up = math.log(lam) - 0.5 * math.log(pref) + lam * q
    log_lo = -0.5 * math.log(lam) - 0.5 * lam * a * (0.25 * (a - 2.0) ** 2 + 2.0 * vmin)
    return NormalizationBracket(log_lower=log_lo, log_upper=log_up, log_c_lambda=gs.log_c_lambda)


PhiFunction = Callable[[np.ndarray], np.ndarray]
