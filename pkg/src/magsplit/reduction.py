"""Schur-complement reduction of the double-well problem onto the orbital plane.

The centred operator ``HC = H - e0`` is split along ``V = span{phi0, phi_d}``
and its orthogonal complement.  Eliminating the complement leaves the 2x2
condition ``det[PHP - z + D(z)] = 0``, written as a perturbation ``B(z)`` of
the hopping matrix ``A = [[0, rho], [conj(rho), 0]]``.

By default the orbitals are grid-native: ``phi0`` is the lowest eigenvector
of the single-well grid operator and ``phi_d`` its discrete magnetic
translate.  Then ``HC phi0 = lam^2 v_d phi0`` and ``HC phi_d = lam^2 v_0 phi_d``
hold on the grid, and those products are formed from the potentials instead
of by a matvec, which would swamp them with rounding at large lam.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .model import ModelConfig
from .planar import (DiscreteOperator, EigenConvergenceError, build_hamiltonian,
                     default_shift, lowest_eigenpairs, magnetic_translate, radial_orbital)

OVERLAP_LIMIT = 0.5
BRACKET_HALF_WIDTH = 0.5  # epsilon of the root brackets in w
SWEEP_RADIUS = 2.0        # K of the |w| <= K sweep for f and g


class ReductionError(RuntimeError):
    """The reduction does not apply (wells too close, no sign change in a bracket)."""


class SolveStagnation(RuntimeError):
    """A deflated inner solve failed to reach its tolerance."""


# -- deflated solves ----------------------------------------------------------------

class Deflation:
    """Orthogonal projector onto the complement of the columns of ``basis``."""

    def __init__(self, basis: np.ndarray):
        q, _ = np.linalg.qr(np.asarray(basis, dtype=complex).reshape(basis.shape[0], -1))
        self.q = q

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = x - self.q @ (self.q.conj().T @ x)
        # second pass: classical Gram-Schmidt twice is enough for orthogonality to eps
        return x - self.q @ (self.q.conj().T @ x)

    def leakage(self, x: np.ndarray) -> float:
        nx = np.linalg.norm(x)
        return float(np.max(np.abs(self.q.conj().T @ x)) / nx) if nx else 0.0


@dataclass
class SolveStats:
    iterations: int = 0
    solves: int = 0
    max_leakage: float = 0.0
    worst_relres: float = 0.0


def deflated_pcg(matvec, rhs: np.ndarray, project: Deflation, precond,
                 rel_tol: float = 1e-12, max_iterations: int = 500,
                 stats: SolveStats | None = None) -> np.ndarray:
    """Solve ``P (HC - z) P u = P rhs`` on the complement by preconditioned CG.

    Every iterate, residual and search direction is re-projected, so ``u``
    never picks up components along the deflated vectors.
    """
    b = project(rhs)
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    if nb == 0:
        return x
    r = b.copy()
    zv = project(precond(r))
    p = zv.copy()
    rz = np.vdot(r, zv)
    for it in range(1, max_iterations + 1):
        ap = project(matvec(p))
        alpha = rz / np.vdot(p, ap)
        x = project(x + alpha * p)
        r = project(r - alpha * ap)
        if stats is not None:
            stats.max_leakage = max(stats.max_leakage, project.leakage(x))
        rel = np.linalg.norm(r) / nb
        if rel <= rel_tol:
            if stats is not None:
                stats.iterations += it
                stats.solves += 1
                stats.worst_relres = max(stats.worst_relres, float(rel))
            return x
        zv = project(precond(r))
        rz_new = np.vdot(r, zv)
        p = project(zv + (rz_new / rz) * p)
        rz = rz_new
    raise SolveStagnation(
        f"deflated CG stalled at relative residual {rel:.3e} after {max_iterations} "
        f"iterations (leakage {project.leakage(x):.2e})")


# -- orbital basis ---------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitalPair:
    phi0: np.ndarray = field(repr=False)         # flat, unit norm
    phi_d: np.ndarray = field(repr=False)        # magnetic translate of phi0
    phi_tilde_d: np.ndarray = field(repr=False)  # Gram-Schmidt partner, unit norm
    overlap: complex                             # <phi0, phi_d>
    e0: float                                    # centring energy
    source: str
    h_phi0: np.ndarray = field(repr=False)       # HC phi0
    h_phi_d: np.ndarray = field(repr=False)      # HC phi_d
    operator: DiscreteOperator = field(repr=False)

    @property
    def h_phi_tilde_d(self) -> np.ndarray:
        norm = math.sqrt(1.0 - abs(self.overlap) ** 2)
        return (self.h_phi_d - self.overlap * self.h_phi0) / norm

    @property
    def orthogonality(self) -> float:
        return abs(np.vdot(self.phi0, self.phi_tilde_d))


def _ground_vector(op: DiscreteOperator, shift: float) -> tuple[np.ndarray, float]:
    # converge to the rounding floor: the reduction divides by |rho|, which is
    # exponentially small, so eigen residuals show up directly in B(z)
    res = lowest_eigenpairs(op, 1, shift, tol=1e-16 * op.norm_estimate())
    v = res.eigenvectors[:, 0]
    # fix the global phase: real and positive at the largest entry
    k = int(np.argmax(np.abs(v)))
    v = v * (abs(v[k]) / v[k])
    v = v / np.linalg.norm(v)
    e = float(np.real(np.vdot(v, op.matrix @ v)))
    return v, e


def orbital_basis(config: ModelConfig, spacing: float | None = None, source: str = "grid",
                  gs=None, op: DiscreteOperator | None = None) -> OrbitalPair:
    """Build ``phi0``, ``phi_d`` and the orthonormal partner ``phi_tilde_d``."""
    from .radial import solve_ground_state

    if source not in ("grid", "radial"):
        raise ValueError("source must be 'grid' or 'radial'")
    if gs is None:
        gs = solve_ground_state(config)
    if op is None:
        op = build_hamiltonian(config, "double", spacing=spacing)
    grid = op.grid
    single = build_hamiltonian(config, "single", spacing=grid.spacing)
    v0 = single.potential.ravel()
    vd = op.potential.ravel() - v0
    if source == "grid":
        phi0, e0 = _ground_vector(single, default_shift(config, gs.e0))
    else:
        phi0 = radial_orbital(gs, grid, 0.0, op.b).ravel()
        phi0 = phi0 / np.linalg.norm(phi0)
        e0 = float(gs.e0)
    phi_d = magnetic_translate(phi0, grid, op.b, grid.steps_d).ravel()
    overlap = complex(np.vdot(phi0, phi_d))
    if abs(overlap) >= OVERLAP_LIMIT:
        raise ReductionError(
            f"|<phi0, phi_d>| = {abs(overlap):.3f} >= {OVERLAP_LIMIT}: wells too close "
            "for the orbital reduction")
    tilde = phi_d - overlap * phi0
    tilde = tilde / np.linalg.norm(tilde)
    # re-orthogonalize once against phi0 (Gram-Schmidt twice)
    tilde = tilde - np.vdot(phi0, tilde) * phi0
    tilde = tilde / np.linalg.norm(tilde)
    if source == "grid":
        h0 = vd * phi0
        hd = v0 * phi_d
    else:
        h0 = op.matrix @ phi0 - e0 * phi0
        hd = op.matrix @ phi_d - e0 * phi_d
    return OrbitalPair(phi0=phi0, phi_d=phi_d, phi_tilde_d=tilde, overlap=overlap, e0=e0,
                       source=source, h_phi0=h0, h_phi_d=hd, operator=op)


# -- effective matrices ------------------------------------------------------------------

@dataclass
class EffectiveMatrices:
    pair: OrbitalPair = field(repr=False)
    PHP: np.ndarray            # 2x2 in the basis {phi0, phi_tilde_d}
    rho: complex               # <phi0, HC phi_d>
    A: np.ndarray
    D_of_z: Callable[[float], np.ndarray] = field(repr=False)
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def rho_abs(self) -> float:
        return abs(self.rho)

    def B_of_z(self, z: float) -> np.ndarray:
        return self.PHP - self.A + self.D_of_z(z)

    def f(self, w: float) -> float:
        """``tr B(|rho| w) / |rho|``."""
        b = self.B_of_z(self.rho_abs * w)
        return float(np.real(np.trace(b))) / self.rho_abs

    def g(self, w: float) -> float:
        """``(det B + tr(det(A) A^-1 B)) / |rho|^2`` at ``z = |rho| w``."""
        b = self.B_of_z(self.rho_abs * w)
        adj = np.array([[0.0, -self.rho], [-np.conj(self.rho), 0.0]])  # det(A) A^-1
        val = np.linalg.det(b) + np.trace(adj @ b)
        return float(np.real(val)) / self.rho_abs ** 2

    def determinant(self, z: float) -> complex:
        """``det[[-z, rho], [conj rho, -z]] + B(z)]``."""
        m = self.PHP - z * np.eye(2) + self.D_of_z(z)
        return complex(np.linalg.det(m))


def effective_matrices(config: ModelConfig, centered: bool = True, spacing: float | None = None,
                       source: str = "grid", pair: OrbitalPair | None = None,
                       rel_tol: float = 1e-12) -> EffectiveMatrices:
    """``PHP``, ``A``, and a ``D(z)`` evaluator built on deflated CG solves.

    ``D(z) = -P HC Q (Q (HC - z) Q)^-1 Q HC P`` with ``Q`` the complement
    projector; the inner solves are preconditioned with one sparse LU of
    ``HC - sigma`` for a shift ``sigma`` below the spectrum.
    """
    if not centered:
        raise ValueError("the reduction is defined for the centred operator H - e0")
    if pair is None:
        pair = orbital_basis(config, spacing=spacing, source=source)
    op = pair.operator
    n = op.dimension
    e0 = pair.e0
    basis = np.column_stack([pair.phi0, pair.phi_tilde_d])
    hb = np.column_stack([pair.h_phi0, pair.h_phi_tilde_d])
    php = basis.conj().T @ hb
    php = 0.5 * (php + php.conj().T)
    rho = complex(np.vdot(pair.phi0, pair.h_phi_d))
    a_mat = np.array([[0.0, rho], [np.conj(rho), 0.0]])

    project = Deflation(basis)
    sigma = default_shift(config, e0) - e0  # relative to e0, below the spectrum
    lu = spla.splu((op.matrix - (e0 + sigma) * sp.identity(n, dtype=complex, format="csc")).tocsc())
    mat = op.matrix
    stats = SolveStats()
    rhs = np.column_stack([project(hb[:, 0]), project(hb[:, 1])])
    cache: dict[float, np.ndarray] = {}

    def d_of_z(z: float) -> np.ndarray:
        z = float(z)
        if z in cache:
            return cache[z]

        def mv(x):
            return mat @ x - (e0 + z) * x

        cols = [deflated_pcg(mv, rhs[:, j], project, lu.solve, rel_tol=rel_tol,
                             max_iterations=config.tolerances.max_iterations * 5, stats=stats)
                for j in range(2)]
        u = np.column_stack(cols)
        d = -(rhs.conj().T @ u)
        d = 0.5 * (d + d.conj().T)
        cache[z] = d
        return d

    return EffectiveMatrices(pair=pair, PHP=php, rho=rho, A=a_mat, D_of_z=d_of_z, stats=stats)


# -- roots -------------------------------------------------------------------------------

@dataclass(frozen=True)
class ReductionDiagnostics:
    rho_abs: float
    roots_w: tuple[float, float]
    max_abs_f: float
    max_abs_g: float
    max_leakage: float
    imag_residue: float
    overlap: float
    inner_iterations: int


def _root_in(fun, lo: float, hi: float, xtol: float) -> float:
    flo, fhi = fun(lo), fun(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise ReductionError(
            f"no sign change of the determinant on w in [{lo}, {hi}]: reduction not valid "
            "at this lam")
    return brentq(fun, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def solve_determinant(eff: EffectiveMatrices, eps: float = BRACKET_HALF_WIDTH,
                      sweep_radius: float = SWEEP_RADIUS,
                      n_sweep: int = 9) -> tuple[float, float, ReductionDiagnostics]:
    """Roots ``z_-, z_+`` of the reduced determinant in the brackets around ``w = -1, +1``."""
    scale = eff.rho_abs
    if scale == 0:
        raise ReductionError("rho vanishes; the orbitals do not couple")

    def fw(w):
        return eff.determinant(scale * w).real / scale ** 2

    w_minus = _root_in(fw, -1.0 - eps, -1.0 + eps, 1e-13)
    w_plus = _root_in(fw, 1.0 - eps, 1.0 + eps, 1e-13)
    imag = max(abs(eff.determinant(scale * w).imag) / scale ** 2 for w in (w_minus, w_plus))
    ws = np.linspace(-sweep_radius, sweep_radius, n_sweep)
    fmax = max(abs(eff.f(w)) for w in ws)
    gmax = max(abs(eff.g(w)) for w in ws)
    diag = ReductionDiagnostics(
        rho_abs=scale, roots_w=(w_minus, w_plus), max_abs_f=fmax, max_abs_g=gmax,
        max_leakage=eff.stats.max_leakage, imag_residue=imag,
        overlap=abs(eff.pair.overlap), inner_iterations=eff.stats.iterations)
    return scale * w_minus, scale * w_plus, diag


def splitting_from_reduction(config: ModelConfig, spacing: float | None = None,
                             source: str = "grid",
                             eff: EffectiveMatrices | None = None):
    """``(E0, E1, diagnostics)`` from the roots of the reduced 2x2 determinant."""
    if eff is None:
        eff = effective_matrices(config, spacing=spacing, source=source)
    z_lo, z_hi, diag = solve_determinant(eff)
    return eff.pair.e0 + z_lo, eff.pair.e0 + z_hi, diag


def quadratic_roots_without_b(rho: complex) -> tuple[float, float]:
    """Roots of ``det[[-z, rho], [conj rho, -z]] = 0``: ``-|rho|, +|rho|``."""
    return -abs(rho), abs(rho)


# -- resolvent probe ------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolventProbe:
    value: float            # estimate of ||(Q (HC - z) Q)^-1||
    sigma_min: float        # 1 / value
    z: float
    variant: str
    outer_iterations: int
    quadratic_form_min: float  # min Rayleigh quotient of HC over sampled complement vectors
    max_leakage: float


def resolvent_probe(config: ModelConfig, z: float = 0.0, variant: str = "double",
                    spacing: float | None = None, eff: EffectiveMatrices | None = None,
                    rel_tol: float = 1e-6, max_outer: int = 200, n_samples: int = 8,
                    seed: int = 2024) -> ResolventProbe:
    """``1 / sigma_min`` of ``Q (HC - z) Q`` on the complement by inverse iteration.

    ``variant='double'`` deflates ``span{phi0, phi_tilde_d}`` of the two-well
    operator; ``variant='single'`` deflates only ``phi0`` of the single-well
    operator, for which the probe should be ``1/(e1 - e0)``.
    """
    from .radial import solve_ground_state

    if variant not in ("double", "single"):
        raise ValueError("variant must be 'double' or 'single'")
    gs = solve_ground_state(config)
    if variant == "double":
        if eff is None:
            eff = effective_matrices(config, spacing=spacing)
        pair = eff.pair
        op = pair.operator
        basis = np.column_stack([pair.phi0, pair.phi_tilde_d])
        e0 = pair.e0
    else:
        op = build_hamiltonian(config, "single", spacing=spacing)
        phi0, e0 = _ground_vector(op, default_shift(config, gs.e0))
        basis = phi0[:, None]
    n = op.dimension
    project = Deflation(basis)
    sigma = default_shift(config, e0)
    lu = spla.splu((op.matrix - sigma * sp.identity(n, dtype=complex, format="csc")).tocsc())
    mat = op.matrix
    stats = SolveStats()

    def mv(x):
        return mat @ x - (e0 + z) * x

    rng = np.random.default_rng(seed)
    x = project(rng.standard_normal(n) + 1j * rng.standard_normal(n))
    x /= np.linalg.norm(x)
    # warm start: a few preconditioner sweeps pull x towards the bottom of the spectrum
    for _ in range(4):
        x = project(lu.solve(x))
        x /= np.linalg.norm(x)
    mu_old = math.inf
    for it in range(1, max_outer + 1):
        y = deflated_pcg(mv, x, project, lu.solve, rel_tol=1e-10,
                         max_iterations=config.tolerances.max_iterations * 5, stats=stats)
        ny = np.linalg.norm(y)
        x = y / ny
        mu = float(np.real(np.vdot(x, mv(x))))  # Rayleigh quotient of Q(HC - z)Q
        if abs(mu - mu_old) <= rel_tol * abs(mu):
            break
        mu_old = mu
    else:
        raise EigenConvergenceError(
            f"resolvent probe inverse iteration did not converge in {max_outer} steps")
    qmin = math.inf
    for _ in range(n_samples):
        psi = project(rng.standard_normal(n) + 1j * rng.standard_normal(n))
        for _ in range(2):  # smooth the random vector so the quotient is informative
            psi = project(lu.solve(psi))
        qmin = min(qmin, float(np.real(np.vdot(psi, mv(psi) + z * psi)) / np.vdot(psi, psi).real))
    return ResolventProbe(value=1.0 / mu, sigma_min=mu, z=z, variant=variant,
                          outer_iterations=it, quadratic_form_min=qmin,
                          max_leakage=stats.max_leakage)


# -- headline table ---------------------------------------------------------------------------

DIAGNOSTIC_COLUMNS = ("lambda", "rho_abs", "gap_planar", "gap_reduction", "ratio",
                      "max_abs_f", "max_abs_g", "resolvent_probe")


@dataclass(frozen=True)
class DiagnosticsRow:
    lam: float
    rho_abs: float
    gap_planar: float
    gap_reduction: float
    ratio: float
    max_abs_f: float
    max_abs_g: float
    resolvent_probe: float

    def values(self) -> tuple:
        return (self.lam, self.rho_abs, self.gap_planar, self.gap_reduction, self.ratio,
                self.max_abs_f, self.max_abs_g, self.resolvent_probe)


def diagnostics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIAGNOSTIC_COLUMNS)
    for row in rows:
        w.writerow([f"{v:.12g}" for v in row.values()])
    return buf.getvalue()
