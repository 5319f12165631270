"""Finite-difference magnetic Hamiltonian on a rectangular grid.

The kinetic term uses Peierls link phases for the symmetric-gauge vector
potential ``A(x) = (-x2, x1) / 2`` (field ``+b`` along e3), so the operator
is Hermitian by construction and every plaquette carries flux ``b h^2``.
Grid functions are complex arrays of shape ``(nx, ny)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ModelConfig

WELL_LAYOUTS = ("none", "single", "double")


class GridSizeError(MemoryError):
    """The requested grid would exceed the memory cap."""


class EigenConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    spacing: float
    x: np.ndarray
    y: np.ndarray
    steps_d: int  # separation in grid steps

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x), len(self.y)

    @property
    def size(self) -> int:
        return len(self.x) * len(self.y)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")


def make_grid(config: ModelConfig, spacing: float | None = None) -> Grid:
    """Interior nodes of a box covering both wells plus the margin on every side.

    Nodes sit at integer multiples of the spacing, so both well centres
    (0 and d) are nodes; the box is mirror symmetric about x = d/2.
    """
    h = spacing if spacing is not None else config.grid_spacing()
    steps_d = int(round(config.separation / h))
    if abs(steps_d * h - config.separation) > 1e-9 * config.separation:
        raise ValueError("separation must be an integer multiple of the grid spacing")
    a = config.well.radius
    margin = config.grid.margin_lengths * config.magnetic_length
    n_edge = int(math.ceil((a + margin) / h))
    ix = np.arange(-n_edge + 1, steps_d + n_edge)
    iy = np.arange(-n_edge + 1, n_edge)
    return Grid(spacing=h, x=ix * h, y=iy * h, steps_d=steps_d)


def estimate_bytes(n: int) -> int:
    # operator (5 complex entries per row) plus a generous LU fill factor
    return int(n * (5 * 24 + 60 * 16))


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: sp.csr_matrix = field(repr=False)
    grid: Grid
    b: float
    wells: str
    potential: np.ndarray = field(repr=False)  # lam^2 V at nodes, shape grid.shape

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def norm_estimate(self) -> float:
        h = self.grid.spacing
        return 8.0 / h ** 2 + float(np.max(np.abs(self.potential)))

    def horizontal_phases(self) -> np.ndarray:
        """Link factors on edges (i,j)->(i+1,j); shape (nx-1, ny)."""
        nx, ny = self.grid.shape
        h = self.grid.spacing
        return np.broadcast_to(np.exp(0.5j * self.b * self.grid.y * h), (nx - 1, ny)).copy()

    def vertical_phases(self) -> np.ndarray:
        """Link factors on edges (i,j)->(i,j+1); shape (nx, ny-1)."""
        nx, ny = self.grid.shape
        h = self.grid.spacing
        return np.broadcast_to(np.exp(-0.5j * self.b * self.grid.x * h)[:, None],
                               (nx, ny - 1)).copy()

    def plaquette_phases(self) -> np.ndarray:
        """Product of link factors counter-clockwise around each plaquette."""
        uh = self.horizontal_phases()
        uv = self.vertical_phases()
        return uh[:, :-1] * uv[1:, :] * np.conj(uh[:, 1:]) * np.conj(uv[:-1, :])


def disc_fraction(xc: np.ndarray, yc: np.ndarray, h: float, radius: float,
                  sub: int = 64) -> np.ndarray:
    """Fraction of the cell ``[x-h/2, x+h/2] x [y-h/2, y+h/2]`` inside the disc.

    Cells fully inside or outside are classified exactly; cells cut by the
    circle are supersampled on a ``sub x sub`` midpoint lattice.
    """
    xc = np.asarray(xc, dtype=float)
    yc = np.asarray(yc, dtype=float)
    frac = np.zeros(np.broadcast(xc, yc).shape)
    half_diag = h / math.sqrt(2.0)
    r = np.hypot(xc, yc)
    frac[r + half_diag <= radius] = 1.0
    cut = np.abs(r - radius) < half_diag
    if np.any(cut):
        off = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(off * h, off * h, indexing="ij")
        px = np.broadcast_to(xc, frac.shape)[cut][:, None, None] + ox
        py = np.broadcast_to(yc, frac.shape)[cut][:, None, None] + oy
        frac[cut] = np.mean(np.hypot(px, py) < radius, axis=(1, 2))
    return frac


def well_potential(config: ModelConfig, grid: Grid, wells: str,
                   second_depth: float | None = None) -> np.ndarray:
    """``lam^2 V`` averaged over each grid cell, for the requested well layout.

    Averaging over the cell (rather than sampling at the node) removes the
    staircase dependence of the effective disc area on the spacing, which
    otherwise makes exponentially small quantities such as the tunnelling
    gap jump erratically under refinement.
    """
    if wells not in WELL_LAYOUTS:
        raise ValueError(f"wells must be one of {WELL_LAYOUTS}")
    X, Y = grid.mesh()
    lam2 = config.lam ** 2
    h = grid.spacing
    a = config.well.radius
    pot = np.zeros(grid.shape)
    if wells == "none":
        return pot
    pot += lam2 * config.well.depth * disc_fraction(X, Y, h, a)
    if wells == "double":
        depth = config.well.depth if second_depth is None else second_depth
        pot += lam2 * depth * disc_fraction(X - config.separation, Y, h, a)
    return pot


def build_hamiltonian(config: ModelConfig, wells: str = "double", spacing: float | None = None,
                      max_bytes: float = 3e9, second_depth: float | None = None,
                      b: float | None = None) -> DiscreteOperator:
    """Assemble the 5-point magnetic Hamiltonian with Dirichlet boundary."""
    grid = make_grid(config, spacing)
    need = estimate_bytes(grid.size)
    if need > max_bytes:
        raise GridSizeError(
            f"grid of {grid.size} nodes needs ~{need / 1e9:.1f} GB (> {max_bytes / 1e9:.1f} GB cap); "
            "increase the spacing or reduce margin_lengths")
    b = config.field_strength if b is None else b
    pot = well_potential(config, grid, wells, second_depth)
    nx, ny = grid.shape
    h = grid.spacing
    idx = np.arange(nx * ny).reshape(nx, ny)
    diag = (4.0 / h ** 2 + pot).ravel().astype(complex)

    uh = np.broadcast_to(np.exp(0.5j * b * grid.y * h), (nx - 1, ny))
    uv = np.broadcast_to(np.exp(-0.5j * b * grid.x * h)[:, None], (nx, ny - 1))
    rows = [idx.ravel(), idx[:-1, :].ravel(), idx[1:, :].ravel(),
            idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols = [idx.ravel(), idx[1:, :].ravel(), idx[:-1, :].ravel(),
            idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals = [diag, -uh.ravel() / h ** 2, -np.conj(uh).ravel() / h ** 2,
            -uv.ravel() / h ** 2, -np.conj(uv).ravel() / h ** 2]
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(nx * ny, nx * ny))
    return DiscreteOperator(matrix=mat, grid=grid, b=b, wells=wells, potential=pot)


# -- eigensolver -----------------------------------------------------------------

@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)  # columns, unit l2 norm on the grid
    residual_norms: np.ndarray
    shift: float

    def grid_vector(self, i: int, shape) -> np.ndarray:
        return self.eigenvectors[:, i].reshape(shape)


def _start_block(n: int, p: int, seed: int = 12345) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))


def lowest_eigenpairs(op: DiscreteOperator, k: int, shift: float,
                      tol: float | None = None, max_iterations: int = 500,
                      seed: int = 12345, block: int | None = None, lu=None) -> EigenResult:
    """``k`` lowest eigenpairs above ``shift`` by block shift-invert iteration.

    The shifted operator is factorized once with a sparse LU.  Each sweep
    applies the inverse to an orthonormal block, re-orthonormalizes it (QR)
    and does Rayleigh-Ritz on the inverse.  Extracting energies as
    ``shift + 1/mu`` from the small inverse projection keeps nearly
    degenerate pairs resolved far below ``eps * ||H||``.

    ``tol`` is the absolute residual target ``||H psi - E psi||``; the
    default is ``1e-13 * ||H||_est``.  Iteration also stops once the
    residual stagnates below ``1000 * tol``.
    """
    mat = op.matrix
    n = mat.shape[0]
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < dimension")
    target = 1e-13 * op.norm_estimate() if tol is None else float(tol)
    p = min(n, block if block is not None else max(2 * k, k + 6))
    if lu is None:
        shifted = (mat - shift * sp.identity(n, dtype=complex, format="csc")).tocsc()
        lu = spla.splu(shifted)
    q, _ = np.linalg.qr(_start_block(n, p, seed))
    history = []
    for it in range(max_iterations):
        y = lu.solve(q)
        small = q.conj().T @ y
        small = 0.5 * (small + small.conj().T)
        mu, w = np.linalg.eigh(small)
        order = np.argsort(-mu)  # largest 1/(E - shift) first = lowest E
        mu, w = mu[order], w[:, order]
        vecs = q @ w[:, :k]
        energies = shift + 1.0 / mu[:k]
        resid = np.linalg.norm(mat @ vecs - vecs * energies, axis=0)
        worst = float(np.max(resid))
        history.append(worst)
        if worst <= target:
            break
        if (len(history) > 6 and worst <= 1e3 * target
                and worst > 0.5 * history[-4]):
            break
        q, _ = np.linalg.qr(y @ w)
    else:
        raise EigenConvergenceError(
            f"block shift-invert iteration did not converge in {max_iterations} sweeps: "
            f"residuals {resid}, target {target:.3e}")
    return EigenResult(eigenvalues=energies, eigenvectors=vecs, residual_norms=resid, shift=shift)


# -- magnetic translation ------------------------------------------------------------

def magnetic_translate(state: np.ndarray, grid: Grid, b: float, steps: int) -> np.ndarray:
    """Magnetic translation by ``steps * h`` along x.

    ``(R psi)(x) = exp(i b (z ^ x) / 2) psi(x - z)`` with ``z ^ x = z1 x2``;
    nodes whose source lies outside the box are set to zero.
    """
    if int(steps) != steps:
        raise ValueError("magnetic_translate needs an integer number of steps")
    steps = int(steps)
    state = np.asarray(state).reshape(grid.shape)
    out = np.zeros(grid.shape, dtype=complex)
    if steps >= 0:
        out[steps:, :] = state[:grid.shape[0] - steps, :]
    else:
        out[:steps, :] = state[-steps:, :]
    z1 = steps * grid.spacing
    return out * np.exp(0.5j * b * z1 * grid.y)[None, :]


def radial_orbital(gs, grid: Grid, center: float = 0.0, b: float | None = None) -> np.ndarray:
    """Sample ``phi(|x - c|)`` on the grid, with the magnetic phase for ``c != 0``.

    Values are scaled by ``h`` so that the grid l2 norm approximates the L2 norm.
    """
    X, Y = grid.mesh()
    r = np.hypot(X - center, Y)
    vals = gs.phi(r.ravel()).reshape(grid.shape).astype(complex)
    if center != 0.0:
        b = gs.config.field_strength if b is None else b
        vals = vals * np.exp(0.5j * b * center * Y)
    return vals * grid.spacing


def default_shift(config: ModelConfig, e0_estimate: float) -> float:
    return e0_estimate - 0.1 * config.lam


def eigen_resolution(config: ModelConfig, e0: float) -> float:
    """Smallest gap treated as resolved: ``10 * eigen_rel * |E0|``."""
    return 10.0 * config.tolerances.eigen_rel * abs(e0)


# -- Landau level and single well ----------------------------------------------------

@dataclass(frozen=True)
class LandauReport:
    eigenvalues: np.ndarray
    lam: float
    residual_norms: np.ndarray

    @property
    def lowest(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def relative_error(self) -> float:
        return abs(self.lowest / self.lam - 1.0)

    @property
    def passed(self) -> bool:
        return self.relative_error <= 0.01


def landau_check(config: ModelConfig, k: int = 4) -> LandauReport:
    """Lowest eigenvalues of the well-free operator; they should sit at ``b``.

    The lowest Landau level is massively degenerate, so only the residual is
    converged (to ``eigen_rel * ||H||``), not individual eigenvectors.
    """
    op = build_hamiltonian(config, "none")
    res = lowest_eigenpairs(op, k, 0.0, tol=config.tolerances.eigen_rel * op.norm_estimate())
    return LandauReport(eigenvalues=res.eigenvalues, lam=config.field_strength,
                        residual_norms=res.residual_norms)


# single-well gap e1 - e0 at lam=10 on the reference well (spacing l/16); the
# floor asserted across the lam grid is this value divided by the window
SINGLE_WELL_GAP_REFERENCE = 17.96
SINGLE_WELL_GAP_FLOOR = SINGLE_WELL_GAP_REFERENCE / 10.0


def single_well_levels(config: ModelConfig, e0_estimate: float, k: int = 2,
                       spacing: float | None = None) -> EigenResult:
    """Lowest ``k`` eigenpairs of the operator with only the well at the origin."""
    op = build_hamiltonian(config, "single", spacing=spacing)
    return lowest_eigenpairs(op, k, default_shift(config, e0_estimate))


# -- splitting ------------------------------------------------------------------------

def refinement_spacings(config: ModelConfig, levels: int = 3) -> tuple[float, ...]:
    """Spacings ``h, 2h/3, h/2`` (for three levels) that all divide the separation.

    When the separation is an integer multiple of the radius the spacings are
    also chosen to divide the radius, so the disc edge meets the grid the same
    way at every level and the gap converges smoothly in ``h^2``.
    """
    if levels not in (1, 2, 3):
        raise ValueError("levels must be 1, 2 or 3")
    d, a = config.separation, config.well.radius
    target = config.grid.spacing if config.grid.spacing is not None else config.magnetic_length / 8.0
    ratio = d / a
    unit = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 else 1
    # n = number of steps across the separation, a multiple of `unit`
    base = max(1, math.ceil(d / (target * unit) - 1e-12))
    # make the base divisible by 2 so the 2h/3 and h/2 levels stay commensurate
    base += base % 2
    mults = [base, base * 3 // 2, base * 2][:levels]
    return tuple(d / (m * unit) for m in mults)


def richardson_h2(spacings, values) -> float:
    """Extrapolate ``values(h)`` to ``h = 0`` assuming an expansion in ``h^2``."""
    h2 = np.asarray(spacings, dtype=float) ** 2
    v = np.asarray(values, dtype=float)
    if len(v) == 1:
        return float(v[0])
    coeffs = np.polyfit(h2, v, len(v) - 1)
    return float(coeffs[-1])


@dataclass(frozen=True)
class SplittingLevel:
    spacing: float
    dimension: int
    E0: float
    E1: float
    residuals: tuple[float, float]

    @property
    def gap(self) -> float:
        return self.E1 - self.E0


@dataclass(frozen=True)
class SplittingReport:
    E0: float
    E1: float
    gap: float
    rho_abs: float
    ratio: float
    gap_extrapolated: float
    ratio_extrapolated: float
    lower_bound: float
    upper_bound: float
    log_lower_bound: float
    log_upper_bound: float
    resolved: bool
    bounds_applicable: bool
    residuals: tuple[float, float]
    parity_overlaps: tuple[float, float, float, float]
    levels: tuple[SplittingLevel, ...] = ()
    eigen: EigenResult | None = field(default=None, repr=False)
    operator: DiscreteOperator | None = field(default=None, repr=False)

    @property
    def status(self) -> str:
        return "resolved" if self.resolved else "gap unresolved at this lam"

    @property
    def within_bounds(self) -> bool:
        return self.lower_bound <= self.gap_extrapolated <= self.upper_bound


def parity_overlaps(op: DiscreteOperator, gs, eig: EigenResult) -> tuple[float, float, float, float]:
    """``|<phi0,psi0>|, |<phi_d,psi0>|, |<phi0,psi1>|, |<phi_d,psi1>|`` on the grid."""
    grid = op.grid
    phi0 = radial_orbital(gs, grid, 0.0, op.b)
    phi0 /= np.linalg.norm(phi0)
    phid = magnetic_translate(phi0, grid, op.b, grid.steps_d)
    psi0 = eig.eigenvectors[:, 0]
    psi1 = eig.eigenvectors[:, 1]
    return (abs(np.vdot(phi0.ravel(), psi0)), abs(np.vdot(phid.ravel(), psi0)),
            abs(np.vdot(phi0.ravel(), psi1)), abs(np.vdot(phid.ravel(), psi1)))


def splitting(config: ModelConfig, levels: int = 3, gs=None, hopping=None,
              max_bytes: float = 3e9) -> SplittingReport:
    """Double-well splitting ``E1 - E0`` compared with ``2 |rho|``.

    The pair is computed at the spacings of :func:`refinement_spacings`; the
    raw fields (``E0``, ``E1``, ``gap``, ``ratio``) belong to the finest level
    and ``gap_extrapolated`` is the ``h -> 0`` Richardson estimate.  The
    bounds are twice the hopping envelopes, since the gap is ``2|rho|`` to
    leading order.
    """
    from .hopping import hopping_all_routes
    from .model import validate
    from .radial import solve_ground_state

    if gs is None:
        gs = solve_ground_state(config)
    if hopping is None:
        hopping = hopping_all_routes(gs, config.separation)
    rho_abs = math.exp(hopping.log_abs_rho)
    shift = default_shift(config, gs.e0)
    out = []
    eig = op = None
    for h in refinement_spacings(config, levels):
        op = build_hamiltonian(config, "double", spacing=h, max_bytes=max_bytes)
        eig = lowest_eigenpairs(op, 2, shift)
        out.append(SplittingLevel(spacing=h, dimension=op.dimension,
                                  E0=float(eig.eigenvalues[0]), E1=float(eig.eigenvalues[1]),
                                  residuals=tuple(float(x) for x in eig.residual_norms)))
    fine = out[-1]
    gap_ext = richardson_h2([lv.spacing for lv in out], [lv.gap for lv in out])
    resolved = all(lv.gap > eigen_resolution(config, lv.E0) for lv in out)
    log_lo = math.log(2.0) + hopping.log_lower_bound
    log_up = math.log(2.0) + hopping.log_upper_bound
    return SplittingReport(
        E0=fine.E0, E1=fine.E1, gap=fine.gap, rho_abs=rho_abs,
        ratio=fine.gap / (2.0 * rho_abs),
        gap_extrapolated=gap_ext, ratio_extrapolated=gap_ext / (2.0 * rho_abs),
        lower_bound=math.exp(log_lo), upper_bound=math.exp(log_up),
        log_lower_bound=log_lo, log_upper_bound=log_up,
        resolved=resolved, bounds_applicable=validate(config).strict_spacing,
        residuals=fine.residuals, parity_overlaps=parity_overlaps(op, gs, eig),
        levels=tuple(out), eigen=eig, operator=op)
