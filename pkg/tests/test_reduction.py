import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import ground_state
from magsplit.model import reference_config
from magsplit.planar import build_hamiltonian, default_shift, lowest_eigenpairs
from magsplit.reduction import (DIAGNOSTIC_COLUMNS, Deflation, DiagnosticsRow, EffectiveMatrices,
                                ReductionError, SolveStats, SolveStagnation, deflated_pcg,
                                diagnostics_csv, effective_matrices, orbital_basis,
                                quadratic_roots_without_b, resolvent_probe, solve_determinant,
                                splitting_from_reduction)


# -- deflated CG on a small dense problem ------------------------------------------------

def _spd(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return m @ m.conj().T + n * np.eye(n)


def test_deflated_pcg_matches_dense_complement_solve():
    n = 40
    a = _spd(n, 0)
    rng = np.random.default_rng(1)
    basis = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    proj = Deflation(basis)
    rhs = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    stats = SolveStats()
    x = deflated_pcg(lambda v: a @ v, rhs, proj, lambda v: v, rel_tol=1e-13, stats=stats)
    # oracle: solve in an explicit orthonormal basis of the complement
    full, _ = np.linalg.qr(np.column_stack([proj.q, rng.standard_normal((n, n - 2))]))
    c = full[:, 2:]
    y = np.linalg.solve(c.conj().T @ a @ c, c.conj().T @ rhs)
    assert np.allclose(x, c @ y, atol=1e-10)
    assert stats.max_leakage <= 1e-12
    assert proj.leakage(x) <= 1e-12


def test_deflated_pcg_zero_rhs_and_stagnation():
    a = _spd(10, 2)
    proj = Deflation(np.eye(10)[:, :1])
    assert not np.any(deflated_pcg(lambda v: a @ v, np.eye(10)[:, 0], proj, lambda v: v))
    with pytest.raises(SolveStagnation):
        deflated_pcg(lambda v: a @ v, np.ones(10), proj, lambda v: v, rel_tol=1e-30,
                     max_iterations=2)


# -- determinant algebra -----------------------------------------------------------------------

def test_quadratic_roots_without_b():
    assert quadratic_roots_without_b(-3e-7 + 4e-7j) == pytest.approx((-5e-7, 5e-7))


def test_zero_b_gives_exact_roots():
    rho = -2.5e-6 + 1e-7j
    a = np.array([[0.0, rho], [np.conj(rho), 0.0]])
    eff = EffectiveMatrices(pair=SimpleNamespace(overlap=0.0), PHP=a.copy(), rho=rho, A=a,
                            D_of_z=lambda z: np.zeros((2, 2)), stats=SolveStats())
    z_lo, z_hi, diag = solve_determinant(eff)
    assert z_lo == pytest.approx(-abs(rho), rel=1e-12)
    assert z_hi == pytest.approx(abs(rho), rel=1e-12)
    assert diag.max_abs_f == 0.0 and diag.max_abs_g == 0.0


def test_determinant_without_sign_change_is_reported():
    rho = 1e-6
    a = np.array([[0.0, rho], [rho, 0.0]])
    eff = EffectiveMatrices(pair=SimpleNamespace(overlap=0.0), PHP=a + 10 * rho * np.eye(2),
                            rho=rho, A=a, D_of_z=lambda z: np.zeros((2, 2)), stats=SolveStats())
    with pytest.raises(ReductionError):
        solve_determinant(eff)


# -- reference configuration -----------------------------------------------------------------

@pytest.fixture(scope="module")
def eff10():
    return effective_matrices(reference_config(lam=10.0))


def test_orbital_pair_invariants(eff10):
    p = eff10.pair
    assert p.orthogonality <= 1e-12
    assert np.linalg.norm(p.phi0) == pytest.approx(1.0, abs=1e-13)
    assert np.linalg.norm(p.phi_tilde_d) == pytest.approx(1.0, abs=1e-13)
    assert abs(p.overlap) <= math.exp(-10.0 * (2.0 - 0.5) ** 2 / 8)


def test_grid_identity_for_phi0(eff10):
    p = eff10.pair
    direct = np.vdot(p.phi0, p.operator.matrix @ p.phi0 - p.e0 * p.phi0)
    assert abs(direct - np.vdot(p.phi0, p.h_phi0)) <= 1e-8


def test_offdiagonal_envelope(eff10):
    p = eff10.pair
    diff = abs((eff10.PHP - eff10.A)[0, 1])
    bound = abs(p.overlap) * (abs(np.vdot(p.phi0, p.h_phi0)) + eff10.rho_abs)
    assert diff <= bound


def test_a_matrix_structure(eff10):
    a = eff10.A
    assert a[0, 0] == 0 and a[1, 1] == 0
    assert a[0, 1] == np.conj(a[1, 0])
    assert abs(a[0, 1]) == eff10.rho_abs


def test_b_smooth_in_z(eff10):
    r = eff10.rho_abs
    zs = r * np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    vals = np.array([eff10.B_of_z(z) for z in zs])
    second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
    assert np.max(np.abs(second)) <= 1e-6 * max(np.max(np.abs(vals)), r)


def test_reduction_matches_planar_same_spacing(eff10):
    cfg = reference_config(lam=10.0)
    E0, E1, diag = splitting_from_reduction(cfg, eff=eff10)
    op = eff10.pair.operator
    eig = lowest_eigenpairs(op, 2, default_shift(cfg, ground_state(10.0).e0))
    gap = eig.eigenvalues[1] - eig.eigenvalues[0]
    assert abs(E0 - eig.eigenvalues[0]) <= 0.05 * gap
    assert abs(E1 - eig.eigenvalues[1]) <= 0.05 * gap
    assert diag.imag_residue <= 1e-10
    assert diag.max_leakage <= 1e-12
    assert -1.5 < diag.roots_w[0] < -0.5 < 0.5 < diag.roots_w[1] < 1.5


def test_d0_bounded_by_probe(eff10):
    pair = eff10.pair
    probe = resolvent_probe(reference_config(lam=10.0), 0.0, eff=eff10)
    proj = Deflation(np.column_stack([pair.phi0, pair.phi_tilde_d]))
    qhp = np.column_stack([proj(pair.h_phi0), proj(pair.h_phi_tilde_d)])
    coupling = np.linalg.norm(qhp, 2) ** 2
    assert np.linalg.norm(eff10.D_of_z(0.0), 2) <= probe.value * coupling * (1 + 1e-6)
    assert probe.quadratic_form_min > 0


def test_probe_insensitive_to_small_z(eff10):
    cfg = reference_config(lam=10.0)
    p0 = resolvent_probe(cfg, 0.0, eff=eff10)
    p1 = resolvent_probe(cfg, eff10.rho_abs, eff=eff10)
    assert abs(p1.value / p0.value - 1) <= 0.01


def test_single_well_probe_is_inverse_gap():
    cfg = reference_config(lam=10.0)
    probe = resolvent_probe(cfg, 0.0, variant="single")
    op = build_hamiltonian(cfg, "single")
    eig = lowest_eigenpairs(op, 2, default_shift(cfg, ground_state(10.0).e0))
    gap = eig.eigenvalues[1] - eig.eigenvalues[0]
    assert probe.value == pytest.approx(1 / gap, rel=0.1)


def test_probe_rejects_unknown_variant():
    with pytest.raises(ValueError):
        resolvent_probe(reference_config(lam=10.0), 0.0, variant="triple")


def test_orbitals_too_close_rejected():
    cfg = reference_config(lam=1.0, separation=1.1)
    with pytest.raises(ReductionError):
        orbital_basis(cfg, source="radial")


def test_overlap_shrinks_with_separation():
    near = orbital_basis(reference_config(lam=6.0, separation=2.0), source="radial")
    far = orbital_basis(reference_config(lam=6.0, separation=3.0), source="radial")
    assert abs(far.overlap) < abs(near.overlap)


def test_source_validated():
    with pytest.raises(ValueError):
        orbital_basis(reference_config(), source="magic")


def test_diagnostics_csv_format():
    row = DiagnosticsRow(10.0, 1e-7, 2e-7, 2.0000001e-7, 1.0, 1e-6, 1e-9, 0.0556)
    text = diagnostics_csv([row, row])
    lines = text.splitlines()
    assert lines[0] == ",".join(DIAGNOSTIC_COLUMNS)
    assert lines[1] == lines[2] == "10,1e-07,2e-07,2.0000001e-07,1,1e-06,1e-09,0.0556"
