import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from conftest import ground_state
from magsplit.model import reference_config
from magsplit.radial import (DECAY_LOWER_PREFACTOR, DECAY_UPPER_PREFACTOR,
                             NORMALIZATION_LOWER_PREFACTOR, NORMALIZATION_UPPER_PREFACTOR,
                             GroundState, decay_bounds, decay_constants, decay_envelope_check,
                             decay_log_slope, evaluate_phi_out, laplace_tstar,
                             log_derivative_mismatch, norm_check, normalization_bracket,
                             overlap_well_integral, solve_ground_state)

mp.mp.dps = 30


def mismatch_oracle(e, lam, depth, a):
    """Interior minus exterior log-derivative at r = a, in mpmath."""
    e, lam = mp.mpf(e), mp.mpf(lam)
    y = lam * a * a / 2
    a_in = (lam - (e - lam ** 2 * depth)) / (2 * lam)
    a_out = (lam - e) / (2 * lam)
    d_in = mp.diff(lambda t: mp.log(mp.hyp1f1(a_in, 1, t)), y)
    d_out = mp.diff(lambda t: mp.log(mp.hyperu(a_out, 1, t)), y)
    return d_in - d_out


@pytest.mark.parametrize("lam", [6.0, 10.0, 20.0])
def test_e0_is_root_of_independent_matching(lam):
    gs = ground_state(lam)
    h = 1e-7 * abs(gs.e0)
    lo = mismatch_oracle(gs.e0 - h, lam, -2.0, 0.5)
    hi = mismatch_oracle(gs.e0 + h, lam, -2.0, 0.5)
    assert lo * hi < 0


def test_free_case_is_first_landau_level():
    gs = solve_ground_state(reference_config(lam=10.0).with_well(depth=0.0))
    assert gs.e0 == 10.0
    assert gs.is_free
    inner, outer = norm_check(gs)
    assert inner + outer == pytest.approx(1.0, abs=1e-10)
    assert overlap_well_integral(gs).value == 0.0


def test_binding_energy_window(gs10):
    assert 0 < gs10.e0 + 2.0 * 10.0 ** 2 < 5 * 10.0
    assert gs10.alpha > 0 and gs10.c_lambda > 0
    assert 0 < gs10.nu <= 1.0 + 1.0


@pytest.mark.parametrize("lam", [6.0, 10.0, 20.0, 40.0])
def test_normalization_and_matching(lam):
    gs = ground_state(lam)
    inner, outer = norm_check(gs)
    assert inner + outer == pytest.approx(1.0, abs=1e-8)
    assert abs(log_derivative_mismatch(gs)) <= 1e-8 * max(1.0, lam)
    assert np.all(gs.interior_samples[:, 1] > 0)


def test_norm_against_adaptive_quadrature(gs10):
    a = gs10.radius
    inner = quad(lambda r: float(gs10.phi(r)[0]) ** 2 * r, 0, a, epsabs=0, epsrel=1e-12)[0]
    outer = quad(lambda r: evaluate_phi_out(gs10, r) ** 2 * r, a, a + 6, epsabs=0,
                 epsrel=1e-12, limit=200)[0]
    assert 2 * math.pi * (inner + outer) == pytest.approx(1.0, abs=1e-8)


def test_phi_out_against_mpmath(gs10):
    for r in (0.6, 1.0, 1.7, 3.0):
        y = gs10.lam * r * r / 2
        ref = mp.log(mp.gamma(gs10.alpha) * mp.hyperu(gs10.alpha, 1, y)) - y / 2
        got = math.log(evaluate_phi_out(gs10, r)) - gs10.log_c_lambda
        assert got == pytest.approx(float(ref), rel=1e-10)


def test_phi_continuous_at_radius(gs10):
    a = gs10.radius
    inside = gs10.interior_samples[-1, 1]
    outside = evaluate_phi_out(gs10, a * (1 + 1e-12))
    assert outside == pytest.approx(inside, rel=1e-8)


def test_phi_out_decreasing_and_rejects_interior(gs10):
    a = gs10.radius
    assert evaluate_phi_out(gs10, 2 * a) > evaluate_phi_out(gs10, 3 * a) > 0
    with pytest.raises(ValueError):
        evaluate_phi_out(gs10, a)


def test_fast_interpolant_matches_quadrature(gs10):
    r = np.linspace(0.51, 3.9, 50)
    assert np.allclose(gs10.log_phi_out_fast(r), gs10.log_phi_out(r), rtol=0, atol=1e-9)


def test_json_round_trip_exact(gs10):
    again = GroundState.from_json(gs10.to_json())
    r = np.array([0.55, 1.2, 3.3])
    assert np.array_equal(evaluate_phi_out(again, r), evaluate_phi_out(gs10, r))
    assert again.e0 == gs10.e0 and again.c_lambda == gs10.c_lambda


# -- bounds ------------------------------------------------------------------------

def test_mu0_closed_form():
    mu0, mu1 = decay_constants(reference_config().well)
    assert mu0 == pytest.approx(2 * 0.5 ** -1.5, rel=1e-14)
    assert mu1 > 0.25


def test_lower_below_upper(gs10):
    db = decay_bounds(gs10)
    r = np.geomspace(0.5 + 1e-6, 8.0, 200)
    assert np.all(db.log_lower(r) <= db.log_upper(r))
    assert np.all(np.isfinite(db.log_lower(r)))  # positive; linear scale underflows


def test_tstar_closed_forms():
    assert laplace_tstar(1.0, math.sqrt(8.0)) == pytest.approx((math.sqrt(2) - 1) / 2)
    assert laplace_tstar(1.0, 1.0) == pytest.approx(1.0)


def test_frozen_decay_prefactors_remeasured(gs10):
    # sup / inf of phi over the bare envelopes on (a, 4] at the reference well
    db = decay_bounds(gs10)
    r = np.concatenate([[0.5 * (1 + 1e-9)], np.linspace(0.5, 4.0, 4001)[1:]])
    lp = gs10.log_phi_out(r)
    up = math.exp(np.max(lp - db.log_upper(r)))
    lo = math.exp(np.min(lp - db.log_lower(r)))
    assert up == pytest.approx(DECAY_UPPER_PREFACTOR, rel=1e-6)
    assert DECAY_LOWER_PREFACTOR <= lo <= 1.1 * DECAY_LOWER_PREFACTOR


def test_frozen_normalization_prefactors_remeasured(gs10):
    nb = normalization_bracket(gs10)
    assert math.exp(gs10.log_c_lambda - nb.log_upper) == pytest.approx(
        NORMALIZATION_UPPER_PREFACTOR, rel=1e-8)
    assert math.exp(gs10.log_c_lambda - nb.log_lower) == pytest.approx(
        NORMALIZATION_LOWER_PREFACTOR, rel=1e-8)


def test_value_between_envelopes_lam20(gs20):
    chk = decay_envelope_check(gs20, [1.5])
    assert chk.holds


@pytest.mark.parametrize("lam", [10.0, 20.0, 40.0])
def test_normalization_bracket_holds(lam):
    assert normalization_bracket(ground_state(lam)).holds


def test_decay_slope_report(gs40):
    # the fitted slope tracks -lam (1 + 2 t*) / 4, not -lam/4, at these radii
    slope = decay_log_slope(gs40, 0.75, 1.5)
    assert -0.9 * 40 < slope < -0.25 * 40


def test_overlap_floor():
    vals = [overlap_well_integral(ground_state(lam)).value for lam in (10.0, 20.0, 40.0)]
    assert all(v > 0 for v in vals)
    assert min(vals) >= 0.5 * vals[0]
