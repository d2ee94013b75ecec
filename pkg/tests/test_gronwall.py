import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermobeam.gronwall import (
    InequalityReport,
    entering_times,
    linear_closed_form,
    minimal_K,
    verify_exponential,
    verify_superlinear,
)


# superlinear comparison ODE -----------------------------------------------

@pytest.mark.parametrize("Q,eps0,L0", [(0.5, 0.5, 10.0), (0.01, 0.1, 0.0), (2.0, 1.0, 100.0)])
def test_linear_case_matches_closed_form(Q, eps0, L0):
    rep = verify_superlinear(0.0, Q, eps0, L0, horizon=12.0 / eps0)
    ref = linear_closed_form(Q, eps0, L0, rep.times)
    np.testing.assert_allclose(rep.values, ref, rtol=1e-10)
    assert rep.satisfied and math.isfinite(rep.entering_time)


def test_pure_decay_rate():
    rep = verify_superlinear(0.0, 0.0, 0.3, 5.0, phi=0.0, horizon=10.0)
    np.testing.assert_allclose(rep.values, 5.0 * np.exp(-0.3 * rep.times), rtol=1e-6)


def test_zero_start_zero_forcing():
    rep = verify_superlinear(1.0, 0.0, 0.5, 0.0, phi=0.0, horizon=5.0)
    assert np.all(rep.values == 0)
    assert rep.entering_time == 0.0 and rep.satisfied


def test_superlinear_absorbs():
    rep = verify_superlinear(1.0, 0.01, 0.5, 10.0, horizon=100.0)
    assert rep.satisfied
    assert rep.first_violation_time is None
    assert rep.margin > 0
    assert rep.values[-1] < rep.R1_emp


def test_entering_time_monotone_in_start():
    times = entering_times(1.0, 0.1, 1.0, [1.0, 10.0, 100.0], horizon=200.0)
    assert all(math.isfinite(t) for t in times)
    assert times[0] < times[1] < times[2]


def test_doubling_start_delays_entry():
    a, b = entering_times(1.0, 0.1, 1.0, [20.0, 40.0], horizon=150.0)
    assert b > a


def test_equality_ode_residual():
    # the returned series solves the worst case of its own inequality
    K, Q, eps0 = 1.0, 0.1, 1.0
    rep = verify_superlinear(K, Q, eps0, 50.0, horizon=20.0, sample_dt=1e-3)
    t, L = rep.times, rep.values
    dL = (L[2:] - L[:-2]) / (t[2:] - t[:-2])
    Lm = L[1:-1]
    eps = np.minimum(eps0, 1.0 / (2 * K * np.sqrt(Lm)))
    res = dL + eps * Lm - K * eps ** 2 * Lm ** 1.5 - eps ** (-2 / 3) * Q
    assert np.max(np.abs(res)) < 1e-5


def test_tabulated_phi():
    t = np.linspace(0, 50, 501)
    phi = (t, 0.05 * (1 + np.sin(t)))
    rep = verify_superlinear(1.0, 0.0, 0.5, 5.0, phi=phi, horizon=50.0)
    assert np.all(np.isfinite(rep.values))
    with pytest.raises(ValueError):
        verify_superlinear(1.0, 0.0, 0.5, 5.0, phi=(t, t[:-1]))


def test_blowup_reported():
    # a huge eps0 with no cap on eps would be benign; force growth through phi instead
    rep = verify_superlinear(0.0, 1e6, 1e-6, 1.0, horizon=1.0, cap=1e10)
    assert not rep.satisfied
    assert rep.first_violation_time is not None


def test_superlinear_argument_checks():
    with pytest.raises(ValueError):
        verify_superlinear(-1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        verify_superlinear(1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        verify_superlinear(1.0, 0.0, 1.0, -1.0)


def test_report_consistency_enforced():
    with pytest.raises(ValueError):
        InequalityReport(True, 1.0, 0.0)
    with pytest.raises(ValueError):
        InequalityReport(False, None, 0.0)


# exponential lemma --------------------------------------------------------

def test_exponential_no_forcing():
    t = np.linspace(0, 10, 1001)
    nu = 0.4
    L = 3.0 * np.exp(-2 * nu * t)
    # with K = 0 both slacks vanish only in the limit t -> s
    rep = verify_exponential(t, L, np.zeros_like(t), nu, 0.0)
    assert rep.satisfied
    assert rep.hypothesis_margin == 0.0 and rep.conclusion_margin == 0.0
    rep = verify_exponential(t, L, np.zeros_like(t), nu, 0.5)
    assert rep.satisfied
    assert rep.hypothesis_margin == pytest.approx(0.5 / 1.5)
    assert rep.conclusion_margin == pytest.approx(1 - math.exp(-0.5), rel=1e-12)


def test_exponential_tight_case():
    t = np.linspace(0, 10, 1001)
    nu = 0.4
    psi = np.full_like(t, nu)
    rep = verify_exponential(t, 3.0 * np.exp(-nu * t), psi, nu, 0.0)
    assert rep.hypothesis_satisfied and rep.conclusion_satisfied
    assert abs(rep.hypothesis_margin) < 1e-12
    assert abs(rep.conclusion_margin) < 1e-12
    bad = verify_exponential(t, 3.0 * np.exp(-0.9 * nu * t), psi, nu, 0.0)
    assert not bad.satisfied and not bad.conclusion_satisfied
    assert bad.first_violation_time == pytest.approx(t[1])


def test_exponential_hypothesis_violation():
    t = np.linspace(0, 10, 1001)
    psi = np.where((t > 4) & (t < 5), 5.0, 0.0)
    rep = verify_exponential(t, np.exp(-t), psi, 0.1, 1.0)
    assert not rep.hypothesis_satisfied
    assert 4.0 < rep.first_violation_time < 5.0


def test_exponential_grid_mismatch():
    with pytest.raises(ValueError):
        verify_exponential(np.arange(5.0), np.ones(4), np.ones(5), 0.1, 0.0)
    with pytest.raises(ValueError):
        verify_exponential(np.arange(5.0), np.ones(5), np.ones(5), 0.0, 0.0)


def test_minimal_K_examples():
    t = np.linspace(0, 10, 101)
    assert minimal_K(t, np.full_like(t, 0.2), 0.5) == 0.0
    psi = np.where(t < 2, 1.0, 0.0)
    assert minimal_K(t, psi, 0.5) == pytest.approx(1.0, abs=0.06)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.0, 3.0), st.floats(0.1, 5.0), st.floats(0.1, 10.0))
def test_comparison_principle(nu, amp, freq, L0):
    # worst case of the differential inequality solved exactly on the grid
    t = np.linspace(0, 20, 4001)
    psi = amp * (1 + np.sin(freq * t))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (psi[1:] + psi[:-1]))])
    L = L0 * np.exp(cum - 2 * nu * t)
    K = minimal_K(t, psi, nu)
    rep = verify_exponential(t, L, psi, nu, K)
    assert rep.hypothesis_satisfied
    assert rep.conclusion_margin >= -1e-9
