"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal and repeated in the session summary.
``python3 tests/test_acceptance.py`` runs the same checks without pytest.
"""
import math
import time

import numpy as np
import pytest

from thermobeam import (
    BeamState,
    Forcing,
    ForcingTerm,
    IntegratorConfig,
    ModelParams,
    decay_rate_fit,
    dissipation_integrals,
    energy_residual,
    enumerate_stationary,
    evolve_split,
    h2_bound,
    make_basis,
    matrix_B_spectrum,
    shift_from_omega,
    simulate,
    state_norm,
)
from thermobeam.decomposition import proof_functionals
from thermobeam.experiments import (
    absorb_table,
    attract_report,
    draw_ball,
    draw_ensemble,
    gamma_sweep,
    lyapunov_violations,
)
from thermobeam.gronwall import (
    linear_closed_form,
    minimal_K,
    verify_exponential,
    verify_superlinear,
)

PI2 = math.pi ** 2
N = 32
RESULTS = []


def report(n, ok, detail, request=None):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    tr = request.config.pluginmanager.get_plugin("terminalreporter") if request else None
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)
    else:
        print(line)
    assert ok, line


def _forced(beta=5.0, gamma=0.0, g=None):
    b = make_basis(N)
    fo = Forcing.constant(b.mode(1), g, b)
    return ModelParams(beta, gamma, basis=b, forcing=fo)


# 1 ------------------------------------------------------------------------

def test_criterion_1_energy_identity(request):
    p = _forced()
    z0 = BeamState.zeros(p.basis)
    # one tiny run first so the timing excludes one-off JIT compilation
    energy_residual(simulate(z0, 1e-2, IntegratorConfig(dt=1e-3), p, sample_dt=None))
    t = time.perf_counter()
    r1 = energy_residual(simulate(z0, 20.0, IntegratorConfig(dt=1e-3), p, sample_dt=None))
    r2 = energy_residual(simulate(z0, 20.0, IntegratorConfig(dt=5e-4), p, sample_dt=None))
    wall = time.perf_counter() - t
    ratio = r1.per_unit_time / r2.per_unit_time
    ok = r1.per_unit_time <= 1e-5 and abs(ratio - 4.0) <= 0.5 and wall < 10
    report(1, ok, f"residual/unit time {r1.per_unit_time:.3e} (<= 1e-5), "
                  f"halving ratio {ratio:.3f} (4 +- 0.5), {wall:.1f} s", request)


# 2 ------------------------------------------------------------------------

def test_criterion_2_lyapunov_monotone(request):
    p = _forced()
    members = draw_ensemble(20, 1, p, 50.0)
    t = time.perf_counter()
    total, worst = 0, -math.inf
    for z in members:
        rec = simulate(z, 100.0, IntegratorConfig(dt=1e-3), p, sample_dt=None, keep_states=False)
        nv, mx = lyapunov_violations(rec, 10.0)
        total += nv
        worst = max(worst, mx)
    wall = time.perf_counter() - t
    ok = total == 0 and all(z is not None for z in members) and wall < 120
    report(2, ok, f"{total} violations of L0 rise <= 10 dt^3 over 20 runs, "
                  f"largest step increase {worst:.2e}, {wall:.1f} s", request)


# 3 ------------------------------------------------------------------------

def test_criterion_3_stationary_structure(request):
    b = make_basis(N)
    h = b.zeros()
    t = time.perf_counter()
    counts = {}
    res_ok = True
    for beta in (-0.5 * PI2, -2 * PI2, -5 * PI2):
        pts = enumerate_stationary(h, beta)
        counts[beta] = len(pts)
        res_ok &= all(pt.residual < 1e-10 for pt in pts)
    amp1 = {pt.branch: pt.u.coeffs for pt in enumerate_stationary(h, -2 * PI2)}
    amp2 = {pt.branch: pt.u.coeffs for pt in enumerate_stationary(h, -5 * PI2)}
    c1 = amp1["mode-1-plus"][0] ** 2
    c2 = amp2["mode-2-plus"][1] ** 2
    amps_ok = abs(c1 - 1.0) < 1e-10 and abs(c2 - 0.25) < 1e-10
    wall = time.perf_counter() - t
    got = [counts[k] for k in sorted(counts, reverse=True)]
    ok = got == [1, 3, 7] and res_ok and amps_ok and wall < 1
    report(3, ok, f"counts at beta = -0.5, -2, -5 pi^2: {got} (expected [1, 3, 7]); "
                  f"c^2 = {c1:.12f}, {c2:.12f}; residuals ok {res_ok}, {wall:.2f} s", request)


# 4 ------------------------------------------------------------------------

def test_criterion_4_matrix_spectrum(request):
    sp = matrix_B_spectrum()
    cubic = max(abs(l ** 3 - l ** 2 + 2 * l - 1) for l in sp.eigenvalues)
    ok = (round(sp.a, 2), round(sp.b, 2), round(sp.c, 2)) == (0.57, 0.22, 1.31) and cubic < 1e-12
    report(4, ok, f"a={sp.a:.5f} b={sp.b:.5f} c={sp.c:.5f}, cubic residual {cubic:.1e}", request)


# 5 ------------------------------------------------------------------------

def test_criterion_5_decomposition(request):
    dt = 1e-3
    t = time.perf_counter()
    worst_defect, worst_E0, min_kappa, worst_slope = 0.0, 0.0, math.inf, -math.inf
    for gamma in (0.0, 0.5):
        p = _forced(gamma=gamma)
        for zeta in draw_ball(20, 5, p.basis, 1.0, gamma):
            sp = evolve_split(zeta, p, 100.0, IntegratorConfig(dt=dt), sample_dt=0.1)
            worst_defect = max(worst_defect, sp.defect_rate)
            worst_E0 = max(worst_E0, float(sp.E0[-1]))
            min_kappa = min(min_kappa, decay_rate_fit(sp.times, sp.E0).kappa)
            worst_slope = max(worst_slope, h2_bound(sp).tail_slope)
    wall = time.perf_counter() - t
    ok = (worst_defect <= 10 * dt ** 2 and worst_E0 < 1e-8 and min_kappa > 0
          and worst_slope < 1e-3 and wall < 300)
    report(5, ok, f"sum defect/unit time {worst_defect:.2e} (<= 1e-5), max E0(100) "
                  f"{worst_E0:.1e}, min kappa {min_kappa:.3f}, max E1 tail slope "
                  f"{worst_slope:.1e}, {wall:.0f} s", request)


# 6 ------------------------------------------------------------------------

def test_criterion_6_exponential_decay(request):
    b = make_basis(N)
    p = ModelParams(5.0, basis=b, forcing=Forcing.constant(b.mode(1), -b.mode(1), b))
    zg = BeamState(b.zeros(), b.zeros(), b.field(p.forcing.theta_g(b)))
    t = time.perf_counter()
    rates = []
    for z in draw_ball(10, 6, b, 10.0):
        rec = simulate(z, 30.0, IntegratorConfig(dt=1e-3), p, sample_dt=0.1)
        d2 = np.array([state_norm(rec.state_at(j).with_time(0.0) - zg) ** 2
                       for j in range(len(rec.times))])
        rates.append(decay_rate_fit(rec.times, d2).kappa)
    wall = time.perf_counter() - t
    med = float(np.median(rates))
    dev = max(abs(r - med) / med for r in rates)
    ok = min(rates) > 0 and dev <= 0.10 and wall < 120
    report(6, ok, f"decay rates {min(rates):.4f}..{max(rates):.4f}, largest deviation from "
                  f"median {100 * dev:.2f}% (<= 10%), {wall:.1f} s", request)


# 7 ------------------------------------------------------------------------

def test_criterion_7_heteroclinics(request):
    b = make_basis(N)
    p = ModelParams(-2 * PI2, basis=b)
    seeds = [BeamState(b.mode(1, e), b.zeros(), b.zeros()) for e in (1e-3, -1e-3)]
    t = time.perf_counter()
    res = attract_report(p, IntegratorConfig(dt=1e-3), 300.0, seeds)
    finals = [simulate(z, 300.0, IntegratorConfig(dt=1e-3), p, sample_dt=None).final_state
              for z in seeds]
    wall = time.perf_counter() - t
    plus, minus = res.members
    mirror = state_norm(finals[0] + finals[1])
    ok = (plus.branch == "mode-1-plus" and minus.branch == "mode-1-minus"
          and max(plus.final_distance, minus.final_distance) < 1e-6 and mirror < 1e-12
          and wall < 60)
    report(7, ok, f"+seed -> {plus.branch} (dist {plus.final_distance:.1e}), -seed -> "
                  f"{minus.branch} (dist {minus.final_distance:.1e}), mirror defect "
                  f"{mirror:.1e}, {wall:.1f} s", request)


# 8 ------------------------------------------------------------------------

def test_criterion_8_absorbing_set(request):
    b = make_basis(N)
    g = ForcingTerm.sinusoidal(b.mode(1, 0.5), 1.0)
    p = ModelParams(1.0, basis=b, forcing=Forcing(ForcingTerm.constant(b.mode(1)), g))
    t = time.perf_counter()
    res = absorb_table(p, IntegratorConfig(dt=1e-3), (1.0, 10.0, 100.0, 1000.0), size=4,
                       seed=8, horizon=20.0, pilot_time=40.0)
    wall = time.perf_counter() - t
    members_ok = all(r.members > 0 for r in res.rows if r.R >= res.R0_emp / 2)
    ok = res.finite and res.non_decreasing and res.permanent and members_ok and wall < 600
    table = ", ".join(f"R={r.R:g}: t0={r.t0_emp:.3g}" for r in res.rows)
    report(8, ok, f"R0_emp={res.R0_emp:.4g}; {table}; finite {res.finite}, non-decreasing "
                  f"{res.non_decreasing}, permanent over 5x horizon {res.permanent}, "
                  f"{wall:.0f} s", request)


# 9 ------------------------------------------------------------------------

def test_criterion_9_dissipation_integrals(request):
    p = _forced()
    z = draw_ensemble(1, 9, p, 50.0)[0]
    rec = simulate(z, 100.0, IntegratorConfig(dt=1e-3), p, sample_dt=1.0, keep_states=False)
    cum, t = rec.cum_omega_H1, rec.step_times
    inc = (cum[-1] - cum[t >= 90.0][0]) / cum[-1]
    rep = dissipation_integrals(rec, 20.0)
    dec = bool(np.all(np.diff(rep.nu_by_range) < 0))
    ok = inc < 1e-6 and dec
    report(9, ok, f"final-decade relative increment of int ||omega||_1^2 {inc:.1e}; "
                  f"affine fit nu={rep.nu:.4f}, C={rep.C_nu_valid:.4f}; nu decreasing with "
                  f"window range {dec}", request)


# 10 -----------------------------------------------------------------------

def test_criterion_10_gronwall(request):
    t = time.perf_counter()
    lin = verify_superlinear(0.0, 0.5, 0.5, 10.0, horizon=30.0)
    cf = linear_closed_form(0.5, 0.5, 10.0, lin.times)
    rel = float(np.max(np.abs(lin.values - cf) / cf))

    p = _forced()
    zeta = draw_ball(1, 10, p.basis)[0]
    sp = evolve_split(zeta, p, 40.0, IntegratorConfig(dt=1e-3), sample_dt=0.01)
    Lam = proof_functionals(sp).Lambda0(0.1)
    psi = np.sum(sp.data[:, 0, 1] ** 2, axis=1)
    rec = simulate(shift_from_omega(zeta, p), 40.0, IntegratorConfig(dt=1e-3), p,
                   sample_dt=0.01, keep_states=False)
    nu = dissipation_integrals(rec, 10.0).nu
    K = minimal_K(sp.times, psi, nu)
    rep = verify_exponential(sp.times, Lam, psi, nu, K)
    wall = time.perf_counter() - t
    ok = (rel < 1e-6 and rep.hypothesis_satisfied and rep.conclusion_satisfied
          and rep.conclusion_margin > 0 and wall < 30)
    report(10, ok, f"K=0 closed-form rel. error {rel:.1e}; end-to-end nu={nu:.3e}, K={K:.4f}, "
                   f"hypothesis holds {rep.hypothesis_satisfied} (margin "
                   f"{rep.hypothesis_margin:.1e}), conclusion margin {rep.conclusion_margin:.4f}, "
                   f"{wall:.1f} s", request)


# 11 -----------------------------------------------------------------------

def test_criterion_11_rotational_uniformity(request):
    p = _forced()
    b = p.basis
    z0 = BeamState(b.mode(1, 0.5) + b.mode(2, 0.1), b.mode(1, 0.2), b.mode(1, 0.1))
    t = time.perf_counter()
    h = b.field(p.forcing.h())
    sets = [tuple(pt.u.coeffs.tobytes() for pt in
                  enumerate_stationary(h, p.beta, p.replace(gamma=g))) for g in (0.0, 0.1, 1.0)]
    same = all(s == sets[0] for s in sets)
    res = gamma_sweep(p, IntegratorConfig(dt=1e-3), z0, (1.0, 0.1, 0.01, 0.0), 30.0, 5.0)
    wall = time.perf_counter() - t
    small = [r for g, r in zip(res.gammas, res.rates) if g <= 0.1]
    small_spread = (max(small) - min(small)) / max(small)
    ok = same and res.rate_spread <= 0.20 and res.distances_monotone and wall < 300
    rates = ", ".join(f"{g:g}: {r:.4f}" for g, r in zip(res.gammas, res.rates))
    dists = ", ".join(f"{d:.3g}" for d in res.tail_distances[:-1])
    report(11, ok, f"stationary sets identical {same}; rates ({rates}) spread "
                   f"{100 * res.rate_spread:.1f}% (<= 20%; {100 * small_spread:.1f}% over "
                   f"gamma <= 0.1); distances to gamma=0 ({dists}) monotone "
                   f"{res.distances_monotone}, {wall:.1f} s", request)


if __name__ == "__main__":
    import sys

    failed = 0
    tests = [(int(k.split("_")[2]), f) for k, f in globals().items()
             if k.startswith("test_criterion_")]
    for _, fn in sorted(tests):
        try:
            fn(None)
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
