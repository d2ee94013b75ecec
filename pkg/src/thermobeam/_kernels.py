"""Compiled per-mode propagators and time loops.

Every mode is advanced in the scaled coordinates ``x = (mu u, v, theta)``,
where the frozen-coefficient generator is

    G = [[0,   mu,  0      ],
         [-p,  0,   q      ],
         [0,  -mu, -d * mu ]]

with ``p = (mu + beta + s)/m + extra/(mu m)``, ``q = mu/m`` and ``m = 1 + gamma mu``.
``extra`` is the decomposition shift ``alpha`` for the decaying part and 0
otherwise; ``d`` is 1, or 0 when thermal damping is switched off.
"""
import math

import numpy as np
from numba import njit

# relative eigenvalue gap below which divided differences are abandoned
GAP_TOL = 1e-2
TAYLOR_DEGREE = 12
# decayed coefficients below this are set to zero (subnormal arithmetic is slow)
FLUSH_TINY = 1e-250

FORCING_CONSTANT = 0
FORCING_SINUSOIDAL = 1
FORCING_TABULATED = 2

# per-step diagnostic columns
D_S, D_U2, D_KIN, D_TH2, D_THH1, D_OMH1, D_OM2, D_VF, D_THG, D_UH, D_UF, D_V2, D_PHI, D_PSI = range(14)
N_DIAG = 14


@njit(cache=True)
def cubic_roots(c2, c1, c0):
    """Roots of ``x^3 + c2 x^2 + c1 x + c0``: one real root and two others."""
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0
    disc = 0.25 * q * q + p * p * p / 27.0
    if disc >= 0.0:
        sq = math.sqrt(disc)
        a = 0.5 * abs(q) + sq
        A = -math.copysign(a ** (1.0 / 3.0), q) if a > 0.0 else 0.0
        B = -p / (3.0 * A) if A != 0.0 else 0.0
        r = A + B - c2 / 3.0
    else:
        rad = math.sqrt(-p / 3.0)
        arg = 1.5 * q / (p * rad)
        arg = min(1.0, max(-1.0, arg))
        r = 2.0 * rad * math.cos(math.acos(arg) / 3.0) - c2 / 3.0
    # Newton polish on the monic cubic
    for _ in range(3):
        fr = ((r + c2) * r + c1) * r + c0
        dfr = (3.0 * r + 2.0 * c2) * r + c1
        if dfr == 0.0:
            break
        step = fr / dfr
        r -= step
        if abs(step) <= 1e-16 * max(1.0, abs(r)):
            break
    b = c2 + r
    c = c1 + r * b
    d = b * b - 4.0 * c
    if d < 0.0:
        z2 = complex(-0.5 * b, 0.5 * math.sqrt(-d))
        z3 = complex(-0.5 * b, -0.5 * math.sqrt(-d))
    else:
        qq = -0.5 * (b + math.copysign(math.sqrt(d), b))
        z2 = complex(qq, 0.0)
        z3 = complex(c / qq, 0.0) if qq != 0.0 else complex(0.0, 0.0)
    return r, z2, z3


@njit(cache=True)
def _phi1(z):
    if abs(z) < 1e-2:
        # (e^z - 1)/z by its Taylor series
        term = 1.0 + 0j
        acc = 1.0 + 0j
        for k in range(2, 12):
            term = term * z / k
            acc += term
        return acc
    return (np.exp(z) - 1.0) / z


@njit(cache=True)
def _poly_coeffs(z1, z2, z3, f1, f2, f3):
    d12 = (f1 - f2) / (z1 - z2)
    d23 = (f2 - f3) / (z2 - z3)
    d123 = (d12 - d23) / (z1 - z3)
    a2 = d123
    a1 = d12 - d123 * (z1 + z2)
    a0 = f1 - d12 * z1 + d123 * z1 * z2
    return a0.real, a1.real, a2.real


@njit(cache=True)
def _matvec(m01, m10, m12, m21, m22, x0, x1, x2):
    return m01 * x1, m10 * x0 + m12 * x2, m21 * x1 + m22 * x2


@njit(cache=True)
def _mat4_mul(A, B, out):
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


@njit(cache=True)
def _taylor_expm_aug(M, out, work):
    """exp of a 4x4 matrix by scaling and squaring with a Taylor polynomial.

    ``work`` is a (2, 4, 4) scratch buffer; nothing is allocated.
    """
    nrm = 0.0
    for j in range(4):
        col = 0.0
        for i in range(4):
            col += abs(M[i, j])
        nrm = max(nrm, col)
    sq = 0
    if nrm > 0.5:
        sq = int(math.ceil(math.log2(nrm / 0.5)))
    scale = 1.0 / (2.0 ** sq)
    A = work[0]
    T = work[1]
    for i in range(4):
        for j in range(4):
            A[i, j] = M[i, j] * scale
            out[i, j] = 1.0 if i == j else 0.0
    # Horner: R <- I + A R / k
    for k in range(TAYLOR_DEGREE, 0, -1):
        _mat4_mul(A, out, T)
        for i in range(4):
            for j in range(4):
                out[i, j] = T[i, j] / k + (1.0 if i == j else 0.0)
    for _ in range(sq):
        _mat4_mul(out, out, T)
        out[:, :] = T


@njit(cache=True)
def propagate(mu, p, q, d, dt, x0, x1, x2, F1, F2):
    """``exp(dt G) x + dt phi1(dt G) F`` for one mode, with ``F = (0, F1, F2)``."""
    m01 = dt * mu
    m10 = -dt * p
    m12 = dt * q
    m21 = -dt * mu
    m22 = -dt * d * mu
    c2 = dt * d * mu
    c1 = dt * dt * (q * mu + mu * p)
    c0 = dt * dt * dt * d * mu * mu * p
    r, z2, z3 = cubic_roots(c2, c1, c0)
    z1 = complex(r, 0.0)
    scale = max(abs(z1), max(abs(z2), abs(z3)))
    gap = min(abs(z1 - z2), min(abs(z2 - z3), abs(z1 - z3)))
    has_force = F1 != 0.0 or F2 != 0.0
    if scale > 0.0 and gap > GAP_TOL * scale:
        a0, a1, a2 = _poly_coeffs(z1, z2, z3, np.exp(z1), np.exp(z2), np.exp(z3))
        y0, y1, y2 = _matvec(m01, m10, m12, m21, m22, x0, x1, x2)
        w0, w1, w2 = _matvec(m01, m10, m12, m21, m22, y0, y1, y2)
        n0 = a0 * x0 + a1 * y0 + a2 * w0
        n1 = a0 * x1 + a1 * y1 + a2 * w1
        n2 = a0 * x2 + a1 * y2 + a2 * w2
        if has_force:
            b0, b1, b2 = _poly_coeffs(z1, z2, z3, _phi1(z1), _phi1(z2), _phi1(z3))
            g0, g1, g2 = 0.0, dt * F1, dt * F2
            y0, y1, y2 = _matvec(m01, m10, m12, m21, m22, g0, g1, g2)
            w0, w1, w2 = _matvec(m01, m10, m12, m21, m22, y0, y1, y2)
            n0 += b0 * g0 + b1 * y0 + b2 * w0
            n1 += b0 * g1 + b1 * y1 + b2 * w1
            n2 += b0 * g2 + b1 * y2 + b2 * w2
        return n0, n1, n2
    # near-defective block: augmented-matrix exponential
    buf = np.zeros((4, 4, 4))
    M = buf[0]
    E = buf[1]
    M[0, 1] = m01
    M[1, 0] = m10
    M[1, 2] = m12
    M[2, 1] = m21
    M[2, 2] = m22
    M[1, 3] = dt * F1
    M[2, 3] = dt * F2
    _taylor_expm_aug(M, E, buf[2:])
    n0 = E[0, 0] * x0 + E[0, 1] * x1 + E[0, 2] * x2 + E[0, 3]
    n1 = E[1, 0] * x0 + E[1, 1] * x1 + E[1, 2] * x2 + E[1, 3]
    n2 = E[2, 0] * x0 + E[2, 1] * x1 + E[2, 2] * x2 + E[2, 3]
    return n0, n1, n2


@njit(cache=True)
def block_exponential(mu, p, q, d, dt):
    """Dense 3x3 ``exp(dt G)`` in scaled coordinates (for tests and reports)."""
    out = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        n0, n1, n2 = propagate(mu, p, q, d, dt, e[0], e[1], e[2], 0.0, 0.0)
        out[0, j] = n0
        out[1, j] = n1
        out[2, j] = n2
    return out


@njit(cache=True)
def eval_forcing(kind, base, amp, freq, phase, tt, tv, t, out):
    for i in range(base.size):
        out[i] = base[i]
    if kind == FORCING_SINUSOIDAL:
        s = math.sin(freq * t + phase)
        for i in range(base.size):
            out[i] += amp[i] * s
    elif kind == FORCING_TABULATED:
        K = tt.size
        if t <= tt[0]:
            for i in range(base.size):
                out[i] += tv[0, i]
        elif t >= tt[K - 1]:
            for i in range(base.size):
                out[i] += tv[K - 1, i]
        else:
            k = np.searchsorted(tt, t, side="right") - 1
            w = (t - tt[k]) / (tt[k + 1] - tt[k])
            for i in range(base.size):
                out[i] += (1.0 - w) * tv[k, i] + w * tv[k + 1, i]


@njit(cache=True)
def _s_of(mu, u):
    acc = 0.0
    for i in range(u.size):
        acc += mu[i] * u[i] * u[i]
    return acc


@njit(cache=True)
def full_step(mu, m, beta, extra, d, dt, u, v, th, fmid, gmid, iters, frozen_s,
              u1, v1, th1):
    """One exponential-midpoint step; returns the frozen scalar used last.

    ``frozen_s`` is NaN for the nonlinear problem; otherwise the scalar is
    held at that value and a single pass is made.
    """
    N = u.size
    s0 = _s_of(mu, u)
    if math.isnan(frozen_s):
        acc = 0.0
        for i in range(N):
            uh = u[i] + 0.5 * dt * v[i]
            acc += mu[i] * uh * uh
        sbar = acc
        npass = iters
    else:
        sbar = frozen_s
        npass = 1
    used = sbar
    for it in range(npass):
        used = sbar
        for i in range(N):
            mi = mu[i]
            p = (mi + beta + sbar) / m[i] + extra / (mi * m[i])
            q = mi / m[i]
            n0, n1, n2 = propagate(mi, p, q, d, dt, mi * u[i], v[i], th[i],
                                   fmid[i] / m[i], gmid[i])
            u1[i] = n0 / mi if abs(n0) > FLUSH_TINY else 0.0
            v1[i] = n1 if abs(n1) > FLUSH_TINY else 0.0
            th1[i] = n2 if abs(n2) > FLUSH_TINY else 0.0
        if it + 1 < npass:
            sbar = 0.5 * (s0 + _s_of(mu, u1))
    return used


@njit(cache=True)
def _record_diag(mu, m, u, v, th, f, g, hvec, thg, row):
    s = 0.0
    u2 = 0.0
    kin = 0.0
    th2 = 0.0
    thh1 = 0.0
    omh1 = 0.0
    om2 = 0.0
    vf = 0.0
    thgp = 0.0
    uh = 0.0
    uf = 0.0
    v2 = 0.0
    phi = 0.0
    psi = 0.0
    for i in range(u.size):
        mi = mu[i]
        s += mi * u[i] * u[i]
        u2 += mi * mi * u[i] * u[i]
        kin += m[i] * v[i] * v[i]
        th2 += th[i] * th[i]
        thh1 += mi * th[i] * th[i]
        om = th[i] - thg[i]
        omh1 += mi * om * om
        om2 += om * om
        vf += v[i] * f[i]
        thgp += th[i] * g[i]
        uh += u[i] * hvec[i]
        uf += u[i] * f[i]
        v2 += v[i] * v[i]
        phi += m[i] * v[i] * u[i]
        psi += m[i] * v[i] * th[i] / mi
    row[D_S] = s
    row[D_U2] = u2
    row[D_KIN] = kin
    row[D_TH2] = th2
    row[D_THH1] = thh1
    row[D_OMH1] = omh1
    row[D_OM2] = om2
    row[D_VF] = vf
    row[D_THG] = thgp
    row[D_UH] = uh
    row[D_UF] = uf
    row[D_V2] = v2
    row[D_PHI] = phi
    row[D_PSI] = psi


@njit(cache=True, nogil=True)
def run(u, v, th, t0, dt, nsteps, mu, m, beta, d, iters, frozen_s,
        fk, fb, fa, ff, fp, ftt, ftv, gk, gb, ga, gf, gp, gtt, gtv,
        hvec, thg, sample_every, blowup, diag, states):
    """Advance ``nsteps`` steps in place.

    Fills ``diag[k]`` for every step index and ``states[j]`` every
    ``sample_every`` steps.  Returns the number of completed steps; fewer
    than ``nsteps`` signals blow-up, with ``u, v, th`` holding the last
    good state.
    """
    N = u.size
    u1 = np.empty(N)
    v1 = np.empty(N)
    th1 = np.empty(N)
    fmid = np.empty(N)
    gmid = np.empty(N)
    fnow = np.empty(N)
    gnow = np.empty(N)
    eval_forcing(fk, fb, fa, ff, fp, ftt, ftv, t0, fnow)
    eval_forcing(gk, gb, ga, gf, gp, gtt, gtv, t0, gnow)
    _record_diag(mu, m, u, v, th, fnow, gnow, hvec, thg, diag[0])
    j = 0
    states[0, 0, :] = u
    states[0, 1, :] = v
    states[0, 2, :] = th
    for k in range(nsteps):
        t = t0 + k * dt
        tm = t + 0.5 * dt
        eval_forcing(fk, fb, fa, ff, fp, ftt, ftv, tm, fmid)
        eval_forcing(gk, gb, ga, gf, gp, gtt, gtv, tm, gmid)
        full_step(mu, m, beta, 0.0, d, dt, u, v, th, fmid, gmid, iters, frozen_s, u1, v1, th1)
        bad = False
        for i in range(N):
            a = max(abs(u1[i]), max(abs(v1[i]), abs(th1[i])))
            if not (a <= blowup):
                bad = True
                break
        if bad:
            return k
        u[:] = u1
        v[:] = v1
        th[:] = th1
        tn = t0 + (k + 1) * dt
        eval_forcing(fk, fb, fa, ff, fp, ftt, ftv, tn, fnow)
        eval_forcing(gk, gb, ga, gf, gp, gtt, gtv, tn, gnow)
        _record_diag(mu, m, u, v, th, fnow, gnow, hvec, thg, diag[k + 1])
        if (k + 1) % sample_every == 0 or k + 1 == nsteps:
            j += 1
            states[j, 0, :] = u
            states[j, 1, :] = v
            states[j, 2, :] = th
    return nsteps


@njit(cache=True, nogil=True)
def run_split(full, lpart, kpart, dt, nsteps, mu, m, beta, alpha, hvec, iters,
              sample_every, blowup, out):
    """Co-integrate the shifted system and its decaying/compact parts.

    ``full``, ``lpart``, ``kpart`` are (3, N) arrays in (u, v, omega)
    layout, advanced in place.  ``out[j]`` receives the (3, 3, N) stack at
    every sample.  Returns completed steps.
    """
    N = mu.size
    f1 = np.empty((3, N))
    l1 = np.empty((3, N))
    k1 = np.empty((3, N))
    zero = np.zeros(N)
    kforce = np.empty(N)
    j = 0
    out[0, 0] = full
    out[0, 1] = lpart
    out[0, 2] = kpart
    for k in range(nsteps):
        sbar = full_step(mu, m, beta, 0.0, 1.0, dt, full[0], full[1], full[2], hvec, zero,
                         iters, np.nan, f1[0], f1[1], f1[2])
        full_step(mu, m, beta, alpha, 1.0, dt, lpart[0], lpart[1], lpart[2], zero, zero,
                  1, sbar, l1[0], l1[1], l1[2])
        for i in range(N):
            kforce[i] = hvec[i] + alpha * 0.5 * (lpart[0, i] + l1[0, i])
        full_step(mu, m, beta, 0.0, 1.0, dt, kpart[0], kpart[1], kpart[2], kforce, zero,
                  1, sbar, k1[0], k1[1], k1[2])
        bad = False
        for c in range(3):
            for i in range(N):
                a = max(abs(f1[c, i]), max(abs(l1[c, i]), abs(k1[c, i])))
                if not (a <= blowup):
                    bad = True
        if bad:
            return k
        full[:, :] = f1
        lpart[:, :] = l1
        kpart[:, :] = k1
        if (k + 1) % sample_every == 0 or k + 1 == nsteps:
            j += 1
            out[j, 0] = full
            out[j, 1] = lpart
            out[j, 2] = kpart
    return nsteps


@njit(cache=True)
def _rhs_into(mu, m, beta, u, v, th, f, g, du, dv, dth):
    s = _s_of(mu, u)
    for i in range(u.size):
        mi = mu[i]
        du[i] = v[i]
        dv[i] = (-mi * mi * u[i] + mi * th[i] - (beta + s) * mi * u[i] + f[i]) / m[i]
        dth[i] = -mi * th[i] - mi * v[i] + g[i]


@njit(cache=True, nogil=True)
def run_rk4(u, v, th, t0, dt, nsteps, mu, m, beta,
            fk, fb, fa, ff, fp, ftt, ftv, gk, gb, ga, gf, gp, gtt, gtv):
    """Classical RK4 on the full nonlinear system (reference oracle)."""
    N = u.size
    ks = np.empty((4, 3, N))
    tmp = np.empty((3, N))
    f = np.empty(N)
    g = np.empty(N)
    cs = (0.0, 0.5, 0.5, 1.0)
    for k in range(nsteps):
        t = t0 + k * dt
        for st in range(4):
            if st == 0:
                tmp[0] = u
                tmp[1] = v
                tmp[2] = th
            else:
                for c in range(3):
                    base = u if c == 0 else (v if c == 1 else th)
                    for i in range(N):
                        tmp[c, i] = base[i] + cs[st] * dt * ks[st - 1, c, i]
            ts = t + cs[st] * dt
            eval_forcing(fk, fb, fa, ff, fp, ftt, ftv, ts, f)
            eval_forcing(gk, gb, ga, gf, gp, gtt, gtv, ts, g)
            _rhs_into(mu, m, beta, tmp[0], tmp[1], tmp[2], f, g, ks[st, 0], ks[st, 1], ks[st, 2])
        for i in range(N):
            u[i] += dt / 6.0 * (ks[0, 0, i] + 2 * ks[1, 0, i] + 2 * ks[2, 0, i] + ks[3, 0, i])
            v[i] += dt / 6.0 * (ks[0, 1, i] + 2 * ks[1, 1, i] + 2 * ks[2, 1, i] + ks[3, 1, i])
            th[i] += dt / 6.0 * (ks[0, 2, i] + 2 * ks[1, 2, i] + 2 * ks[2, 2, i] + ks[3, 2, i])
