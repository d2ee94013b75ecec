"""Checkers for two Gronwall-type differential inequalities.

``verify_superlinear`` integrates the worst case of

    Lambda' + eps Lambda <= K eps^2 Lambda^{3/2} + eps^{-2/3} phi(t)

with a state-dependent parameter ``eps = min(eps0, 1/(2 K sqrt(Lambda)))``
and reports whether a finite absorbing level is reached.

``verify_exponential`` checks, on sampled series, the windowed-integral
hypothesis ``int_s^t psi <= nu (t - s) + K`` and the conclusion
``Lambda(t) <= e^K Lambda(0) e^{-nu t}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "InequalityReport",
    "verify_superlinear",
    "verify_exponential",
    "linear_closed_form",
    "minimal_K",
    "entering_times",
]

RK4_DT = 1e-4


@dataclass(frozen=True)
class InequalityReport:
    """Verdict of an inequality check.

    ``satisfied`` holds exactly when ``first_violation_time`` is None.
    ``R1_emp`` and ``entering_time`` are filled by the superlinear check,
    ``hypothesis_*``/``conclusion_*`` by the exponential one.
    """

    satisfied: bool
    first_violation_time: float | None
    margin: float
    R1_emp: float = math.nan
    entering_time: float = math.nan
    hypothesis_satisfied: bool | None = None
    hypothesis_margin: float = math.nan
    conclusion_satisfied: bool | None = None
    conclusion_margin: float = math.nan
    times: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.satisfied != (self.first_violation_time is None):
            raise ValueError("satisfied must match the absence of a violation time")


def linear_closed_form(Q: float, eps: float, Lambda0: float, t):
    """Solution of ``L' = -eps L + eps^{-2/3} Q``."""
    level = Q * eps ** (-5.0 / 3.0)
    return level + (Lambda0 - level) * np.exp(-eps * np.asarray(t, dtype=float))


@njit(cache=True)
def _phi_at(t, pt, pv):
    n = pt.size
    if n == 1 or t <= pt[0]:
        return pv[0]
    if t >= pt[n - 1]:
        return pv[n - 1]
    k = np.searchsorted(pt, t, side="right") - 1
    w = (t - pt[k]) / (pt[k + 1] - pt[k])
    return (1.0 - w) * pv[k] + w * pv[k + 1]


@njit(cache=True)
def _rhs(L, t, K, eps0, pt, pv):
    Lp = max(L, 0.0)
    eps = eps0
    if K > 0.0 and Lp > 0.0:
        eps = min(eps0, 1.0 / (2.0 * K * math.sqrt(Lp)))
    return -eps * Lp + K * eps * eps * Lp ** 1.5 + eps ** (-2.0 / 3.0) * _phi_at(t, pt, pv)


@njit(cache=True)
def _rk4(L0, K, eps0, pt, pv, dt, nsteps, every, out, cap):
    L = L0
    t = 0.0
    out[0] = L
    j = 0
    for k in range(nsteps):
        k1 = _rhs(L, t, K, eps0, pt, pv)
        k2 = _rhs(L + 0.5 * dt * k1, t + 0.5 * dt, K, eps0, pt, pv)
        k3 = _rhs(L + 0.5 * dt * k2, t + 0.5 * dt, K, eps0, pt, pv)
        k4 = _rhs(L + dt * k3, t + dt, K, eps0, pt, pv)
        L = L + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = (k + 1) * dt
        if not (abs(L) <= cap):
            return k + 1
        if (k + 1) % every == 0:
            j += 1
            out[j] = L
    return nsteps


def _phi_table(phi, Q):
    if phi is None:
        return np.zeros(1), np.array([float(Q)])
    if callable(phi):
        raise TypeError("pass phi as a constant or a (times, values) pair")
    if np.isscalar(phi):
        return np.zeros(1), np.array([float(phi)])
    pt, pv = (np.ascontiguousarray(a, dtype=float) for a in phi)
    if pt.shape != pv.shape or pt.ndim != 1:
        raise ValueError("phi samples must be two 1-d arrays of equal length")
    return pt, pv


def verify_superlinear(K: float, Q: float, eps0: float, Lambda0: float, phi=None,
                       horizon: float = 100.0, dt: float = RK4_DT, sample_dt: float = 0.01,
                       cap: float = 1e200, plateau_tol: float = 1e-3) -> InequalityReport:
    """Integrate the worst-case comparison ODE and look for an absorbing level.

    Parameters
    ----------
    phi : None, float or (times, values)
        Forcing of the inequality; ``None`` means the constant ``Q``.
    plateau_tol : float
        Largest relative growth allowed over the final tenth of the horizon
        for the run to count as having settled.

    Notes
    -----
    ``R1_emp`` is twice the maximum over the last quarter of the horizon;
    ``entering_time`` is the first sample after which the trajectory stays
    below ``R1_emp``.  The margin is ``R1_emp - max`` over that tail.
    """
    if K < 0 or Q < 0:
        raise ValueError("K and Q must be non-negative")
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if Lambda0 < 0:
        raise ValueError("Lambda0 must be non-negative")
    pt, pv = _phi_table(phi, Q)
    nsteps = max(1, int(round(horizon / dt)))
    every = max(1, int(round(sample_dt / dt)))
    nsamp = nsteps // every + 1
    out = np.full(nsamp, np.nan)
    done = _rk4(float(Lambda0), float(K), float(eps0), pt, pv, float(dt), nsteps, every,
                out, float(cap))
    times = np.arange(nsamp) * every * dt
    if done < nsteps:
        tb = done * dt
        return InequalityReport(False, tb, -math.inf, times=times, values=out)
    tail = times >= 0.75 * times[-1]
    R1 = 2.0 * float(np.max(out[tail]))
    above = np.nonzero(out > R1)[0]
    enter = float(times[above[-1] + 1]) if above.size else 0.0
    last = times >= 0.9 * times[-1]
    seg = out[last]
    growth = (seg[-1] - seg[0]) / max(abs(seg[0]), 1e-300)
    margin = R1 - float(np.max(out[times >= enter]))
    if growth > plateau_tol:
        return InequalityReport(False, float(times[-1]), margin, R1, enter,
                                times=times, values=out)
    return InequalityReport(True, None, margin, R1, enter, times=times, values=out)


def entering_times(K, Q, eps0, lambda0s, horizon=100.0, **kw) -> list[float]:
    """Entering time of each start into one common absorbing level.

    The level is the smallest ``R1_emp`` over the runs, i.e. the one read
    off the run that settled best.  A run still above it at the horizon
    gets ``inf``.
    """
    reps = [verify_superlinear(K, Q, eps0, L0, horizon=horizon, **kw) for L0 in lambda0s]
    ok = [r.R1_emp for r in reps if r.satisfied]
    if not ok:
        return [math.inf] * len(reps)
    R1 = min(ok)
    out = []
    for r in reps:
        above = np.nonzero(~(r.values <= R1))[0]
        if not above.size:
            out.append(0.0)
        elif above[-1] + 1 >= r.values.size:
            out.append(math.inf)
        else:
            out.append(float(r.times[above[-1] + 1]))
    return out


def _cumtrapz(t, y):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
    return out


def minimal_K(times, psi, nu: float) -> float:
    """Smallest ``K`` with ``int_s^t psi <= nu (t - s) + K`` on the grid."""
    t = np.asarray(times, dtype=float)
    g = _cumtrapz(t, np.asarray(psi, dtype=float)) - nu * t
    return max(0.0, float(np.max(g - np.minimum.accumulate(g))))


def verify_exponential(times, Lambda, psi, nu: float, K: float) -> InequalityReport:
    """Check hypothesis and conclusion of the exponential Gronwall lemma.

    The hypothesis is tested on every grid pair ``s < t`` with trapezoid
    integrals (O(n) via a running minimum); the conclusion pointwise.
    Margins are relative: ``K - worst excess`` scaled by ``1 + K`` and
    ``min(1 - Lambda/bound)``.
    """
    t = np.asarray(times, dtype=float)
    L = np.asarray(Lambda, dtype=float)
    y = np.asarray(psi, dtype=float)
    if not (t.shape == L.shape == y.shape) or t.ndim != 1:
        raise ValueError("series must share one time grid")
    if not nu > 0 or K < 0:
        raise ValueError("need nu > 0 and K >= 0")
    cum = _cumtrapz(t, y)
    g = cum - nu * t
    excess = g - np.minimum.accumulate(g)
    hyp_margin = (K - float(np.max(excess))) / (1.0 + K)
    # rounding slack of the running sums
    slack = 1e-12 * (1.0 + float(np.max(np.abs(cum))) + nu * float(np.max(np.abs(t))))
    bad_h = np.nonzero(excess > K + slack)[0]
    bound = math.exp(K) * L[0] * np.exp(-nu * (t - t[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(bound > 0, 1.0 - L / bound, np.where(L <= 0, 1.0, -np.inf))
    concl_margin = float(np.min(rel))
    bad_c = np.nonzero(L > bound * (1 + 1e-12))[0]
    firsts = [float(t[b[0]]) for b in (bad_h, bad_c) if b.size]
    first = min(firsts) if firsts else None
    return InequalityReport(
        first is None, first, min(hyp_margin, concl_margin),
        hypothesis_satisfied=not bad_h.size, hypothesis_margin=hyp_margin,
        conclusion_satisfied=not bad_c.size, conclusion_margin=concl_margin,
        times=t, values=L)
