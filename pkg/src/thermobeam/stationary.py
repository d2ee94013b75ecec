"""Stationary states: ``A u + (beta + ||u||_1^2) A^{1/2} u = h``.

With the scalar ``s = ||u||_1^2`` frozen, the problem is diagonal and gives
``u_n(s) = h_n / (mu_n (mu_n + beta + s))``.  Stationary points are the
roots of ``F(s) = ||u(s)||_1^2 - s`` plus, for every mode with ``h_n = 0``
and ``s_n = -beta - mu_n > 0``, the branches along ``e_n`` that bifurcate
where the frozen operator becomes singular.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .spectral import BasisSpec, SpectralField

__all__ = [
    "StationaryPoint",
    "PoleError",
    "branch_amplitude",
    "stationary_from_s",
    "scalar_defect",
    "residual",
    "enumerate_stationary",
    "stationary_state",
]

POLE_TOL = 1e-10
DEGENERATE_TOL = 1e-6
RESIDUAL_TOL = 1e-10
SCAN_POINTS = 10_000


class PoleError(ArithmeticError):
    """Frozen operator singular on a forced mode."""

    def __init__(self, mode: int, s: float):
        super().__init__(f"s={s!r} is a pole of the frozen problem on mode {mode}")
        self.mode = mode
        self.s = s


@dataclass(frozen=True)
class StationaryPoint:
    u: SpectralField
    s: float
    residual: float
    branch: str
    degenerate: bool = False


def branch_amplitude(n: int, beta: float) -> float | None:
    """Squared amplitude ``c^2`` of the buckled pair ``+-c e_n`` for ``h = 0``.

    Returns None above the threshold ``beta = -mu_n``.
    """
    if n < 1:
        raise ValueError("mode index starts at 1")
    mu = (n * math.pi) ** 2
    if beta > -mu:
        return None
    return max(0.0, -(beta + mu) / mu)


def _frozen_coeffs(h: np.ndarray, mu: np.ndarray, beta: float, s: float) -> np.ndarray:
    denom = mu + beta + s
    bad = (np.abs(denom) < POLE_TOL) & (h != 0)
    if np.any(bad):
        raise PoleError(int(np.argmax(bad)) + 1, s)
    out = np.zeros_like(h)
    nz = h != 0
    out[nz] = h[nz] / (mu[nz] * denom[nz])
    return out


def stationary_from_s(h: SpectralField, beta: float, s: float) -> SpectralField:
    """Solution of the frozen-``s`` linear problem."""
    return SpectralField(_frozen_coeffs(h.coeffs, h.basis.mu, beta, s), h.basis)


def scalar_defect(h: SpectralField, beta: float, s: float) -> float:
    u = _frozen_coeffs(h.coeffs, h.basis.mu, beta, s)
    return float(np.sum(h.basis.mu * u * u)) - s


def residual(u: SpectralField, h: SpectralField, beta: float) -> float:
    """H-norm of ``A u + (beta + ||u||_1^2) A^{1/2} u - h``."""
    mu = u.basis.mu
    c = u.coeffs
    s = float(np.sum(mu * c * c))
    r = mu * mu * c + (beta + s) * mu * c - h.coeffs
    return float(np.sqrt(np.sum(r * r)))


def _defect_vec(hc, mu, beta, svals):
    denom = mu[None, :] + beta + svals[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(hc[None, :] != 0, hc[None, :] / (mu[None, :] * denom), 0.0)
    return np.sum(mu[None, :] * u * u, axis=1) - svals


def _scan_roots(h: SpectralField, beta: float, s_max: float, npts: int) -> list[float]:
    hc, mu = h.coeffs, h.basis.mu
    F = lambda s: scalar_defect(h, beta, s)
    poles = sorted({float(-beta - m) for m, c in zip(mu, hc) if c != 0 and 0 < -beta - m < s_max})
    edges = [0.0] + poles + [s_max]
    roots = []
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        pad = 1e-9 * max(1.0, abs(b - a))
        lo = a + (pad if k > 0 else 0.0)
        hi = b - (pad if k < len(edges) - 2 else 0.0)
        if hi <= lo:
            continue
        grid = np.linspace(lo, hi, npts)
        vals = _defect_vec(hc, mu, beta, grid)
        for i in range(npts):
            if vals[i] == 0.0:
                roots.append(float(grid[i]))
        sign = np.sign(vals)
        idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
        for i in idx:
            roots.append(brentq(F, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                maxiter=200))
    return roots


def _certify(u: np.ndarray, h: SpectralField, beta: float, basis: BasisSpec):
    field = SpectralField(u, basis)
    res = residual(field, h, beta)
    return field, res


def enumerate_stationary(h: SpectralField, beta: float, p=None, s_max: float | None = None,
                         scan_points: int = SCAN_POINTS) -> list[StationaryPoint]:
    """All stationary points found by the pole-separated scan.

    ``p`` (ModelParams) is accepted for interface symmetry; the stationary
    set does not depend on the rotational parameter.
    """
    basis = h.basis
    mu = basis.mu
    hc = h.coeffs
    if s_max is None:
        s_max = 4.0 * (abs(beta) + float(mu[-1]))
    # the defect tends to -inf; make sure the last interval brackets the root
    while scalar_defect_safe(h, beta, s_max) > 0:
        s_max *= 2.0
    found: list[StationaryPoint] = []
    forced = bool(np.any(hc != 0))
    for s in _scan_roots(h, beta, s_max, scan_points):
        u = _frozen_coeffs(hc, mu, beta, s)
        field, res = _certify(u, h, beta, basis)
        branch = "generic" if forced else "trivial"
        found.append(StationaryPoint(field, float(np.sum(mu * u * u)), res, branch))
    for n in range(1, basis.N + 1):
        if hc[n - 1] != 0:
            continue
        s_n = -beta - float(mu[n - 1])
        near = abs(beta + mu[n - 1]) < DEGENERATE_TOL
        if s_n < 0 and not near:
            continue
        s_n = max(s_n, 0.0)
        try:
            base = _frozen_coeffs(hc, mu, beta, s_n)
        except PoleError:
            continue
        c2 = (s_n - float(np.sum(mu * base * base))) / mu[n - 1]
        if c2 < 0:
            continue
        c = math.sqrt(c2)
        for sign, label in ((1.0, "plus"), (-1.0, "minus")):
            u = base.copy()
            u[n - 1] = sign * c
            field, res = _certify(u, h, beta, basis)
            found.append(StationaryPoint(field, float(np.sum(mu * u * u)), res,
                                         f"mode-{n}-{label}", degenerate=bool(near)))
    out: list[StationaryPoint] = []
    for pt in found:
        scale = 1.0 + float(np.max(np.abs(pt.u.coeffs)))
        dup = [i for i, q in enumerate(out)
               if np.max(np.abs(pt.u.coeffs - q.u.coeffs)) < 1e-9 * scale]
        if dup:
            # a branch collapsing onto a kept point passes on its degeneracy
            if pt.degenerate:
                out[dup[0]] = replace(out[dup[0]], degenerate=True)
            continue
        out.append(pt)
    out = [pt for pt in out if pt.residual < RESIDUAL_TOL]
    out.sort(key=lambda pt: (pt.s, tuple(pt.u.coeffs)))
    return out


def scalar_defect_safe(h: SpectralField, beta: float, s: float) -> float:
    try:
        return scalar_defect(h, beta, s)
    except PoleError:
        return math.inf


def stationary_state(point: StationaryPoint, p):
    """Phase-space stationary state ``(u, 0, theta_g)``."""
    from .model import BeamState

    b = p.basis
    return BeamState(point.u, b.zeros(), b.field(p.forcing.theta_g(b)))
