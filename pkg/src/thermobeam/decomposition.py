"""Decaying/compact split of the shifted flow and the coupling-matrix diagnostic.

The shifted system (temperature measured from ``theta_g``) is advanced
together with two linear-in-data companions sharing its axial coefficient:

* the decaying part, with initial data ``zeta``, no forcing and an extra
  stiffness ``alpha``;
* the compact part, from zero data, forced by ``h + alpha * (decaying
  displacement)``.

Their sum reproduces the shifted trajectory; the co-integration makes the
superposition defect a real end-to-end check of the scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .integrator import IntegrationError, IntegratorConfig, _prepare, simulate
from .model import BeamState, ModelParams

__all__ = [
    "SplitState",
    "SplitTrajectory",
    "DecayFit",
    "H2Report",
    "MatrixBSpectrum",
    "GammaReport",
    "ProofFunctionals",
    "evolve_split",
    "decay_rate_fit",
    "h2_bound",
    "interpolation_gap",
    "matrix_B_spectrum",
    "gamma_ratio_monitor",
    "proof_functionals",
    "B_MATRIX",
]

B_MATRIX = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, 1.0]])


@dataclass(frozen=True)
class SplitState:
    """One sample of the split.  ``full`` is in (u, u_t, omega) variables."""

    full: BeamState
    Lpart: tuple
    Kpart: tuple
    t: float


@dataclass
class SplitTrajectory:
    params: ModelParams
    cfg: IntegratorConfig
    times: np.ndarray
    data: np.ndarray  # (nsamples, 3 parts, 3 components, N)
    E0: np.ndarray
    E1: np.ndarray
    sum_defect: np.ndarray

    def state(self, j: int) -> SplitState:
        b = self.params.basis
        f = self.data[j, 0]
        full = BeamState.from_arrays(f[0], f[1], f[2], b, float(self.times[j]))
        L = tuple(np.array(x) for x in self.data[j, 1])
        Kp = tuple(np.array(x) for x in self.data[j, 2])
        return SplitState(full, L, Kp, float(self.times[j]))

    @property
    def defect_rate(self) -> float:
        """Largest superposition defect divided by the run length."""
        T = self.times[-1] - self.times[0]
        return float(np.max(self.sum_defect) / T) if T > 0 else 0.0


def _h_norm_sq(x: np.ndarray, mu: np.ndarray, gamma: float) -> np.ndarray:
    """Phase-space norm squared; ``x`` has shape (..., 3, N)."""
    u, v, w = x[..., 0, :], x[..., 1, :], x[..., 2, :]
    return np.sum(mu * mu * u * u + (1.0 + gamma * mu) * v * v + w * w, axis=-1)


def _h2_norm_sq(x: np.ndarray, mu: np.ndarray, gamma: float) -> np.ndarray:
    u, v, w = x[..., 0, :], x[..., 1, :], x[..., 2, :]
    return np.sum(mu ** 4 * u * u + mu ** 2 * (1.0 + gamma * mu) * v * v + mu * mu * w * w, axis=-1)


def evolve_split(zeta: BeamState, p: ModelParams, t_end: float,
                 cfg: IntegratorConfig | None = None, sample_dt: float | None = 0.1
                 ) -> SplitTrajectory:
    """Co-integrate the shifted flow and its two parts.

    Parameters
    ----------
    zeta : BeamState
        Initial datum of the shifted problem, i.e. ``(u, u_t, omega)``.
    p : ModelParams
        Autonomous forcing required; ``p.alpha`` is the stiffness shift.
    """
    cfg = cfg or IntegratorConfig()
    if not p.is_autonomous:
        raise ValueError("the split is defined for time-independent forcing")
    if not p.alpha > 0:
        raise ValueError(f"alpha must be positive, got {p.alpha}")
    nsteps, dt, every, sidx = _prepare(zeta, t_end, cfg, sample_dt)
    N = p.basis.N
    mu = p.basis.mu
    full = np.array(zeta.stacked(), dtype=float)
    lpart = full.copy()
    kpart = np.zeros((3, N))
    out = np.empty((len(sidx), 3, 3, N))
    done = K.run_split(full, lpart, kpart, dt, nsteps, mu, p.mass, float(p.beta),
                       float(p.alpha), p.forcing.h(), cfg.fixed_point_iters, every,
                       float(cfg.blowup_threshold), out)
    times = zeta.t + dt * sidx
    if done < nsteps:
        last = BeamState.from_arrays(full[0], full[1], full[2], p.basis, zeta.t + done * dt)
        raise IntegrationError("blow-up in split co-integration", last, last.t)
    E0 = _h_norm_sq(out[:, 1], mu, p.gamma)
    E1 = _h2_norm_sq(out[:, 2], mu, p.gamma)
    defect = np.sqrt(_h_norm_sq(out[:, 0] - out[:, 1] - out[:, 2], mu, p.gamma))
    return SplitTrajectory(p, cfg, times, out, E0, E1, defect)


@dataclass(frozen=True)
class DecayFit:
    kappa: float
    prefactor: float
    t_floor: float
    window: tuple


def decay_rate_fit(t, E0, floor: float = 1e-14, min_points: int = 3) -> DecayFit:
    """Fit ``E0 ~ C^2 exp(-2 kappa t)``.

    The series is cut where it first drops to ``floor``; the fit uses the
    window ``[T/4, T]`` with ``T`` the cut time (or the end of the run).
    Returns ``kappa = -slope/2`` and the prefactor ``C`` of the norm.
    """
    t = np.asarray(t, dtype=float)
    E0 = np.asarray(E0, dtype=float)
    if t.shape != E0.shape:
        raise ValueError("time and series lengths differ")
    below = np.nonzero(E0 <= floor)[0]
    stop = below[0] if below.size else len(E0)
    if stop < min_points:
        raise ValueError("series too short above the floor")
    t_end = t[stop - 1]
    t0 = t[0] + 0.25 * (t_end - t[0])
    sel = (t >= t0) & (np.arange(len(t)) < stop)
    if np.count_nonzero(sel) < min_points:
        raise ValueError("series too short after truncation")
    slope, icpt = np.polyfit(t[sel], np.log(E0[sel]), 1)
    return DecayFit(float(-slope / 2.0), float(math.exp(icpt / 2.0)), float(t_end),
                    (float(t0), float(t_end)))


@dataclass(frozen=True)
class H2Report:
    sup: float
    running_max: np.ndarray
    tail_slope: float
    flat: bool


def h2_bound(split: SplitTrajectory, slope_tol: float = 1e-3) -> H2Report:
    """Running maximum of the regular-norm energy of the compact part.

    The tail check fits a line to the running max over the final half.
    """
    rm = np.maximum.accumulate(split.E1)
    t = split.times
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    if np.count_nonzero(half) >= 2:
        slope = float(np.polyfit(t[half], rm[half], 1)[0])
    else:
        slope = 0.0
    return H2Report(float(rm[-1]), rm, slope, slope < slope_tol)


def interpolation_gap(split: SplitTrajectory) -> np.ndarray:
    """``||w||_2 ||w||_4 - ||w||_3^2`` at each sample (never negative)."""
    mu = split.params.basis.mu
    w = split.data[:, 2, 0, :]
    n2 = np.sqrt(np.sum(mu ** 2 * w * w, axis=1))
    n3 = np.sum(mu ** 3 * w * w, axis=1)
    n4 = np.sqrt(np.sum(mu ** 4 * w * w, axis=1))
    return n2 * n4 - n3


@dataclass(frozen=True)
class ProofFunctionals:
    """Read-only energy functionals of the decay and compactness arguments."""

    times: np.ndarray
    Theta0: np.ndarray
    Upsilon0: np.ndarray
    Theta1: np.ndarray
    Upsilon1: np.ndarray

    def Lambda0(self, eps: float) -> np.ndarray:
        return self.Theta0 + eps * self.Upsilon0

    def Lambda1(self, eps: float) -> np.ndarray:
        return self.Theta1 + eps * self.Upsilon1


def proof_functionals(split: SplitTrajectory) -> ProofFunctionals:
    p = split.params
    mu = p.basis.mu
    h = p.forcing.h()
    full, L, Kp = split.data[:, 0], split.data[:, 1], split.data[:, 2]
    s = np.sum(mu * full[:, 0] ** 2, axis=1)
    v, vt, eta = L[:, 0], L[:, 1], L[:, 2]
    w, wt, rho = Kp[:, 0], Kp[:, 1], Kp[:, 2]
    v1 = np.sum(mu * v * v, axis=1)
    theta0 = split.E0 + p.beta * v1 + p.alpha * np.sum(v * v, axis=1) + s * v1
    ups0 = np.sum(vt * v, axis=1) + 2.0 * np.sum(vt * eta / mu, axis=1)
    w3 = np.sum(mu ** 3 * w * w, axis=1)
    theta1 = split.E1 + (p.beta + s) * w3 - 2.0 * np.sum(mu ** 2 * w * h, axis=1)
    ups1 = np.sum(mu ** 2 * wt * w, axis=1) + 2.0 * np.sum(mu * wt * rho, axis=1)
    return ProofFunctionals(split.times, theta0, ups0, theta1, ups1)


@dataclass(frozen=True)
class MatrixBSpectrum:
    a: float
    b: float
    c: float
    eigenvalues: np.ndarray
    U: np.ndarray
    cond: float

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.eigenvalues)


def matrix_B_spectrum() -> MatrixBSpectrum:
    """Eigen-decomposition of the fixed coupling matrix.

    Eigenvalues are ordered ``(a, b + ic, b - ic)`` and the columns of
    ``U`` have unit Euclidean length.
    """
    lam, vec = np.linalg.eig(B_MATRIX)
    real = int(np.argmin(np.abs(lam.imag)))
    upper = [i for i in range(3) if i != real and lam[i].imag > 0][0]
    lower = [i for i in range(3) if i not in (real, upper)][0]
    order = [real, upper, lower]
    lam = lam[order]
    lam[0] = lam[0].real
    U = vec[:, order].astype(complex)
    U /= np.linalg.norm(U, axis=0)
    return MatrixBSpectrum(float(lam[0].real), float(lam[1].real), float(lam[1].imag),
                           lam, U, float(np.linalg.cond(U)))


@dataclass(frozen=True)
class GammaReport:
    times: np.ndarray
    Gamma: np.ndarray
    slopes: np.ndarray
    k_hat: float
    max_slope: float
    truncated: bool

    def slope_ok(self, tol: float = 1e-3) -> bool:
        return self.max_slope <= self.k_hat ** 2 + tol


def _gamma_pieces(spec: MatrixBSpectrum, mu, beta, z1, z2):
    """``Gamma``, ``||xi*||_W`` and ``||G*||_W`` for arrays of shape (3, N)."""
    Uinv = np.linalg.inv(spec.U)
    u = z1[0] - z2[0]
    xi = np.stack([mu * u, z1[1] - z2[1], z1[2] - z2[2]])
    xs = Uinv @ xi
    wsq = float(np.sum(np.abs(xs) ** 2))
    w1 = float(np.sum(mu * (spec.a * np.abs(xs[0]) ** 2 + spec.b * np.abs(xs[1]) ** 2
                            + spec.b * np.abs(xs[2]) ** 2)))
    s1 = float(np.sum(mu * z1[0] ** 2))
    s2 = float(np.sum(mu * z2[0] ** 2))
    G = np.zeros((3, mu.size))
    G[1] = (s2 - s1) * mu * z2[0] - (beta + s1) * mu * u
    gs = Uinv @ G
    return w1, wsq, float(np.sqrt(np.sum(np.abs(gs) ** 2)))


def gamma_ratio_monitor(z1: BeamState, z2: BeamState, p: ModelParams, t_end: float,
                        cfg: IntegratorConfig | None = None, sample_dt: float = 0.01,
                        merge_tol: float = 1e-14) -> GammaReport:
    """Log-convexity ratio ``Gamma(t)`` of the difference of two trajectories.

    ``xi = (A^{1/2}u, u_t, omega)`` of the difference is mapped through
    ``U^{-1}``; ``Gamma = ||xi*||_{W1}^2 / ||xi*||_W^2``.  The report
    compares the largest discrete slope with ``k_hat^2``, where ``k_hat``
    is the largest sampled ratio ``||G*||_W / ||xi*||_W``.
    """
    if p.gamma != 0:
        raise ValueError("the Gamma diagnostic is defined for the non-rotational model")
    d0 = np.max(np.abs(z1.stacked() - z2.stacked()))
    if d0 == 0:
        raise ValueError("the two initial states coincide")
    cfg = cfg or IntegratorConfig()
    r1 = simulate(z1, t_end, cfg, p, sample_dt=sample_dt)
    r2 = simulate(z2, t_end, cfg, p, sample_dt=sample_dt)
    spec = matrix_B_spectrum()
    mu = p.basis.mu
    G, ks, ts = [], [], []
    truncated = False
    for j, t in enumerate(r1.times):
        w1, wsq, gn = _gamma_pieces(spec, mu, p.beta, r1.states[j], r2.states[j])
        if math.sqrt(wsq) < merge_tol:
            truncated = True
            break
        G.append(w1 / wsq)
        ks.append(gn / math.sqrt(wsq))
        ts.append(t)
    ts, G = np.array(ts), np.array(G)
    slopes = np.diff(G) / np.diff(ts) if len(ts) > 1 else np.zeros(0)
    k_hat = float(max(ks)) if ks else 0.0
    return GammaReport(ts, G, slopes, k_hat,
                       float(slopes.max()) if slopes.size else -math.inf, truncated)
