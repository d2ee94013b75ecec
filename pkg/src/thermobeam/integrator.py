"""Exponential-IMEX time stepping and trajectory diagnostics.

Only the scalar ``s = ||u||_1^2`` is treated explicitly.  Within a step it is
frozen at a midpoint value and every mode is advanced by the exact
exponential of its 3x3 block, so the stiff linear part costs O(N) per step
whatever the mode count.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import _kernels as K
from .model import (
    BeamState,
    Forcing,
    ForcingTerm,
    FunctionalRecord,
    ModelParams,
)

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "TrajectoryRecord",
    "ResidualReport",
    "DissipationReport",
    "linear_block",
    "step",
    "simulate",
    "simulate_rk4",
    "energy_residual",
    "dissipation_integrals",
    "write_trajectory_csv",
    "CSV_COLUMNS",
]

SCHEME_EXP = "exponential-imex"
SCHEME_RK4 = "explicit-rk4"

CSV_COLUMNS = (
    "t", "E", "L0", "s", "norm_u2", "norm_v_gamma", "norm_theta",
    "dissipation", "cum_omega_H1", "energy_residual",
)

_KIND_CODES = {"constant": K.FORCING_CONSTANT, "sinusoidal": K.FORCING_SINUSOIDAL,
               "tabulated": K.FORCING_TABULATED}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = SCHEME_EXP
    fixed_point_iters: int = 2
    blowup_threshold: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be >= 1")
        if self.scheme not in (SCHEME_EXP, SCHEME_RK4):
            raise ValueError(f"unknown scheme {self.scheme!r}")


class IntegrationError(RuntimeError):
    """Blow-up during time stepping.

    ``state`` is the last state that passed the threshold check, ``time``
    the time at which the failing step started, ``record`` the partial
    trajectory up to ``state``.
    """

    def __init__(self, message, state: BeamState, time: float, record=None):
        super().__init__(message)
        self.state = state
        self.time = time
        self.record = record


def _term_args(term: ForcingTerm):
    tv = term.table_v if term.table_v.size else np.zeros((1, term.N))
    tt = term.table_t if term.table_t.size else np.zeros(1)
    return (_KIND_CODES[term.kind], term.base, term.amp, float(term.freq), float(term.phase),
            tt, np.ascontiguousarray(tv))


def _forcing_args(forcing: Forcing):
    return _term_args(forcing.f) + _term_args(forcing.g)


def linear_block(n: int, p: ModelParams, s: float) -> np.ndarray:
    """Per-mode generator ``G_n(s)`` acting on ``(u_n, v_n, theta_n)``."""
    if not 1 <= n <= p.basis.N:
        raise ValueError(f"mode {n} outside 1..{p.basis.N}")
    mu = float(p.basis.mu[n - 1])
    m = 1.0 + p.gamma * mu
    return np.array([
        [0.0, 1.0, 0.0],
        [-mu * (mu + p.beta + s) / m, 0.0, mu / m],
        [0.0, -mu, -mu],
    ])


def step(state: BeamState, cfg: IntegratorConfig, p: ModelParams,
         frozen_s: float | None = None, damping: bool = True) -> BeamState:
    """One exponential-midpoint step.

    With ``frozen_s`` the axial scalar is held fixed, which turns the map
    into the exact flow of a linear problem.  ``damping=False`` removes the
    thermal self-damping term (used to check the conservative structure).
    """
    if cfg.scheme != SCHEME_EXP:
        raise ValueError("step() implements the exponential scheme only")
    u, v, th = (np.array(a, dtype=float) for a in state.arrays())
    for a in (u, v, th):
        if not np.all(np.isfinite(a)):
            raise ValueError("state has non-finite coefficients")
    tm = state.t + 0.5 * cfg.dt
    u1, v1, th1 = np.empty_like(u), np.empty_like(v), np.empty_like(th)
    K.full_step(p.basis.mu, p.mass, float(p.beta), 0.0, 1.0 if damping else 0.0, cfg.dt,
                u, v, th, p.forcing.f.at(tm), p.forcing.g.at(tm), cfg.fixed_point_iters,
                math.nan if frozen_s is None else float(frozen_s), u1, v1, th1)
    if max(np.abs(u1).max(), np.abs(v1).max(), np.abs(th1).max()) > cfg.blowup_threshold \
            or not (np.all(np.isfinite(u1)) and np.all(np.isfinite(v1)) and np.all(np.isfinite(th1))):
        raise IntegrationError("coefficient exceeded blow-up threshold", state, state.t)
    return BeamState.from_arrays(u1, v1, th1, p.basis, state.t + cfg.dt)


@dataclass
class TrajectoryRecord:
    """Sampled trajectory plus per-step scalar diagnostics.

    ``step_times``/``diag`` hold raw scalars at every step (columns as in
    the kernel module); ``times``/``states`` are the sampled checkpoints.
    """

    params: ModelParams
    cfg: IntegratorConfig
    step_times: np.ndarray
    diag: np.ndarray
    sample_index: np.ndarray
    states: np.ndarray | None
    final_state: BeamState
    dense: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.step_times[self.sample_index]

    def _col(self, c):
        return self.diag[:, c]

    def _derived(self, name, fn):
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    @property
    def E(self) -> np.ndarray:
        """Energy at every step."""
        def fn():
            d = self.diag
            return 0.5 * (d[:, K.D_U2] + d[:, K.D_KIN] + d[:, K.D_TH2]) \
                + 0.25 * (self.params.beta + d[:, K.D_S]) ** 2
        return self._derived("E", fn)

    @property
    def L0(self) -> np.ndarray:
        def fn():
            if not self.params.is_autonomous:
                return np.full(len(self.step_times), np.nan)
            d = self.diag
            return 0.5 * (d[:, K.D_U2] + d[:, K.D_KIN] + d[:, K.D_OM2]) \
                + 0.25 * (self.params.beta + d[:, K.D_S]) ** 2 - d[:, K.D_UH]
        return self._derived("L0", fn)

    @property
    def omega_dissipation(self) -> np.ndarray:
        if not self.params.is_autonomous:
            return np.full(len(self.step_times), np.nan)
        return self._col(K.D_OMH1)

    @property
    def dissipation(self) -> np.ndarray:
        return self._col(K.D_THH1)

    @property
    def power_in(self) -> np.ndarray:
        return self._col(K.D_VF) + self._col(K.D_THG)

    @property
    def velocity_sq(self) -> np.ndarray:
        """``||v||^2`` at every step."""
        return self._col(K.D_V2)

    @property
    def kinetic(self) -> np.ndarray:
        """``||v||_{1,gamma}^2`` at every step."""
        return self._col(K.D_KIN)

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid running integral of a per-step series."""
        dt = np.diff(self.step_times)
        out = np.zeros_like(values, dtype=float)
        out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]))
        return out

    @property
    def cum_omega_H1(self) -> np.ndarray:
        return self._derived("cum_omega", lambda: self.cumulative(self.omega_dissipation))

    def state_at(self, j: int) -> BeamState:
        if self.states is None:
            raise ValueError("record was produced without state checkpoints")
        u, v, th = self.states[j]
        return BeamState.from_arrays(u, v, th, self.params.basis, float(self.times[j]))

    def functionals(self) -> list[FunctionalRecord]:
        """FunctionalRecord at every sample."""
        d = self.diag
        out = []
        for idx in self.sample_index:
            row = d[idx]
            out.append(FunctionalRecord(
                t=float(self.step_times[idx]),
                E=float(self.E[idx]),
                L=float(self.E[idx] - row[K.D_UF]),
                L0=float(self.L0[idx]),
                Phi=float(row[K.D_PHI]),
                Psi=float(row[K.D_PSI]),
                s=float(self.params.beta + row[K.D_S]),
                dissipation=float(row[K.D_THH1]),
                omega_dissipation=float(self.omega_dissipation[idx]),
                kinetic=float(row[K.D_KIN]),
            ))
        return out

    def semigroup_consistent(self, other: "TrajectoryRecord") -> float:
        """Distance between the final states of two records."""
        a, b = self.final_state, other.final_state
        from .model import state_norm
        return state_norm(a - b, self.params.gamma)


def _prepare(z0: BeamState, t_end: float, cfg: IntegratorConfig, sample_dt: float | None):
    span = t_end - z0.t
    if not span > 0:
        raise ValueError(f"t_end={t_end} must exceed the state time {z0.t}")
    nsteps = max(1, int(math.ceil(span / cfg.dt - 1e-9)))
    dt = span / nsteps
    if sample_dt is None:
        sample_every = nsteps
    else:
        sample_every = max(1, int(round(sample_dt / dt)))
    idx = list(range(0, nsteps + 1, sample_every))
    if idx[-1] != nsteps:
        idx.append(nsteps)
    return nsteps, dt, sample_every, np.array(idx)


def simulate(z0: BeamState, t_end: float, cfg: IntegratorConfig | None = None,
             p: ModelParams | None = None,
             observers: Iterable[Callable[[BeamState, FunctionalRecord], None]] = (),
             sample_dt: float | None = 0.1, keep_states: bool = True) -> TrajectoryRecord:
    """Advance ``z0`` to ``t_end``.

    Parameters
    ----------
    z0 : BeamState
        Initial state; its ``t`` is the start time.
    t_end : float
        Final time.  The step is shrunk slightly if needed so that an
        integer number of steps lands exactly on ``t_end``.
    cfg, p : IntegratorConfig, ModelParams
    observers : iterable of callables
        Called as ``obs(state, record)`` at every sample, in time order,
        once the run is complete.
    sample_dt : float or None
        Checkpoint spacing; ``None`` keeps only the initial and final states.

    Raises
    ------
    IntegrationError
        On blow-up, carrying the last good state and a partial record.
    """
    cfg = cfg or IntegratorConfig()
    if p is None:
        raise ValueError("model parameters are required")
    if z0.basis != p.basis:
        raise ValueError("initial state and model use different bases")
    if cfg.scheme == SCHEME_RK4:
        return simulate_rk4(z0, t_end, cfg.dt, p, sample_dt=sample_dt)
    nsteps, dt, sample_every, sidx = _prepare(z0, t_end, cfg, sample_dt)
    N = p.basis.N
    u, v, th = (np.array(a, dtype=float) for a in z0.arrays())
    diag = np.empty((nsteps + 1, K.N_DIAG))
    states = np.empty((len(sidx), 3, N))
    if p.is_autonomous:
        hvec, thg = p.forcing.h(), np.array(p.forcing.theta_g(p.basis))
    else:
        hvec, thg = np.zeros(N), np.zeros(N)
    done = K.run(u, v, th, float(z0.t), dt, nsteps, p.basis.mu, p.mass, float(p.beta), 1.0,
                 cfg.fixed_point_iters, math.nan, *_forcing_args(p.forcing), hvec, thg,
                 sample_every, float(cfg.blowup_threshold), diag, states)
    step_times = z0.t + dt * np.arange(nsteps + 1)
    last = BeamState.from_arrays(u, v, th, p.basis, float(step_times[done]))
    if done < nsteps:
        keep = sidx[sidx <= done]
        rec = TrajectoryRecord(p, cfg, step_times[:done + 1], diag[:done + 1], keep,
                               states[:len(keep)] if keep_states else None, last)
        raise IntegrationError(
            f"blow-up: coefficient exceeded {cfg.blowup_threshold:g} in the step starting at "
            f"t={step_times[done]:.6g}", last, float(step_times[done]), rec)
    rec = TrajectoryRecord(p, cfg, step_times, diag, sidx, states if keep_states else None, last)
    if np.any(rec.E < 0):
        raise ArithmeticError("negative energy encountered")
    observers = list(observers)
    if observers:
        recs = rec.functionals()
        for j, fr in enumerate(recs):
            st = rec.state_at(j) if keep_states else None
            for obs in observers:
                obs(st, fr)
    return rec


def simulate_rk4(z0: BeamState, t_end: float, dt: float, p: ModelParams,
                 sample_dt: float | None = None) -> TrajectoryRecord:
    """Reference trajectory by classical RK4 (diagnostics at samples only)."""
    cfg = IntegratorConfig(dt=dt, scheme=SCHEME_RK4)
    nsteps, dt, sample_every, sidx = _prepare(z0, t_end, cfg, sample_dt)
    N = p.basis.N
    u, v, th = (np.array(a, dtype=float) for a in z0.arrays())
    fa = _forcing_args(p.forcing)
    states = np.empty((len(sidx), 3, N))
    diag = np.empty((len(sidx), K.N_DIAG))
    if p.is_autonomous:
        hvec, thg = p.forcing.h(), np.array(p.forcing.theta_g(p.basis))
    else:
        hvec, thg = np.zeros(N), np.zeros(N)
    prev = 0
    for j, k in enumerate(sidx):
        if k > prev:
            K.run_rk4(u, v, th, z0.t + prev * dt, dt, int(k - prev), p.basis.mu, p.mass,
                      float(p.beta), *fa)
            prev = k
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(th))):
            raise IntegrationError("RK4 reference blew up", z0, z0.t + k * dt)
        t = z0.t + k * dt
        states[j] = (u, v, th)
        K._record_diag(p.basis.mu, p.mass, u, v, th, p.forcing.f.at(t), p.forcing.g.at(t),
                       hvec, thg, diag[j])
    times = z0.t + dt * sidx
    last = BeamState.from_arrays(u, v, th, p.basis, float(times[-1]))
    return TrajectoryRecord(p, cfg, times, diag, np.arange(len(sidx)), states, last, dense=False)


@dataclass(frozen=True)
class ResidualReport:
    per_step: np.ndarray
    max: float
    l1: float
    per_unit_time: float


def energy_residual(rec: TrajectoryRecord) -> ResidualReport:
    """Per-step defect of the discrete energy balance.

    ``r_k = E_{k+1} - E_k + trapz(||theta||_1^2 - <v, f> - <theta, g>)``.
    ``per_unit_time`` is ``sum |r_k| / T``.
    """
    if not rec.dense or len(rec.step_times) < 2:
        raise ValueError("energy residual needs diagnostics at every step")
    dt = np.diff(rec.step_times)
    q = rec.dissipation - rec.power_in
    r = np.diff(rec.E) + 0.5 * dt * (q[1:] + q[:-1])
    T = rec.step_times[-1] - rec.step_times[0]
    l1 = float(np.sum(np.abs(r)))
    return ResidualReport(r, float(np.max(np.abs(r))), l1, l1 / T)


@dataclass(frozen=True)
class DissipationReport:
    window: float
    window_starts: np.ndarray
    velocity_integrals: np.ndarray
    kinetic_integrals: np.ndarray | None
    cumulative_omega: np.ndarray
    window_sizes: np.ndarray
    max_window_integrals: np.ndarray
    nu: float
    C_nu: float
    C_nu_valid: float
    nu_by_range: np.ndarray
    range_ends: np.ndarray


def _affine_fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(icpt)


def dissipation_integrals(rec: TrajectoryRecord, window: float, n_sizes: int = 20,
                          start: float | None = None) -> DissipationReport:
    """Windowed integrals of ``||u_t||^2`` and their affine bound.

    For window sizes ``W`` up to ``window`` the worst-case integral
    ``I(W) = max_s int_s^{s+W} ||u_t||^2`` is fitted by ``nu W + C_nu``.
    ``nu_by_range`` repeats the fit on nested size ranges ending at
    ``range_ends``; for a trajectory settling on an equilibrium it
    decreases as the range grows.  The least-squares intercept ``C_nu`` can
    undercut short windows; ``C_nu_valid`` is the smallest intercept for
    which ``nu (t - s) + C`` bounds every window of the record.
    """
    if not rec.dense:
        raise ValueError("dissipation integrals need diagnostics at every step")
    t = rec.step_times
    if start is not None:
        keep = t >= start
    else:
        keep = np.ones_like(t, dtype=bool)
    tt = t[keep]
    span = tt[-1] - tt[0]
    if window > span + 1e-12:
        raise ValueError(f"window {window} longer than trajectory span {span}")
    dt = rec.step_times[1] - rec.step_times[0]
    cum_v = rec.cumulative(rec.velocity_sq)[keep]
    cum_k = rec.cumulative(rec.kinetic)[keep] if rec.params.gamma > 0 else None
    w = max(1, int(round(window / dt)))
    starts = tt[:len(tt) - w]
    vint = cum_v[w:] - cum_v[:-w]
    kint = (cum_k[w:] - cum_k[:-w]) if cum_k is not None else None
    sizes_steps = np.unique(np.linspace(1, w, n_sizes).round().astype(int))
    maxint = np.array([np.max(cum_v[k:] - cum_v[:-k]) for k in sizes_steps])
    sizes = sizes_steps * dt
    nu, C = _affine_fit(sizes, maxint)
    g = cum_v - nu * tt
    C_valid = max(0.0, float(np.max(g - np.minimum.accumulate(g))))
    ends, nus = [], []
    for j in range(3, len(sizes) + 1):
        sl, _ = _affine_fit(sizes[:j], maxint[:j])
        ends.append(sizes[j - 1])
        nus.append(sl)
    return DissipationReport(window, starts, vint, kint, rec.cum_omega_H1, sizes, maxint,
                             nu, C, C_valid, np.array(nus), np.array(ends))


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.17g}"


def trajectory_rows(rec: TrajectoryRecord):
    """Rows of the trajectory CSV, one per sample."""
    gamma = rec.params.gamma
    d = rec.diag
    E, L0, cum = rec.E, rec.L0, rec.cum_omega_H1
    if rec.dense and len(rec.step_times) > 1:
        abs_r = np.abs(energy_residual(rec).per_step)
        cum_r = np.concatenate([[0.0], np.cumsum(abs_r)])
    else:
        cum_r = None
    prev = 0
    for idx in rec.sample_index:
        res = (cum_r[idx] - cum_r[prev]) if cum_r is not None else math.nan
        prev = idx
        row = d[idx]
        yield [
            rec.step_times[idx], E[idx], L0[idx], rec.params.beta + row[K.D_S],
            math.sqrt(row[K.D_U2]), math.sqrt(row[K.D_KIN]), math.sqrt(row[K.D_TH2]),
            row[K.D_THH1], cum[idx], res,
        ]


def write_trajectory_csv(rec: TrajectoryRecord, out) -> None:
    """Write the sampled trajectory as CSV (17 significant digits).

    ``out`` is a path or a text stream.  ``energy_residual`` is the sum of
    absolute per-step residuals since the previous row.
    """
    own = isinstance(out, (str, bytes)) or hasattr(out, "__fspath__")
    fh = open(out, "w", newline="") if own else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in trajectory_rows(rec):
            w.writerow([_fmt(float(x)) for x in row])
    finally:
        if own:
            fh.close()


def trajectory_csv_text(rec: TrajectoryRecord) -> str:
    buf = io.StringIO()
    write_trajectory_csv(rec, buf)
    return buf.getvalue()
