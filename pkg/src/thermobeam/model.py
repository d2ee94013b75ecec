"""Phase space, forcing, right-hand side and scalar functionals of the beam system.

The abstract system, for a rotational parameter ``gamma >= 0``, reads

    M_gamma u'' + A u - A^{1/2} theta + (beta + ||u||_1^2) A^{1/2} u = f(t)
    theta' + A^{1/2} theta + A^{1/2} u' = g(t)

with ``M_gamma = 1 + gamma A^{1/2}``.  In the sine basis every operator is
diagonal, so the only coupling between modes is the scalar ``||u||_1^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .spectral import BasisSpec, SpectralField, make_basis

__all__ = [
    "ForcingTerm",
    "Forcing",
    "ModelParams",
    "BeamState",
    "FunctionalRecord",
    "GrowthReport",
    "rhs",
    "energy",
    "lyapunov_shifted",
    "auxiliary_functionals",
    "shift_to_omega",
    "shift_from_omega",
    "state_norm",
    "continuous_dependence_check",
]

KIND_CONSTANT = "constant"
KIND_SINUSOIDAL = "sinusoidal"
KIND_TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class ForcingTerm:
    """Time-dependent spectral field.

    The value at time ``t`` is ``base + amp * sin(freq * t + phase)`` plus,
    for tabulated terms, a piecewise-linear interpolation of ``table_v`` on
    ``table_t`` (held constant outside the table).
    """

    kind: str
    base: np.ndarray
    amp: np.ndarray
    freq: float = 0.0
    phase: float = 0.0
    table_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    table_v: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if self.kind not in (KIND_CONSTANT, KIND_SINUSOIDAL, KIND_TABULATED):
            raise ValueError(f"unknown forcing kind {self.kind!r}")
        for name in ("base", "amp"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"forcing {name} has non-finite entries")
            object.__setattr__(self, name, arr)
        tt = np.array(self.table_t, dtype=float).reshape(-1)
        tv = np.array(self.table_v, dtype=float)
        if self.kind == KIND_TABULATED:
            if tt.size < 1 or tv.shape != (tt.size, self.base.size):
                raise ValueError("tabulated forcing needs K times and a (K, N) value table")
            if np.any(np.diff(tt) <= 0):
                raise ValueError("tabulated forcing times must be strictly increasing")
            if not np.all(np.isfinite(tv)):
                raise ValueError("tabulated forcing has non-finite samples")
        else:
            tt = np.zeros(0)
            tv = np.zeros((0, self.base.size))
        object.__setattr__(self, "table_t", tt)
        object.__setattr__(self, "table_v", tv)

    @property
    def N(self) -> int:
        return self.base.size

    @classmethod
    def zero(cls, basis: BasisSpec) -> "ForcingTerm":
        return cls(KIND_CONSTANT, np.zeros(basis.N), np.zeros(basis.N))

    @classmethod
    def constant(cls, value: SpectralField) -> "ForcingTerm":
        return cls(KIND_CONSTANT, value.coeffs, np.zeros(value.basis.N))

    @classmethod
    def sinusoidal(cls, amplitude: SpectralField, freq: float, phase: float = 0.0,
                   offset: SpectralField | None = None) -> "ForcingTerm":
        base = np.zeros(amplitude.basis.N) if offset is None else offset.coeffs
        return cls(KIND_SINUSOIDAL, base, amplitude.coeffs, float(freq), float(phase))

    @classmethod
    def tabulated(cls, times, values) -> "ForcingTerm":
        values = np.asarray(values, dtype=float)
        n = values.shape[1]
        return cls(KIND_TABULATED, np.zeros(n), np.zeros(n), table_t=times, table_v=values)

    @property
    def is_constant(self) -> bool:
        if self.kind == KIND_CONSTANT:
            return True
        if self.kind == KIND_SINUSOIDAL:
            return not np.any(self.amp) or self.freq == 0.0
        return bool(np.all(self.table_v == self.table_v[0]))

    def at(self, t: float) -> np.ndarray:
        out = self.base.copy()
        if self.kind == KIND_SINUSOIDAL:
            out += self.amp * math.sin(self.freq * t + self.phase)
        elif self.kind == KIND_TABULATED:
            tt, tv = self.table_t, self.table_v
            if t <= tt[0]:
                out += tv[0]
            elif t >= tt[-1]:
                out += tv[-1]
            else:
                k = int(np.searchsorted(tt, t, side="right")) - 1
                w = (t - tt[k]) / (tt[k + 1] - tt[k])
                out += (1.0 - w) * tv[k] + w * tv[k + 1]
        return out

    def field_at(self, t: float, basis: BasisSpec) -> SpectralField:
        return SpectralField(self.at(t), basis)


@dataclass(frozen=True, eq=False)
class Forcing:
    """Lateral load ``f`` and heat supply ``g``."""

    f: ForcingTerm
    g: ForcingTerm

    @classmethod
    def zero(cls, basis: BasisSpec) -> "Forcing":
        return cls(ForcingTerm.zero(basis), ForcingTerm.zero(basis))

    @classmethod
    def constant(cls, f: SpectralField | None, g: SpectralField | None,
                 basis: BasisSpec | None = None) -> "Forcing":
        basis = basis or (f or g).basis
        ft = ForcingTerm.constant(f) if f is not None else ForcingTerm.zero(basis)
        gt = ForcingTerm.constant(g) if g is not None else ForcingTerm.zero(basis)
        return cls(ft, gt)

    @property
    def is_autonomous(self) -> bool:
        return self.f.is_constant and self.g.is_constant

    def h(self, t: float = 0.0) -> np.ndarray:
        return self.f.at(t) + self.g.at(t)

    def theta_g(self, basis: BasisSpec) -> np.ndarray:
        """Coefficients of ``A^{-1/2} g`` (autonomous forcing only)."""
        cache = self.__dict__.get("_theta_g")
        if cache is None or cache.size != basis.N:
            if not self.is_autonomous:
                raise ValueError("theta_g is only defined for time-independent forcing")
            cache = self.g.at(0.0) / basis.mu
            cache.setflags(write=False)
            object.__setattr__(self, "_theta_g", cache)
        return cache


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: float
    gamma: float = 0.0
    alpha: float | None = None
    basis: BasisSpec = field(default_factory=make_basis)
    forcing: Forcing | None = None

    def __post_init__(self):
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ValueError(f"rotational parameter gamma must be >= 0, got {self.gamma}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.beta) ** 2 + 1.0)
        if self.forcing is None:
            object.__setattr__(self, "forcing", Forcing.zero(self.basis))
        if self.forcing.f.N != self.basis.N or self.forcing.g.N != self.basis.N:
            raise ValueError("forcing and model basis have different mode counts")

    @property
    def mass(self) -> np.ndarray:
        """Diagonal of ``M_gamma``."""
        return 1.0 + self.gamma * self.basis.mu

    @property
    def is_autonomous(self) -> bool:
        return self.forcing.is_autonomous

    def replace(self, **changes) -> "ModelParams":
        if "beta" in changes and "alpha" not in changes:
            changes["alpha"] = None
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BeamState:
    u: SpectralField
    v: SpectralField
    theta: SpectralField
    t: float = 0.0

    def __post_init__(self):
        if not (self.u.basis == self.v.basis == self.theta.basis):
            raise ValueError("state components live on different bases")
        if not math.isfinite(self.t):
            raise ValueError("state time must be finite")

    @property
    def basis(self) -> BasisSpec:
        return self.u.basis

    @classmethod
    def zeros(cls, basis: BasisSpec, t: float = 0.0) -> "BeamState":
        z = basis.zeros()
        return cls(z, z, z, t)

    @classmethod
    def from_arrays(cls, u, v, theta, basis: BasisSpec, t: float = 0.0) -> "BeamState":
        return cls(basis.field(u), basis.field(v), basis.field(theta), float(t))

    def arrays(self):
        return self.u.coeffs, self.v.coeffs, self.theta.coeffs

    def stacked(self) -> np.ndarray:
        return np.stack(self.arrays())

    def with_time(self, t: float) -> "BeamState":
        return replace(self, t=float(t))

    def __sub__(self, other: "BeamState") -> "BeamState":
        return BeamState(self.u - other.u, self.v - other.v, self.theta - other.theta, self.t)

    def __add__(self, other: "BeamState") -> "BeamState":
        return BeamState(self.u + other.u, self.v + other.v, self.theta + other.theta, self.t)


@dataclass(frozen=True)
class FunctionalRecord:
    """Scalar functionals of one state.

    ``s`` is the axial coefficient ``beta + ||u||_1^2``; ``L0`` and
    ``omega_dissipation`` are NaN when the forcing depends on time.
    """

    t: float
    E: float
    L: float
    L0: float
    Phi: float
    Psi: float
    s: float
    dissipation: float
    omega_dissipation: float
    kinetic: float


def state_norm(state: BeamState, gamma: float = 0.0) -> float:
    """Phase-space norm ``(||u||_2^2 + ||v||_{1,gamma}^2 + ||theta||^2)^{1/2}``."""
    mu = state.basis.mu
    u, v, th = state.arrays()
    return math.sqrt(float(np.sum(mu * mu * u * u + (1.0 + gamma * mu) * v * v + th * th)))


def _check_finite(state: BeamState):
    for comp in state.arrays():
        if not np.all(np.isfinite(comp)):
            raise ValueError("state has non-finite coefficients")


def rhs(state: BeamState, t: float, p: ModelParams):
    """Time derivative ``(u', v', theta')`` of the (rotational) system."""
    _check_finite(state)
    mu, m = p.basis.mu, p.mass
    u, v, th = state.arrays()
    s = float(np.sum(mu * u * u))
    f = p.forcing.f.at(t)
    g = p.forcing.g.at(t)
    dv = (-mu * mu * u + mu * th - (p.beta + s) * mu * u + f) / m
    dth = -mu * th - mu * v + g
    b = p.basis
    return b.field(v), b.field(dv), b.field(dth)


def energy(state: BeamState, p: ModelParams) -> float:
    """``1/2 (||u||_2^2 + ||v||_{1,gamma}^2 + ||theta||^2) + 1/4 (beta + ||u||_1^2)^2``."""
    mu = p.basis.mu
    u, v, th = state.arrays()
    s = float(np.sum(mu * u * u))
    quad = float(np.sum(mu * mu * u * u + p.mass * v * v + th * th))
    E = 0.5 * quad + 0.25 * (p.beta + s) ** 2
    if E < 0:
        raise ArithmeticError(f"negative energy {E}")
    return E


def _require_autonomous(p: ModelParams, what: str):
    if not p.is_autonomous:
        raise ValueError(f"{what} requires time-independent forcing")


def lyapunov_shifted(state: BeamState, p: ModelParams) -> float:
    """``L0 = E0 - <h, u>`` evaluated on the state shifted by ``theta_g``."""
    _require_autonomous(p, "lyapunov_shifted")
    mu = p.basis.mu
    u, v, th = state.arrays()
    om = th - p.forcing.theta_g(p.basis)
    s = float(np.sum(mu * u * u))
    quad = float(np.sum(mu * mu * u * u + p.mass * v * v + om * om))
    return 0.5 * quad + 0.25 * (p.beta + s) ** 2 - float(np.dot(p.forcing.h(), u))


def auxiliary_functionals(state: BeamState, p: ModelParams) -> FunctionalRecord:
    mu, m = p.basis.mu, p.mass
    u, v, th = state.arrays()
    t = state.t
    s = float(np.sum(mu * u * u))
    E = energy(state, p)
    mv = m * v
    if p.is_autonomous:
        L0 = lyapunov_shifted(state, p)
        om = th - p.forcing.theta_g(p.basis)
        om_diss = float(np.sum(mu * om * om))
    else:
        L0 = om_diss = math.nan
    return FunctionalRecord(
        t=t,
        E=E,
        L=E - float(np.dot(u, p.forcing.f.at(t))),
        L0=L0,
        Phi=float(np.dot(mv, u)),
        Psi=float(np.sum(mv * th / mu)),
        s=p.beta + s,
        dissipation=float(np.sum(mu * th * th)),
        omega_dissipation=om_diss,
        kinetic=float(np.sum(m * v * v)),
    )


def shift_to_omega(state: BeamState, p: ModelParams) -> BeamState:
    """Replace ``theta`` by ``omega = theta - theta_g``."""
    _require_autonomous(p, "shift_to_omega")
    tg = p.basis.field(p.forcing.theta_g(p.basis))
    return replace(state, theta=state.theta - tg)


def shift_from_omega(state: BeamState, p: ModelParams) -> BeamState:
    _require_autonomous(p, "shift_from_omega")
    tg = p.basis.field(p.forcing.theta_g(p.basis))
    return replace(state, theta=state.theta + tg)


@dataclass(frozen=True)
class GrowthReport:
    C_emp: float
    times: np.ndarray
    log_ratio: np.ndarray
    initial_distance: float


def continuous_dependence_check(z1: BeamState, z2: BeamState, p: ModelParams, T: float,
                                cfg=None, sample_dt: float = 0.1) -> GrowthReport:
    """Empirical constant ``C`` in ``||zbar(t)|| <= C e^{Ct} ||zbar(0)||``.

    Both states are advanced with the same integrator; the returned
    ``C_emp`` is the maximum over samples ``t > 0`` of
    ``log(||zbar(t)|| / ||zbar(0)||) / t`` (clipped below at 0).
    """
    from .integrator import IntegratorConfig, simulate

    d0 = state_norm(z1 - z2, p.gamma)
    if d0 == 0.0:
        raise ValueError("initial states coincide; growth ratio undefined")
    cfg = cfg or IntegratorConfig()
    r1 = simulate(z1, z1.t + T, cfg, p, sample_dt=sample_dt, keep_states=True)
    r2 = simulate(z2, z2.t + T, cfg, p, sample_dt=sample_dt, keep_states=True)
    times = r1.times - r1.times[0]
    diff = r1.states - r2.states
    mu, m = p.basis.mu, p.mass
    dist = np.sqrt(np.sum(mu * mu * diff[:, 0] ** 2 + m * diff[:, 1] ** 2 + diff[:, 2] ** 2, axis=1))
    keep = times > 0
    with np.errstate(divide="ignore"):
        ratio = np.log(np.maximum(dist[keep], 1e-300) / d0)
    C = float(max(0.0, np.max(ratio / times[keep]))) if np.any(keep) else 0.0
    return GrowthReport(C, times[keep], ratio, d0)
