"""Configuration, ensembles and the named experiments behind the CLI.

Configuration files are flat ``key = value`` text with dotted keys, for
example::

    model.beta = 5
    forcing.f.base = 1:1.0
    forcing.g.kind = sinusoidal
    forcing.g.amp = 1:0.5
    forcing.g.freq = 1.0
    absorb.radii = 1, 10, 100, 1000

Mode lists are written ``n:value`` separated by commas or blanks.  Every
``cmd_*`` function writes its outputs into a directory and returns the
process exit code (0 ok, 1 usage or I/O, 2 blow-up, 3 inconclusive pilot).
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone

import numpy as np
from scipy.optimize import brentq

from .decomposition import decay_rate_fit, evolve_split, gamma_ratio_monitor, h2_bound
from .gronwall import linear_closed_form, verify_superlinear
from .integrator import (
    IntegrationError,
    IntegratorConfig,
    energy_residual,
    simulate,
    write_trajectory_csv,
)
from .model import BeamState, Forcing, ForcingTerm, ModelParams, energy, state_norm
from .spectral import make_basis
from .stationary import enumerate_stationary, stationary_state

__all__ = [
    "ConfigError",
    "PilotInconclusive",
    "ExperimentConfig",
    "load_config",
    "parse_config_text",
    "sample_profile",
    "scale_to_energy",
    "draw_ensemble",
    "draw_ball",
    "run_parallel",
    "lyapunov_violations",
    "absorb_table",
    "attract_report",
    "gamma_sweep",
    "cmd_simulate",
    "cmd_stationary",
    "cmd_decompose",
    "cmd_backward",
    "cmd_gronwall",
    "cmd_absorb",
    "cmd_attract",
    "cmd_gamma_sweep",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_BLOWUP",
    "EXIT_PILOT",
]

EXIT_OK, EXIT_USAGE, EXIT_BLOWUP, EXIT_PILOT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class PilotInconclusive(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration

def _opt(key, kind, default, doc=""):
    return field(default=default, metadata={"key": key, "kind": kind, "doc": doc})


@dataclass(frozen=True)
class ExperimentConfig:
    beta: float = _opt("model.beta", "float", 5.0, "axial force parameter")
    gamma: float = _opt("model.gamma", "float", 0.0, "rotational parameter")
    modes: int = _opt("model.modes", "int", 32, "number of sine modes")
    alpha: float | None = _opt("model.alpha", "optfloat", None, "split shift, default beta^2+1")
    dt: float = _opt("integrator.dt", "float", 1e-3)
    t_end: float = _opt("integrator.t_end", "float", 20.0)
    scheme: str = _opt("integrator.scheme", "str", "exponential-imex")
    fixed_point_iters: int = _opt("integrator.fixed_point_iters", "int", 2)
    sample_dt: float = _opt("integrator.sample_dt", "float", 0.1)
    blowup_threshold: float = _opt("integrator.blowup_threshold", "float", 1e12)
    f_kind: str = _opt("forcing.f.kind", "str", "constant")
    f_base: dict = _opt("forcing.f.base", "modes", None)
    f_amp: dict = _opt("forcing.f.amp", "modes", None)
    f_freq: float = _opt("forcing.f.freq", "float", 0.0)
    f_phase: float = _opt("forcing.f.phase", "float", 0.0)
    f_table: str = _opt("forcing.f.table", "str", "", "CSV file: t, c1, c2, ...")
    g_kind: str = _opt("forcing.g.kind", "str", "constant")
    g_base: dict = _opt("forcing.g.base", "modes", None)
    g_amp: dict = _opt("forcing.g.amp", "modes", None)
    g_freq: float = _opt("forcing.g.freq", "float", 0.0)
    g_phase: float = _opt("forcing.g.phase", "float", 0.0)
    g_table: str = _opt("forcing.g.table", "str", "")
    init_u: dict = _opt("init.u", "modes", None)
    init_v: dict = _opt("init.v", "modes", None)
    init_theta: dict = _opt("init.theta", "modes", None)
    init2_u: dict = _opt("init2.u", "modes", None, "second state for backward-check")
    init2_v: dict = _opt("init2.v", "modes", None)
    init2_theta: dict = _opt("init2.theta", "modes", None)
    seed: int = _opt("ensemble.seed", "int", 0)
    ensemble_size: int = _opt("ensemble.size", "int", 10)
    ensemble_energy: float = _opt("ensemble.energy", "float", 50.0)
    threads: int = _opt("run.threads", "int", 1)
    out_dir: str = _opt("output.dir", "str", "out")
    convergence: bool = _opt("simulate.convergence", "bool", False,
                             "also run at dt/2 and report the residual ratio")
    radii: tuple = _opt("absorb.radii", "floats", (1.0, 10.0, 100.0, 1000.0))
    horizon: float = _opt("absorb.horizon", "float", 20.0)
    pilot_time: float = _opt("absorb.pilot_time", "float", 40.0)
    plateau_tol: float = _opt("absorb.plateau_tol", "float", 0.1)
    window: float = _opt("dissipation.window", "float", 10.0)
    seeds: tuple = _opt("attract.seeds", "floats", (), "mode-1 seed amplitudes")
    attract_tol: float = _opt("attract.tol", "float", 1e-6)
    backward_sample_dt: float = _opt("backward.sample_dt", "float", 0.01)
    gammas: tuple = _opt("sweep.gammas", "floats", (1.0, 0.1, 0.01, 0.0))
    compare_time: float = _opt("sweep.compare_time", "float", 5.0)
    gr_K: float = _opt("gronwall.K", "float", 1.0)
    gr_Q: float = _opt("gronwall.Q", "float", 0.01)
    gr_eps0: float = _opt("gronwall.eps0", "float", 0.5)
    gr_lambda0: float = _opt("gronwall.lambda0", "float", 100.0)
    gr_horizon: float = _opt("gronwall.horizon", "float", 100.0)
    gr_dt: float = _opt("gronwall.dt", "float", 1e-4)
    s_max: float | None = _opt("stationary.s_max", "optfloat", None)

    # -- builders --------------------------------------------------------
    @property
    def basis(self):
        return make_basis(self.modes)

    def _vec(self, modes: dict | None) -> np.ndarray:
        out = np.zeros(self.modes)
        for n, val in (modes or {}).items():
            if not 1 <= n <= self.modes:
                raise ConfigError(f"mode {n} outside 1..{self.modes}")
            out[n - 1] = val
        return out

    def _term(self, which: str) -> ForcingTerm:
        kind = getattr(self, f"{which}_kind")
        base = self._vec(getattr(self, f"{which}_base"))
        amp = self._vec(getattr(self, f"{which}_amp"))
        if kind == "tabulated":
            path = getattr(self, f"{which}_table")
            if not path:
                raise ConfigError(f"forcing.{which}.table is required for tabulated forcing")
            data = np.loadtxt(path, delimiter=",", ndmin=2)
            vals = np.zeros((data.shape[0], self.modes))
            k = min(self.modes, data.shape[1] - 1)
            vals[:, :k] = data[:, 1:1 + k]
            return ForcingTerm("tabulated", base, np.zeros(self.modes), table_t=data[:, 0],
                               table_v=vals)
        if kind not in ("constant", "sinusoidal"):
            raise ConfigError(f"forcing.{which}.kind must be constant, sinusoidal or tabulated")
        return ForcingTerm(kind, base, amp if kind == "sinusoidal" else np.zeros(self.modes),
                           getattr(self, f"{which}_freq"), getattr(self, f"{which}_phase"))

    def params(self, **changes) -> ModelParams:
        p = ModelParams(self.beta, self.gamma, self.alpha, self.basis,
                        Forcing(self._term("f"), self._term("g")))
        return replace(p, **changes) if changes else p

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.dt, self.scheme, self.fixed_point_iters,
                                self.blowup_threshold)

    def initial_state(self, which: str = "init") -> BeamState:
        return BeamState.from_arrays(self._vec(getattr(self, f"{which}_u")),
                                     self._vec(getattr(self, f"{which}_v")),
                                     self._vec(getattr(self, f"{which}_theta")), self.basis)

    def resolved_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.metadata['key']} = {_render(getattr(self, f.name), f.metadata['kind'])}")
        return "\n".join(lines) + "\n"


def _render(value, kind):
    if value is None:
        return "none"
    if kind == "modes":
        return ", ".join(f"{n}:{v!r}" for n, v in sorted(value.items()))
    if kind == "floats":
        return ", ".join(repr(float(x)) for x in value)
    if kind == "bool":
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str, kind: str, key: str):
    t = text.strip()
    try:
        if kind == "float":
            return float(t)
        if kind == "optfloat":
            return None if t.lower() in ("", "none") else float(t)
        if kind == "int":
            return int(t)
        if kind == "str":
            return t
        if kind == "bool":
            if t.lower() in ("1", "true", "yes", "on"):
                return True
            if t.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(t)
        if kind == "floats":
            return tuple(float(x) for x in t.replace(",", " ").split())
        if kind == "modes":
            if t.lower() in ("", "none"):
                return None
            out = {}
            for item in t.replace(",", " ").split():
                n, v = item.split(":")
                out[int(n)] = float(v)
            return out
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unknown kind {kind}")


_KEYS = {f.metadata["key"]: f for f in fields(ExperimentConfig)}


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from ``key = value`` lines plus ``overrides``."""
    values = {}
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        items.append((k.strip(), v))
    items.extend((overrides or {}).items())
    for k, v in items:
        if k not in _KEYS:
            raise ConfigError(f"unknown configuration key {k!r}")
        f = _KEYS[k]
        values[f.name] = _parse_value(str(v), f.metadata["kind"], k)
    try:
        cfg = ExperimentConfig(**values)
        cfg.params()
        cfg.integrator()
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return parse_config_text(text, overrides)


# --------------------------------------------------------------------------
# ensembles

def sample_profile(rng: np.random.Generator, basis) -> BeamState:
    """Random state whose phase-space coefficients decay like ``n^-2``."""
    n = np.arange(1, basis.N + 1, dtype=float)
    a = rng.standard_normal((3, basis.N)) / n ** 2
    return BeamState.from_arrays(a[0] / basis.mu, a[1], a[2], basis)


def _scaled(z: BeamState, lam: float) -> BeamState:
    u, v, th = z.arrays()
    return BeamState.from_arrays(lam * u, lam * v, lam * th, z.basis)


def scale_to_energy(profile: BeamState, p: ModelParams, target: float,
                    grid: int = 200) -> BeamState | None:
    """Multiple of ``profile`` with energy ``target`` (largest such multiple).

    Returns None when no multiple reaches the target, e.g. a target below
    the minimum of the energy along the ray.
    """
    E = lambda lam: energy(_scaled(profile, lam), p) - target
    hi = 1.0
    while E(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            return None
    lams = np.linspace(0.0, hi, grid)
    vals = np.array([E(x) for x in lams])
    below = np.nonzero(vals <= 0)[0]
    if not below.size:
        return None
    k = below[-1]
    if vals[k] == 0:
        return _scaled(profile, lams[k])
    lam = brentq(E, lams[k], lams[k + 1], xtol=1e-15, rtol=1e-14)
    return _scaled(profile, lam)


def draw_ensemble(size: int, seed: int, p: ModelParams, target: float,
                  max_tries: int = 50) -> list[BeamState | None]:
    """Member ``i`` uses its own spawned stream, so results do not depend on
    how members are distributed over workers.  A member that cannot reach
    the target after ``max_tries`` profiles is None."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(size):
        rng = np.random.default_rng(ss)
        z = None
        for _ in range(max_tries):
            z = scale_to_energy(sample_profile(rng, p.basis), p, target)
            if z is not None:
                break
        out.append(z)
    return out


def draw_ball(size: int, seed: int, basis, radius: float = 1.0, gamma: float = 0.0
              ) -> list[BeamState]:
    """Random states with phase-space norm uniform in ``(0, radius]``."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(size):
        rng = np.random.default_rng(ss)
        z = sample_profile(rng, basis)
        r = radius * (1.0 - rng.random())
        out.append(_scaled(z, r / state_norm(z, gamma)))
    return out


def run_parallel(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]`` on a thread pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def lyapunov_violations(rec, coeff: float = 10.0) -> tuple[int, float]:
    """Steps where the shifted functional rises by more than ``coeff*dt^3``.

    Returns the count and the largest single-step increase.
    """
    L0 = rec.L0
    dt = float(np.max(np.diff(rec.step_times)))
    inc = np.diff(L0)
    return int(np.count_nonzero(inc > coeff * dt ** 3)), float(np.max(inc)) if inc.size else 0.0


# --------------------------------------------------------------------------
# experiments

@dataclass(frozen=True)
class AbsorbRow:
    R: float
    members: int
    t0_emp: float
    permanent: bool
    max_after_entry: float


@dataclass(frozen=True)
class AbsorbResult:
    R0_emp: float
    pilot_limsups: tuple
    rows: tuple
    horizon: float

    @property
    def finite(self) -> bool:
        return all(math.isfinite(r.t0_emp) for r in self.rows)

    @property
    def non_decreasing(self) -> bool:
        t = [r.t0_emp for r in self.rows]
        return all(b >= a for a, b in zip(t, t[1:]))

    @property
    def permanent(self) -> bool:
        return all(r.permanent for r in self.rows)


def _energy_series(z, p, cfg, t_end):
    rec = simulate(z, t_end, cfg, p, sample_dt=None, keep_states=False)
    return rec.step_times, rec.E


def absorb_table(p: ModelParams, cfg: IntegratorConfig, radii, size: int, seed: int,
                 horizon: float, pilot_time: float, plateau_tol: float = 0.1,
                 threads: int = 1) -> AbsorbResult:
    """Entering times into the empirical absorbing level.

    The pilot ensemble starts at the largest radius and runs to
    ``pilot_time``; its limsup per member is the maximum energy over the
    final quarter.  If that maximum differs from the one over the previous
    quarter by more than ``plateau_tol`` (relative), there is no plateau and
    PilotInconclusive is raised.  ``R0_emp`` is twice the largest limsup.
    Each radius then reuses the same seeded profiles scaled to energy R,
    runs to ``5 * horizon``, and records the time after which the energy
    never exceeds ``R0_emp`` again.  A row is permanent when that time is
    within ``horizon``, so the stay inside lasts at least four horizons.
    """
    radii = sorted(float(r) for r in radii)
    pilot = [z for z in draw_ensemble(size, seed, p, radii[-1]) if z is not None]
    if not pilot:
        raise PilotInconclusive("no pilot member reaches the largest radius")

    def pilot_run(z):
        t, E = _energy_series(z, p, cfg, pilot_time)
        q3 = t >= 0.75 * t[-1]
        q2 = (t >= 0.5 * t[-1]) & ~q3
        return float(np.max(E[q3])), float(np.max(E[q2]))

    res = run_parallel(pilot_run, pilot, threads)
    for last, prev in res:
        if abs(last - prev) > plateau_tol * max(abs(last), 1e-300):
            raise PilotInconclusive(
                f"pilot energy has no plateau (last-quarter max {last:.6g}, "
                f"previous quarter {prev:.6g})")
    limsups = tuple(r[0] for r in res)
    R0 = 2.0 * max(limsups)
    T = 5.0 * horizon
    rows = []
    for R in radii:
        members = [z for z in draw_ensemble(size, seed, p, R) if z is not None]

        def member(z):
            t, E = _energy_series(z, p, cfg, T)
            above = np.nonzero(E > R0)[0]
            if not above.size:
                return 0.0, True, float(np.max(E))
            if above[-1] == len(E) - 1:
                return math.inf, False, math.inf
            # t0 is the last exit; the stay after it covers at least 4 horizons
            t0 = float(t[above[-1] + 1])
            return t0, t0 <= horizon, float(np.max(E[above[-1] + 1:]))

        out = run_parallel(member, members, threads)
        if out:
            rows.append(AbsorbRow(R, len(out), max(o[0] for o in out),
                                  all(o[1] for o in out), max(o[2] for o in out)))
        else:
            rows.append(AbsorbRow(R, 0, 0.0, True, math.nan))
    return AbsorbResult(R0, limsups, tuple(rows), horizon)


@dataclass(frozen=True)
class AttractMember:
    index: int
    init_sign: int
    final_distance: float
    nearest: int
    branch: str
    violations: int
    max_increment: float


@dataclass(frozen=True)
class AttractResult:
    points: tuple
    members: tuple

    def basin_table(self) -> dict:
        """Counts of limit branches by sign of the initial mode-1 datum."""
        table = {}
        for m in self.members:
            key = (m.init_sign, m.branch)
            table[key] = table.get(key, 0) + 1
        return table


def attract_report(p: ModelParams, cfg: IntegratorConfig, t_end: float, initials,
                   threads: int = 1) -> AttractResult:
    """Distance of each final state to the nearest stationary state."""
    if not p.is_autonomous:
        raise ValueError("attractor report needs time-independent forcing")
    h = p.basis.field(p.forcing.h())
    pts = enumerate_stationary(h, p.beta, p)
    targets = [stationary_state(pt, p) for pt in pts]

    def member(item):
        i, z = item
        rec = simulate(z, t_end, cfg, p, sample_dt=None, keep_states=False)
        d = [state_norm(rec.final_state.with_time(0.0) - zs, p.gamma) for zs in targets]
        k = int(np.argmin(d))
        nv, mx = lyapunov_violations(rec)
        sign = int(np.sign(z.u.coeffs[0]))
        return AttractMember(i, sign, float(d[k]), k, pts[k].branch, nv, mx)

    members = run_parallel(member, list(enumerate(initials)), threads)
    return AttractResult(tuple(pts), tuple(members))


@dataclass(frozen=True)
class SweepResult:
    gammas: tuple
    rates: tuple
    tail_distances: tuple
    limit_points: tuple
    stationary_identical: bool

    @property
    def rate_spread(self) -> float:
        r = np.array(self.rates)
        return float((r.max() - r.min()) / r.max())

    @property
    def distances_monotone(self) -> bool:
        """Distances to the gamma=0 state do not increase as gamma decreases."""
        pairs = sorted((g, d) for g, d in zip(self.gammas, self.tail_distances) if g > 0)
        ds = [d for _, d in pairs]
        return all(a <= b for a, b in zip(ds, ds[1:]))


def gamma_sweep(p: ModelParams, cfg: IntegratorConfig, z0: BeamState, gammas, t_end: float,
                compare_time: float, threads: int = 1) -> SweepResult:
    """Same scenario across rotational parameters.

    For each gamma: decay rate of the distance to the nearest stationary
    state, the limit point, and the state at ``compare_time``, whose
    phase-space distance to the gamma=0 state is reported.
    """
    gammas = tuple(float(g) for g in gammas)
    if 0.0 not in gammas:
        raise ValueError("the gamma list must contain 0")
    h = p.basis.field(p.forcing.h())

    def one(g):
        pg = p.replace(gamma=g)
        pts = enumerate_stationary(h, pg.beta, pg)
        targets = [stationary_state(pt, pg) for pt in pts]
        rec = simulate(z0, t_end, cfg, pg, sample_dt=0.05)
        d = [state_norm(rec.final_state.with_time(0.0) - zs, 0.0) for zs in targets]
        k = int(np.argmin(d))
        dist2 = np.array([state_norm(rec.state_at(j).with_time(0.0) - targets[k], g) ** 2
                          for j in range(len(rec.times))])
        fit = decay_rate_fit(rec.times, dist2)
        j = int(np.argmin(np.abs(rec.times - compare_time)))
        return fit.kappa, rec.states[j], k, tuple(pt.u.coeffs.tobytes() for pt in pts)

    res = run_parallel(one, gammas, threads)
    ref = res[gammas.index(0.0)][1]
    mu = p.basis.mu
    dists = []
    for r in res:
        diff = r[1] - ref
        dists.append(float(np.sqrt(np.sum(mu * mu * diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2))))
    same = all(r[3] == res[0][3] for r in res)
    return SweepResult(gammas, tuple(r[0] for r in res), tuple(dists),
                       tuple(r[2] for r in res), same)


# --------------------------------------------------------------------------
# output helpers and commands

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return f"{x:.17g}" if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _kv_text(pairs) -> str:
    width = max(len(k) for k, _ in pairs)
    return "".join(f"{k:<{width}}  {_fmt(v)}\n" for k, v in pairs)


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "thermobeam": __version__}


class _Run:
    """Collects outputs and writes the manifest and config echo."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: str):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def finish(self, code: int, extra: dict | None = None) -> int:
        with open(os.path.join(self.out, "config.resolved.txt"), "w") as fh:
            fh.write(self.cfg.resolved_text())
        manifest = {
            "command": self.command,
            "argv": sys.argv,
            "started_utc": self.started,
            "wall_time_s": time.perf_counter() - self.t0,
            "seed": self.cfg.seed,
            "threads": self.cfg.threads,
            "versions": _versions(),
            "outputs": self.outputs + ["config.resolved.txt"],
            "exit_code": code,
        }
        if extra:
            manifest.update(extra)
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
            fh.write("\n")
        return code


def cmd_simulate(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("simulate", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    z0 = cfg.initial_state()
    try:
        rec = simulate(z0, cfg.t_end, icfg, p, sample_dt=cfg.sample_dt, keep_states=False)
    except IntegrationError as exc:
        if exc.record is not None:
            write_trajectory_csv(exc.record, run.path("trajectory.csv"))
        with open(run.path("summary.txt"), "w") as fh:
            fh.write(_kv_text([("status", "blow-up"), ("blowup_time", exc.time)]))
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    write_trajectory_csv(rec, run.path("trajectory.csv"))
    pairs = [("status", "ok"), ("t_end", rec.step_times[-1]), ("final_E", rec.E[-1])]
    if rec.dense:
        r = energy_residual(rec)
        pairs += [("residual_max", r.max), ("residual_per_unit_time", r.per_unit_time)]
        if cfg.convergence:
            half = simulate(z0, cfg.t_end, replace(icfg, dt=icfg.dt / 2), p, sample_dt=None,
                            keep_states=False)
            r2 = energy_residual(half)
            pairs += [("residual_per_unit_time_half_dt", r2.per_unit_time),
                      ("residual_ratio", r.per_unit_time / r2.per_unit_time
                       if r2.per_unit_time > 0 else math.nan)]
    with open(run.path("summary.txt"), "w") as fh:
        fh.write(_kv_text(pairs))
    return run.finish(EXIT_OK)


def cmd_stationary(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("stationary", cfg, out)
    p = cfg.params()
    h = p.basis.field(p.forcing.h(0.0))
    pts = enumerate_stationary(h, p.beta, p, s_max=cfg.s_max)
    header = ["branch", "s", "residual"] + [f"c{n}" for n in range(1, p.basis.N + 1)]
    _write_csv(run.path("stationary.csv"), header,
               [[pt.branch, pt.s, pt.residual, *pt.u.coeffs] for pt in pts])
    return run.finish(EXIT_OK, {"points": len(pts),
                                "degenerate": [pt.branch for pt in pts if pt.degenerate]})


def cmd_decompose(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("decompose", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    try:
        sp = evolve_split(cfg.initial_state(), p, cfg.t_end, icfg, sample_dt=cfg.sample_dt)
    except IntegrationError as exc:
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    _write_csv(run.path("decompose.csv"), ["t", "E0", "E1", "sum_defect"],
               zip(sp.times, sp.E0, sp.E1, sp.sum_defect))
    try:
        fit = decay_rate_fit(sp.times, sp.E0)
        kappa, pref = fit.kappa, fit.prefactor
    except ValueError:
        kappa = pref = math.nan
    hb = h2_bound(sp)
    with open(run.path("summary.txt"), "w") as fh:
        fh.write(_kv_text([("kappa_hat", kappa), ("prefactor", pref), ("E1_sup", hb.sup),
                           ("E1_tail_slope", hb.tail_slope), ("E1_flat", hb.flat),
                           ("sum_defect_per_unit_time", sp.defect_rate)]))
    return run.finish(EXIT_OK)


def cmd_backward(cfg: ExperimentConfig, out: str) -> int:
    z1, z2 = cfg.initial_state("init"), cfg.initial_state("init2")
    if np.array_equal(z1.stacked(), z2.stacked()):
        raise ConfigError("backward-check needs two different initial states (init.*, init2.*)")
    run = _Run("backward-check", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    try:
        rep = gamma_ratio_monitor(z1, z2, p, cfg.t_end, icfg, sample_dt=cfg.backward_sample_dt)
    except IntegrationError as exc:
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    slopes = np.append(rep.slopes, math.nan)
    _write_csv(run.path("backward.csv"), ["t", "Gamma", "slope", "k_hat"],
               [(t, g, s, rep.k_hat) for t, g, s in zip(rep.times, rep.Gamma, slopes)])
    return run.finish(EXIT_OK, {"max_slope": rep.max_slope, "k_hat_sq": rep.k_hat ** 2,
                                "slope_ok": rep.slope_ok(), "truncated": rep.truncated})


def cmd_gronwall(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("gronwall-check", cfg, out)
    rep = verify_superlinear(cfg.gr_K, cfg.gr_Q, cfg.gr_eps0, cfg.gr_lambda0,
                             horizon=cfg.gr_horizon, dt=cfg.gr_dt)
    pairs = [("K", cfg.gr_K), ("Q", cfg.gr_Q), ("eps0", cfg.gr_eps0),
             ("lambda0", cfg.gr_lambda0), ("horizon", cfg.gr_horizon),
             ("satisfied", rep.satisfied),
             ("first_violation_time", "none" if rep.first_violation_time is None
              else rep.first_violation_time),
             ("R1_emp", rep.R1_emp), ("entering_time", rep.entering_time),
             ("margin", rep.margin)]
    rows = [rep.times, rep.values]
    header = ["t", "Lambda"]
    if cfg.gr_K == 0:
        cf = linear_closed_form(cfg.gr_Q, cfg.gr_eps0, cfg.gr_lambda0, rep.times)
        rows.append(cf)
        header.append("closed_form")
        pairs.append(("closed_form_max_rel_error",
                      float(np.max(np.abs(rep.values - cf) / np.maximum(np.abs(cf), 1e-300)))))
    text = _kv_text(pairs)
    with open(run.path("gronwall.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    _write_csv(run.path("gronwall.csv"), header, zip(*rows))
    return run.finish(EXIT_OK)


def cmd_absorb(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("absorb", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    try:
        res = absorb_table(p, icfg, cfg.radii, cfg.ensemble_size, cfg.seed, cfg.horizon,
                           cfg.pilot_time, cfg.plateau_tol, cfg.threads)
    except PilotInconclusive as exc:
        return run.finish(EXIT_PILOT, {"error": str(exc)})
    except IntegrationError as exc:
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    with open(run.path("absorb.csv"), "w", newline="") as fh:
        fh.write(f"# R0_emp = 2 x max pilot limsup of E = {_fmt(res.R0_emp)} "
                 "(empirical stand-in for the absorbing level)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "members", "t0_emp", "permanent", "max_E_after_entry"])
        for r in res.rows:
            w.writerow([_fmt(r.R), r.members, _fmt(r.t0_emp), _fmt(r.permanent),
                        _fmt(r.max_after_entry)])
    return run.finish(EXIT_OK, {"R0_emp": res.R0_emp, "finite": res.finite,
                                "non_decreasing": res.non_decreasing,
                                "permanent": res.permanent})


def _attract_initials(cfg: ExperimentConfig, p: ModelParams):
    if cfg.seeds:
        return [BeamState.from_arrays(cfg._vec({1: e}), np.zeros(cfg.modes),
                                      np.zeros(cfg.modes), p.basis) for e in cfg.seeds]
    return [z for z in draw_ensemble(cfg.ensemble_size, cfg.seed, p, cfg.ensemble_energy)
            if z is not None]


def cmd_attract(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("attract", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    try:
        res = attract_report(p, icfg, cfg.t_end, _attract_initials(cfg, p), cfg.threads)
    except IntegrationError as exc:
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    _write_csv(run.path("attract.csv"),
               ["member", "init_sign_u1", "final_distance", "nearest_branch", "nearest_s",
                "L0_violations", "L0_max_increment"],
               [(m.index, m.init_sign, m.final_distance, m.branch, res.points[m.nearest].s,
                 m.violations, m.max_increment) for m in res.members])
    basin = {f"{k[0]}->{k[1]}": v for k, v in sorted(res.basin_table().items())}
    return run.finish(EXIT_OK, {"basins": basin, "all_converged": all(
        m.final_distance < cfg.attract_tol for m in res.members)})


def cmd_gamma_sweep(cfg: ExperimentConfig, out: str) -> int:
    run = _Run("gamma-sweep", cfg, out)
    p, icfg = cfg.params(), cfg.integrator()
    try:
        res = gamma_sweep(p, icfg, cfg.initial_state(), cfg.gammas, cfg.t_end,
                          cfg.compare_time, cfg.threads)
    except IntegrationError as exc:
        return run.finish(EXIT_BLOWUP, {"error": str(exc)})
    _write_csv(run.path("gamma_sweep.csv"),
               ["gamma", "decay_rate", "distance_to_gamma0", "limit_point"],
               zip(res.gammas, res.rates, res.tail_distances, res.limit_points))
    return run.finish(EXIT_OK, {"rate_spread": res.rate_spread,
                                "distances_monotone": res.distances_monotone,
                                "stationary_identical": res.stationary_identical})
