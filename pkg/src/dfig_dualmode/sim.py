"""Closed-loop simulation of the turbine under the dual-mode controller.

The plant (truth parameters) and the controller states are integrated
together with fixed-step RK4. The controller's algebraic outputs (rotor
voltages and setpoint rates) are recomputed every ``update_period`` seconds
and held in between.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .controller import (
    DEFAULT_POLES,
    ControllerState,
    GradientGains,
    ObjectiveWeights,
    SynthesizedGains,
    best_theta,
    controller_output,
    objective_V,
    synthesize,
)
from .plant import (
    PlantParams,
    current_matrix,
    fluxes_from_currents,
    performance_coefficient,
    powers,
    tip_speed_ratio,
)

__all__ = [
    "SimulationAbort",
    "StepSchedule",
    "Synthetic",
    "Samples",
    "DemandSchedule",
    "NoiseSpec",
    "ScenarioSpec",
    "TimeSeries",
    "COLUMNS",
    "wind_at",
    "measure_wind",
    "load_wind_csv",
    "default_initial_state",
    "run_closed_loop",
    "WindowStats",
    "metrics",
    "settling_time",
    "mw_to_pu",
]


class SimulationAbort(RuntimeError):
    """Integration blew up; carries the time and state where it happened."""

    def __init__(self, t: float, state, reason: str):
        self.t = float(t)
        self.state = np.array(state, dtype=float, copy=True)
        self.reason = reason
        super().__init__(f"{reason} at t={self.t:.4f} s, state={np.array2string(self.state, precision=6)}")


def mw_to_pu(p_mw: float, p_elec_base: float = 1.5e6 / 0.9) -> float:
    return p_mw * 1e6 / p_elec_base


# ---------------------------------------------------------------- wind input


def _check_increasing(times: Sequence[float], what: str) -> None:
    if len(times) == 0:
        raise ValueError(f"{what} needs at least one entry")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"{what} times must be strictly increasing")


@dataclass(frozen=True)
class StepSchedule:
    steps: tuple  # ((t_start, v_w), ...)

    def __post_init__(self):
        steps = tuple((float(t), float(v)) for t, v in self.steps)
        object.__setattr__(self, "steps", steps)
        _check_increasing([t for t, _ in steps], "wind schedule")
        if any(v <= 0 for _, v in steps):
            raise ValueError("wind speed must be positive")


@dataclass(frozen=True)
class Synthetic:
    """Mean plus sinusoids plus seeded band-limited noise, clamped to a band."""

    mean: float = 1.0
    sinusoids: tuple = ()  # ((amplitude, omega rad/s, phase rad), ...)
    noise_std: float = 0.0
    noise_band: tuple = (0.005, 0.05)  # rad/s
    noise_terms: int = 24
    v_min: float = 1e-3
    v_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "sinusoids", tuple(tuple(float(e) for e in s) for s in self.sinusoids))
        object.__setattr__(self, "noise_band", tuple(float(e) for e in self.noise_band))
        if not (0 < self.v_min < self.v_max):
            raise ValueError("need 0 < v_min < v_max")


@dataclass(frozen=True)
class Samples:
    """Tabulated wind; ``interp`` is ``"hold"`` or ``"linear"``."""

    times: tuple
    values: tuple
    interp: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        _check_increasing(self.times, "wind samples")
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if any(v <= 0 for v in self.values):
            raise ValueError("wind speed must be positive")
        if self.interp not in ("hold", "linear"):
            raise ValueError("interp must be 'hold' or 'linear'")


def _noise_components(profile: Synthetic, seed: int):
    rng = np.random.default_rng(seed)
    lo, hi = profile.noise_band
    n = profile.noise_terms
    freqs = rng.uniform(lo, hi, n)
    phases = rng.uniform(0.0, 2.0 * np.pi, n)
    amps = np.full(n, profile.noise_std * math.sqrt(2.0 / n))
    return amps, freqs, phases


class _WindFunction:
    """Fast scalar evaluator for a wind profile."""

    def __init__(self, profile, seed: int = 0):
        self.profile = profile
        if isinstance(profile, StepSchedule):
            self._t = [t for t, _ in profile.steps]
            self._v = [v for _, v in profile.steps]
        elif isinstance(profile, Samples):
            self._t = list(profile.times)
            self._v = list(profile.values)
        elif isinstance(profile, Synthetic):
            self._terms = [tuple(s) for s in profile.sinusoids]
            if profile.noise_std > 0:
                amps, freqs, phases = _noise_components(profile, seed)
                self._terms += list(zip(amps.tolist(), freqs.tolist(), phases.tolist()))
        else:
            raise TypeError(f"unknown wind profile {profile!r}")

    def __call__(self, t: float) -> float:
        p = self.profile
        if isinstance(p, Synthetic):
            v = p.mean
            for a, w, ph in self._terms:
                v += a * math.sin(w * t + ph)
            return min(max(v, p.v_min), p.v_max)
        if t < self._t[0]:
            raise ValueError(f"t={t} precedes the first wind sample")
        k = bisect.bisect_right(self._t, t) - 1
        if isinstance(p, Samples) and p.interp == "linear" and k + 1 < len(self._t):
            t0, t1 = self._t[k], self._t[k + 1]
            return self._v[k] + (self._v[k + 1] - self._v[k]) * (t - t0) / (t1 - t0)
        return self._v[k]


def wind_at(profile, t: float, seed: int = 0) -> float:
    """Wind speed (pu) of ``profile`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _WindFunction(profile, seed)(t)


def load_wind_csv(path, *, in_mps: bool = False, v_w_base: float = 12.0, interp: str = "linear") -> Samples:
    """Read a ``t,v_w`` CSV into a :class:`Samples` profile."""
    import csv

    times, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["t", "v_w"]:
            raise ValueError(f"{path}: expected header 't,v_w'")
        for row in reader:
            times.append(float(row["t"]))
            v = float(row["v_w"])
            values.append(v / v_w_base if in_mps else v)
    return Samples(tuple(times), tuple(values), interp)


# -------------------------------------------------------- demand and noise


@dataclass(frozen=True)
class DemandSchedule:
    steps: tuple  # ((t_start, p_d, q_d), ...)

    def __post_init__(self):
        steps = tuple((float(t), float(p), float(q)) for t, p, q in self.steps)
        object.__setattr__(self, "steps", steps)
        _check_increasing([s[0] for s in steps], "demand schedule")

    @classmethod
    def from_power_factor(cls, steps, pf: float) -> "DemandSchedule":
        """Build from ``(t_start, p_d)`` pairs and a lagging/leading-neutral power factor."""
        if not 0 < pf <= 1:
            raise ValueError("power factor must lie in (0, 1]")
        ratio = math.tan(math.acos(pf))
        return cls(tuple((t, p, p * ratio) for t, p in steps))

    def at(self, t: float) -> tuple[float, float]:
        times = [s[0] for s in self.steps]
        if t < times[0]:
            raise ValueError(f"t={t} precedes the first demand step")
        _, p, q = self.steps[bisect.bisect_right(times, t) - 1]
        return p, q

    def boundaries(self) -> list[float]:
        return [s[0] for s in self.steps]


@dataclass(frozen=True)
class NoiseSpec:
    """Additive anemometer error ``bias + sum(a * sin|cos(w t + phase))`` in pu."""

    bias: float = 0.0
    sinusoids: tuple = ()  # ((amplitude, omega, phase, "sin"|"cos"), ...)

    def __post_init__(self):
        terms = tuple((float(a), float(w), float(ph), str(kind)) for a, w, ph, kind in self.sinusoids)
        if any(kind not in ("sin", "cos") for *_, kind in terms):
            raise ValueError("noise term kind must be 'sin' or 'cos'")
        object.__setattr__(self, "sinusoids", terms)

    @classmethod
    def scaled(cls, scale: float, bias: float, sinusoids) -> "NoiseSpec":
        """Noise given in other units (e.g. m/s), divided by ``scale``."""
        return cls(bias / scale, tuple((a / scale, w, ph, k) for a, w, ph, k in sinusoids))


def measure_wind(v_w_true: float, t: float, n: NoiseSpec) -> float:
    v = v_w_true + n.bias
    for a, w, ph, kind in n.sinusoids:
        v += a * (math.sin(w * t + ph) if kind == "sin" else math.cos(w * t + ph))
    return v


# -------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    duration: float
    wind: object
    demand: DemandSchedule
    dt: float = 2e-3
    update_period: float = 2e-2
    record_period: float = 0.1
    plant: PlantParams = field(default_factory=PlantParams)
    belief: PlantParams = field(default_factory=PlantParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    gradient_gains: GradientGains = field(default_factory=GradientGains)
    poles: tuple = DEFAULT_POLES
    gain: object = None  # explicit 2x4 gain overrides ``poles``
    initial_plant: object = None  # 5 states; default: flux equilibrium at u=0
    initial_omega_r: float = 0.8
    initial_controller: object = None  # ControllerState; default (omega_r0, best theta, beta_min)
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.duration > 0):
            raise ValueError("dt and duration must be positive")
        ratio = self.update_period / self.dt
        if self.update_period < self.dt or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("update_period must be an integer multiple of dt")
        rec = self.record_period / self.update_period
        if self.record_period < self.update_period or abs(rec - round(rec)) > 1e-9 * rec:
            raise ValueError("record_period must be an integer multiple of update_period")

    def scaled(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)


COLUMNS = (
    "t",
    "v_w_true",
    "v_w_meas",
    "p_d",
    "q_d",
    "p",
    "q",
    "pf",
    "cp",
    "lambda",
    "omega_r",
    "omega_rd",
    "beta",
    "theta",
    "r2",
    "v_dr",
    "v_qr",
    "u1",
    "u2",
    "V",
)


class TimeSeries:
    """Uniformly sampled simulation record; columns in :data:`COLUMNS` order."""

    def __init__(self, data: np.ndarray, name: str = ""):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(COLUMNS):
            raise ValueError(f"expected an (n, {len(COLUMNS)}) array")
        self.data = data
        self.name = name
        self.final_state: np.ndarray | None = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, column: str) -> np.ndarray:
        return self.data[:, COLUMNS.index(column)]

    def window(self, t0: float, t1: float) -> "TimeSeries":
        t = self["t"]
        return TimeSeries(self.data[(t >= t0) & (t <= t1)], self.name)

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeSeries) and np.array_equal(self.data, other.data)


def default_initial_state(g: SynthesizedGains, omega_r: float) -> np.ndarray:
    return np.append(g.x0, omega_r)


def run_closed_loop(spec: ScenarioSpec, gains: SynthesizedGains | None = None) -> TimeSeries:
    """Integrate plant plus controller for ``spec.duration`` seconds."""
    belief = spec.belief
    truth = spec.plant
    g = gains if gains is not None else synthesize(belief.machine, spec.gain, spec.poles)
    gg = spec.gradient_gains
    w = spec.weights
    bmin, bmax = belief.aero.beta_min, belief.aero.beta_max

    wind = _WindFunction(spec.wind, spec.seed)
    y = np.empty(8)
    y[:5] = spec.initial_plant if spec.initial_plant is not None else default_initial_state(g, spec.initial_omega_r)
    cs0 = spec.initial_controller
    if cs0 is None:
        v0 = measure_wind(wind(0.0), 0.0, spec.noise)
        p_d0, q_d0 = spec.demand.at(0.0)
        th0 = best_theta(float(y[4]), bmin, v0, p_d0, q_d0, g, belief, w)
        cs0 = ControllerState(float(y[4]), th0, bmin)
    y[5:] = cs0.as_array()

    # truth constants for the scalar derivative kernel
    tm = truth.machine
    s = tm.sigma
    a11 = -tm.r_s / (s * tm.l_s)
    a13 = tm.r_s * tm.l_m / (s * tm.l_s * tm.l_r)
    a31 = tm.r_r * tm.l_m / (s * tm.l_s * tm.l_r)
    a33 = -tm.r_r / (s * tm.l_r)
    ws = tm.omega_s
    vds, vqs = tm.v_ds, tm.v_qs
    gs = 1.0 / (s * tm.l_s)
    cm = tm.l_m / (s * tm.l_s * tm.l_r)
    tbs = truth.time_base_scale
    j, c_f = truth.drive.j, truth.drive.c_f
    ta = truth.aero
    coeffs = ta.cp_coeffs
    c1, c2, c3, c4, c5, c6 = coeffs
    lam_scale = ta.lambda_nom
    pconst = ta.power_constant / ta.cp_nom
    cmat_truth = current_matrix(tm)

    def deriv(t, x1, x2, x3, x4, wr, beta, v_dr, v_qr):
        # plain floats: this runs four times per plant step
        vw = wind(t)
        slip = ws - wr
        d1 = a11 * x1 + ws * x2 + a13 * x3 + vds
        d2 = -ws * x1 + a11 * x2 + a13 * x4 + vqs
        d3 = a31 * x1 + a33 * x3 + slip * x4 + v_dr
        d4 = a31 * x2 - slip * x3 + a33 * x4 + v_qr
        if not wr > 1e-6:
            raise SimulationAbort(t, [x1, x2, x3, x4, wr], "rotor speed left the positive half-line")
        lam = lam_scale * wr / vw
        inv_li = 1.0 / (lam + 0.08 * beta) - 0.035 / (beta**3 + 1.0)
        cp = c1 * (c2 * inv_li - c3 * beta - c4) * math.exp(-c5 * inv_li) + c6 * lam
        t_m = pconst * cp * vw**3 / wr
        t_e = x2 * (gs * x1 - cm * x3) - x1 * (gs * x2 - cm * x4)
        return d1 * tbs, d2 * tbs, d3 * tbs, d4 * tbs, (t_m - t_e - c_f * wr) / j

    dt = spec.dt
    hold = int(round(spec.update_period / dt))
    rec_every = int(round(spec.record_period / spec.update_period))
    n_ticks = int(round(spec.duration / spec.update_period))
    cmat_belief = current_matrix(belief.machine)
    rows = []
    two_pi = 2.0 * math.pi

    for tick in range(n_ticks + 1):
        t = tick * spec.update_period
        if not np.all(np.isfinite(y)):
            raise SimulationAbort(t, y, "non-finite state")
        vw_true = wind(t)
        vw_meas = measure_wind(vw_true, t, spec.noise)
        p_d, q_d = spec.demand.at(t)
        # measured currents -> fluxes through the controller's own model
        i_meas = cmat_truth @ y[:4]
        x_meas = fluxes_from_currents(i_meas, belief.machine)
        if not vw_meas > 0:
            raise SimulationAbort(t, y, "measured wind speed is not positive")
        try:
            out = controller_output(y[5:], float(y[4]), x_meas, vw_meas, p_d, q_d, g, gg, belief, w)
        except (ValueError, ArithmeticError) as exc:
            raise SimulationAbort(t, y, f"controller failed: {exc}") from exc

        if tick % rec_every == 0:
            pw = powers((vds, vqs, out.v_dr, out.v_qr), i_meas)
            lam = tip_speed_ratio(y[4], vw_true, ta)
            cp = performance_coefficient(lam, y[7], coeffs)
            rows.append(
                (
                    t,
                    vw_true,
                    vw_meas,
                    p_d,
                    q_d,
                    pw.p,
                    pw.q,
                    pw.pf,
                    cp,
                    lam,
                    y[4],
                    y[5],
                    y[7],
                    y[6],
                    out.r2,
                    out.v_dr,
                    out.v_qr,
                    out.u1,
                    out.u2,
                    objective_V(pw.p, pw.q, p_d, q_d, w),
                )
            )
        if tick == n_ticks:
            break

        # setpoint rates are held, so (omega_rd, theta, beta) move linearly;
        # only the five plant states need RK4
        r_w, r_th, r_b = (float(v) for v in out.setpoint_rates)
        b0 = float(y[7])
        x1, x2, x3, x4, wr = (float(v) for v in y[:5])
        v_dr, v_qr = out.v_dr, out.v_qr
        h2 = 0.5 * dt
        h6 = dt / 6.0
        try:
            for k in range(hold):
                tk = t + k * dt
                ba = min(max(b0 + r_b * k * dt, bmin), bmax)
                bm = min(max(b0 + r_b * (k + 0.5) * dt, bmin), bmax)
                bb = min(max(b0 + r_b * (k + 1) * dt, bmin), bmax)
                k1 = deriv(tk, x1, x2, x3, x4, wr, ba, v_dr, v_qr)
                k2 = deriv(tk + h2, x1 + h2 * k1[0], x2 + h2 * k1[1], x3 + h2 * k1[2], x4 + h2 * k1[3], wr + h2 * k1[4], bm, v_dr, v_qr)
                k3 = deriv(tk + h2, x1 + h2 * k2[0], x2 + h2 * k2[1], x3 + h2 * k2[2], x4 + h2 * k2[3], wr + h2 * k2[4], bm, v_dr, v_qr)
                k4 = deriv(tk + dt, x1 + dt * k3[0], x2 + dt * k3[1], x3 + dt * k3[2], x4 + dt * k3[3], wr + dt * k3[4], bb, v_dr, v_qr)
                x1 += h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                x2 += h6 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
                x3 += h6 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
                x4 += h6 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
                wr += h6 * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
                if not (math.isfinite(x1 + x2 + x3 + x4 + wr)):
                    raise SimulationAbort(tk + dt, [x1, x2, x3, x4, wr], "non-finite state")
                if wr <= 0:
                    raise SimulationAbort(tk + dt, [x1, x2, x3, x4, wr], "rotor speed left the positive half-line")
        except SimulationAbort:
            raise
        except (ValueError, ArithmeticError) as exc:
            raise SimulationAbort(t, y, f"plant evaluation failed: {exc}") from exc
        span = hold * dt
        y = np.array(
            [
                x1,
                x2,
                x3,
                x4,
                wr,
                y[5] + r_w * span,
                (y[6] + r_th * span) % two_pi,
                min(max(b0 + r_b * span, bmin), bmax),
            ]
        )

    ts = TimeSeries(np.array(rows), spec.name)
    ts.final_state = y.copy()
    return ts


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class WindowStats:
    t0: float
    t1: float
    cp_mean: float
    cp_maxdev: float
    pf_mean: float
    pf_maxdev: float
    p_err_mean: float
    p_err_max: float
    p_rel_err_mean: float
    speed_err_mean: float
    speed_err_max: float
    beta_mean: float
    beta_max: float


def metrics(ts: TimeSeries, windows) -> list[WindowStats]:
    """Steady-state statistics of ``ts`` over each ``(t0, t1)`` window."""
    out = []
    for t0, t1 in windows:
        wts = ts.window(t0, t1)
        if len(wts) == 0:
            raise ValueError(f"window ({t0}, {t1}) holds no samples")
        cp = wts["cp"]
        pf = wts["pf"]
        perr = np.abs(wts["p"] - wts["p_d"])
        serr = np.abs(wts["omega_r"] - wts["omega_rd"])
        out.append(
            WindowStats(
                t0,
                t1,
                float(cp.mean()),
                float(np.max(np.abs(cp - cp.mean()))),
                float(pf.mean()),
                float(np.max(np.abs(pf - pf.mean()))),
                float(perr.mean()),
                float(perr.max()),
                float(np.mean(perr / np.abs(wts["p_d"]))),
                float(serr.mean()),
                float(serr.max()),
                float(wts["beta"].mean()),
                float(wts["beta"].max()),
            )
        )
    return out


def settling_time(ts: TimeSeries, column: str, target: float, band: float, t_from: float = 0.0) -> float:
    """First time after ``t_from`` from which ``column`` stays within ``target +- band``.

    Returns ``nan`` if the signal never settles.
    """
    w = ts.window(t_from, math.inf)
    inside = np.abs(w[column] - target) <= band
    if not inside[-1]:
        return math.nan
    outside = np.nonzero(~inside)[0]
    idx = 0 if outside.size == 0 else outside[-1] + 1
    return float(w["t"][idx])
