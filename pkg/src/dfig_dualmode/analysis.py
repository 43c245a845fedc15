"""Offline analyses: parameter sweeps, tables and brute-force oracles."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .controller import (
    ControllerState,
    GradientGains,
    ObjectiveWeights,
    SynthesizedGains,
    closed_loop_matrix,
    critical_root,
    design_gain,
    f_composite,
    gradient_f,
    setpoint_derivatives,
    synthesize,
)
from .numerics import golden_section, inv4
from .plant import MachineParams, PlantParams, current_matrix, performance_coefficient

__all__ = [
    "random_machine",
    "random_stable_spectrum",
    "HessianCheck",
    "hessian_sweep",
    "critical_root_table",
    "cp_table",
    "cp_peak",
    "f_grid",
    "GridMinimum",
    "grid_argmin",
    "FlowResult",
    "gradient_flow",
]


def random_machine(rng: np.random.Generator, spread: float = 0.5, base: MachineParams | None = None) -> MachineParams:
    """Scale resistances and inductances by factors in ``1 +- spread``, keeping ``l_s, l_r > l_m``."""
    base = base or MachineParams()
    while True:
        f = rng.uniform(1.0 - spread, 1.0 + spread, 5)
        l_s, l_r, l_m = base.l_s * f[2], base.l_r * f[3], base.l_m * f[4]
        if l_s > l_m and l_r > l_m:
            return replace(base, r_s=base.r_s * f[0], r_r=base.r_r * f[1], l_s=l_s, l_r=l_r, l_m=l_m)


def random_stable_spectrum(rng: np.random.Generator, max_rate: float = 40.0) -> tuple:
    """Four conjugate-closed poles in the open left half-plane."""
    n_pairs = int(rng.integers(0, 3))
    poles = []
    for _ in range(n_pairs):
        re, im = -rng.uniform(0.5, max_rate), rng.uniform(0.1, 20.0)
        poles += [complex(re, im), complex(re, -im)]
    poles += [complex(-rng.uniform(0.5, max_rate)) for _ in range(4 - len(poles))]
    return tuple(poles)


class HessianCheck(NamedTuple):
    machine: MachineParams
    poles: tuple
    q1: float
    det: float

    @property
    def positive_definite(self) -> bool:
        return self.q1 > 0 and self.det > 0


def hessian_sweep(trials: int, seed: int = 0, spread: float = 0.5) -> list[HessianCheck]:
    """Leading minors of the torque Hessian for random machines and stabilizing gains.

    Unlike :func:`synthesize`, this never raises on an indefinite Hessian;
    it reports the minors so failures can be counted.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        mp = random_machine(rng, spread)
        poles = random_stable_spectrum(rng)
        k = design_gain(mp, poles, method="direct")
        d = inv4(closed_loop_matrix(mp, k))
        c = mp.l_m / (mp.sigma * mp.l_s * mp.l_r)
        q1 = c * (d[0, 2] * d[3, 2] - d[1, 2] * d[2, 2])
        q2 = 0.5 * c * (d[0, 2] * d[3, 3] + d[0, 3] * d[3, 2] - d[1, 2] * d[2, 3] - d[1, 3] * d[2, 2])
        q3 = c * (d[0, 3] * d[3, 3] - d[1, 3] * d[2, 3])
        out.append(HessianCheck(mp, poles, float(q1), float(q1 * q3 - q2 * q2)))
    return out


def critical_root_table(betas, v_ws, g: SynthesizedGains | None = None, belief: PlantParams | None = None) -> np.ndarray:
    """Rows ``(beta, v_w, omega_r1)`` over the Cartesian grid."""
    belief = belief or PlantParams()
    g = g or synthesize(belief.machine)
    return np.array([(b, v, critical_root(b, v, g, belief)) for b in betas for v in v_ws])


def cp_table(lams, betas, coeffs) -> np.ndarray:
    """Rows ``(lambda, beta, cp)`` over the Cartesian grid."""
    lam, beta = np.meshgrid(np.asarray(lams, float), np.asarray(betas, float), indexing="ij")
    cp = performance_coefficient(lam, beta, coeffs)
    return np.column_stack([lam.ravel(), beta.ravel(), cp.ravel()])


def cp_peak(coeffs, beta: float = 0.0, lam_range=(2.0, 15.0), n_grid: int = 1301) -> tuple[float, float]:
    """``(lambda*, Cp(lambda*))`` maximizing Cp at fixed pitch (grid, then golden section)."""
    lams = np.linspace(*lam_range, n_grid)
    cps = performance_coefficient(lams, beta, coeffs)
    k = int(np.argmax(cps))
    step = lams[1] - lams[0]
    lo, hi = max(lams[k] - step, lam_range[0]), min(lams[k] + step, lam_range[1])
    lam = golden_section(lambda x: -performance_coefficient(x, beta, coeffs), lo, hi, 1e-10)
    return lam, float(performance_coefficient(lam, beta, coeffs))


def f_grid(omega, theta, beta, v_w, p_d, q_d, g: SynthesizedGains, belief: PlantParams, w: ObjectiveWeights) -> np.ndarray:
    """Vectorized tracking error over broadcastable ``(omega_rd, theta, beta)`` arrays.

    Built directly from the flux equilibrium and the power formulas, without
    going through the scalar controller code.
    """
    omega, theta, beta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (omega, theta, beta)))
    ap = belief.aero
    mp = g.machine
    lam = ap.lambda_nom * omega / v_w
    cp = performance_coefficient(lam, beta, ap.cp_coeffs)
    t_m = ap.power_constant * (cp / ap.cp_nom) * v_w**3 / omega
    r = np.sqrt(np.maximum(t_m - g.a_prime - belief.drive.c_f * omega, 0.0))
    z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    u = (z / np.sqrt(g.dd.diagonal())) @ g.m.T + g.u_vertex
    x = u @ g.xu.T + g.x0
    kx = x @ g.k.T
    v_dr = omega * x[..., 3] - kx[..., 0] + u[..., 0]
    v_qr = -omega * x[..., 2] - kx[..., 1] + u[..., 1]
    i = x @ current_matrix(mp).T
    p = -mp.v_ds * i[..., 0] - mp.v_qs * i[..., 1] - v_dr * i[..., 2] - v_qr * i[..., 3]
    q = -mp.v_qs * i[..., 0] + mp.v_ds * i[..., 1] - v_qr * i[..., 2] + v_dr * i[..., 3]
    ep, eq = p - p_d, q - q_d
    return 0.5 * (w.w_p * ep * ep + 2.0 * w.w_pq * ep * eq + w.w_q * eq * eq)


class GridMinimum(NamedTuple):
    omega_rd: float
    theta: float
    beta: float
    f: float
    grid_f: float


def grid_argmin(
    v_w: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains | None = None,
    belief: PlantParams | None = None,
    w: ObjectiveWeights | None = None,
    *,
    omega_range=(0.3, 1.6),
    n_omega: int = 131,
    n_theta: int = 360,
    beta_step: float = 0.5,
    beta_top: float = 15.0,
) -> GridMinimum:
    """Brute-force minimizer of ``f`` on a grid, polished by Nelder-Mead."""
    belief = belief or PlantParams()
    g = g or synthesize(belief.machine)
    w = w or ObjectiveWeights()
    om = np.linspace(*omega_range, n_omega)
    th = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)
    be = np.arange(belief.aero.beta_min, min(beta_top, belief.aero.beta_max) + 1e-9, beta_step)
    vals = f_grid(om[:, None, None], th[None, :, None], be[None, None, :], v_w, p_d, q_d, g, belief, w)
    i, j, k = np.unravel_index(int(np.argmin(vals)), vals.shape)
    start = np.array([om[i], th[j], be[k]])

    def obj(y):
        return f_composite(y, v_w, p_d, q_d, g, belief, w)

    bounds = [(om[0], om[-1]), (th[j] - math.pi, th[j] + math.pi), (belief.aero.beta_min, belief.aero.beta_max)]
    res = minimize(obj, start, method="Nelder-Mead", bounds=bounds, options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 20000})
    best = res.x if res.fun <= vals[i, j, k] else start
    return GridMinimum(float(best[0]), float(best[1] % (2.0 * math.pi)), float(best[2]), float(obj(best)), float(vals[i, j, k]))


class FlowResult(NamedTuple):
    state: np.ndarray
    f: float
    t: float
    rate_norm: float


def gradient_flow(
    start,
    v_w: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains | None = None,
    belief: PlantParams | None = None,
    w: ObjectiveWeights | None = None,
    gg: GradientGains | None = None,
    *,
    dt: float = 0.5,
    t_max: float = 5000.0,
    rate_tol: float = 1e-8,
) -> FlowResult:
    """Integrate the projected setpoint flow alone (speed loop assumed settled).

    Stops when the setpoint rates fall below ``rate_tol`` or at ``t_max``.
    """
    belief = belief or PlantParams()
    g = g or synthesize(belief.machine)
    w = w or ObjectiveWeights()
    gg = gg or GradientGains()
    bounds = (belief.aero.beta_min, belief.aero.beta_max)
    y = np.asarray(start.as_array() if isinstance(start, ControllerState) else start, dtype=float).copy()

    def rate(v):
        return setpoint_derivatives(v, gradient_f(v, v_w, p_d, q_d, g, belief, w), gg, bounds)

    t = 0.0
    norm = math.inf
    while t < t_max:
        k1 = rate(y)
        norm = float(np.linalg.norm(k1))
        if norm < rate_tol:
            break
        k2 = rate(y + 0.5 * dt * k1)
        k3 = rate(y + 0.5 * dt * k2)
        k4 = rate(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[2] = min(max(y[2], bounds[0]), bounds[1])
        t += dt
    y[1] %= 2.0 * math.pi
    return FlowResult(y, f_composite(y, v_w, p_d, q_d, g, belief, w), t, norm)

