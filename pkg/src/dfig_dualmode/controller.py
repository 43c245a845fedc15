"""Three-stage nonlinear controller.

1. Feedback linearization of the rotor flux equations plus pole placement.
2. A clamped speed loop acting on the torque magnitude ``r**2``; the second
   polar coordinate ``theta`` leaves the torque untouched.
3. A slow gradient flow on ``(omega_rd, theta, beta)`` that minimizes the
   weighted power-tracking error ``V``.

The controller only ever sees *belief* parameters (a ``PlantParams``
bundle) which may differ from the simulated plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .numerics import eig4, eig_sym2, golden_section, inv4, place_poles
from .plant import (
    MachineParams,
    PlantParams,
    current_matrix,
    mechanical_torque,
    powers,
    state_matrix,
)

__all__ = [
    "DEFAULT_POLES",
    "REFERENCE_GAIN",
    "INPUT_MATRIX",
    "UnstableGainError",
    "SynthesizedGains",
    "ObjectiveWeights",
    "GradientGains",
    "ControllerState",
    "OperatingPoint",
    "ControllerOutput",
    "closed_loop_matrix",
    "design_gain",
    "synthesize",
    "determinant_terms",
    "feedback_linearize",
    "equilibrium_fluxes",
    "torque_from_u",
    "u_from_polar",
    "polar_from_u",
    "speed_control_r2",
    "g_function",
    "critical_root",
    "reduced_speed_derivative",
    "operating_point",
    "objective_V",
    "f_composite",
    "gradient_f",
    "setpoint_derivatives",
    "best_theta",
    "controller_output",
]

DEFAULT_POLES = (-15.0, -5.0, -10.0 + 5.0j, -10.0 - 5.0j)

# Gain for DEFAULT_POLES with the default machine, as tabulated to 0.1.
REFERENCE_GAIN = np.array(
    [
        [5135.9, 259.2, 20.3, 1.9],
        [-2676.7, 4289.9, -1.3, 19.7],
    ]
)

INPUT_MATRIX = np.vstack([np.zeros((2, 2)), np.eye(2)])


class UnstableGainError(ValueError):
    """The feedback gain does not make the flux dynamics asymptotically stable."""


def closed_loop_matrix(mp: MachineParams, k) -> np.ndarray:
    return state_matrix(mp) - INPUT_MATRIX @ np.asarray(k, dtype=float)


def design_gain(mp: MachineParams, poles=DEFAULT_POLES, method: str = "auto") -> np.ndarray:
    """Place the flux-loop poles; returns the 2x4 gain."""
    return place_poles(state_matrix(mp), INPUT_MATRIX, poles, method=method)


@dataclass(frozen=True, eq=False)
class SynthesizedGains:
    """Constants derived once from the machine parameters and the gain ``k``.

    ``d`` is ``(A - B k)^-1``; the torque at the flux equilibrium equals
    ``u @ Q @ u + b @ u + a`` with ``Q = [[q1, q2], [q2, q3]]``, and
    ``m.T @ Q @ m == dd``.
    """

    machine: MachineParams
    k: np.ndarray
    d: np.ndarray
    q1: float
    q2: float
    q3: float
    b1: float
    b2: float
    a: float
    a_prime: float
    a_prime_composite: float
    m: np.ndarray
    dd: np.ndarray
    closed_loop_poles: np.ndarray
    # affine equilibrium map x = x0 + xu @ u
    x0: np.ndarray = field(repr=False)
    xu: np.ndarray = field(repr=False)

    @property
    def hessian(self) -> np.ndarray:
        return np.array([[self.q1, self.q2], [self.q2, self.q3]])

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b1, self.b2])

    @cached_property
    def u_vertex(self) -> np.ndarray:
        """Minimizer ``-Q^-1 b / 2`` of the torque quadratic."""
        return -0.5 * np.linalg.solve(self.hessian, self.b)

    @cached_property
    def _fast(self) -> tuple:
        # plain-float copies for the per-tick scalar paths
        scale = self.m / np.sqrt(np.diag(self.dd))
        return (
            tuple(scale.ravel().tolist()),
            tuple(self.u_vertex.tolist()),
            self.x0.tolist(),
            self.xu.tolist(),
            self.k.tolist(),
            current_matrix(self.machine).tolist(),
        )


def synthesize(mp: MachineParams, k=None, poles=DEFAULT_POLES) -> SynthesizedGains:
    """Derive all controller constants from ``mp`` and the gain ``k``.

    ``k`` defaults to a gain placed at ``poles``.
    """
    if k is None:
        k = design_gain(mp, poles)
    k = np.array(k, dtype=float)
    if k.shape != (2, 4):
        raise ValueError(f"gain must be 2x4, got {k.shape}")
    acl = closed_loop_matrix(mp, k)
    eigs = eig4(acl)
    if not np.all(eigs.real < 0):
        raise UnstableGainError(f"A - BK is not asymptotically stable: {eigs}")
    d = inv4(acl)

    c = mp.l_m / (mp.sigma * mp.l_s * mp.l_r)
    vds, vqs = mp.v_ds, mp.v_qs
    s1 = d[0, 0] * vds + d[0, 1] * vqs
    s2 = d[1, 0] * vds + d[1, 1] * vqs
    s3 = d[2, 0] * vds + d[2, 1] * vqs
    s4 = d[3, 0] * vds + d[3, 1] * vqs
    q1 = c * (d[0, 2] * d[3, 2] - d[1, 2] * d[2, 2])
    q2 = 0.5 * c * (d[0, 2] * d[3, 3] + d[0, 3] * d[3, 2] - d[1, 2] * d[2, 3] - d[1, 3] * d[2, 2])
    q3 = c * (d[0, 3] * d[3, 3] - d[1, 3] * d[2, 3])
    b1 = c * (s1 * d[3, 2] + d[0, 2] * s4 - s2 * d[2, 2] - d[1, 2] * s3)
    b2 = c * (s1 * d[3, 3] + d[0, 3] * s4 - s2 * d[2, 3] - d[1, 3] * s3)
    a = c * (s1 * s4 - s2 * s3)

    if not (q1 > 0 and q1 * q3 - q2 * q2 > 0):
        raise np.linalg.LinAlgError(f"torque Hessian is not positive definite: q=({q1}, {q2}, {q3})")
    hess = np.array([[q1, q2], [q2, q3]])
    bvec = np.array([b1, b2])
    a_prime_composite = a - 0.25 * bvec @ np.linalg.solve(hess, bvec)
    a_prime = -(vds**2 + vqs**2) / (4.0 * mp.omega_s * mp.r_s)
    m, dd = eig_sym2(q1, q2, q3)

    x0 = -d[:, :2] @ np.array([vds, vqs])
    xu = -d[:, 2:]
    return SynthesizedGains(
        machine=mp,
        k=k,
        d=d,
        q1=q1,
        q2=q2,
        q3=q3,
        b1=b1,
        b2=b2,
        a=a,
        a_prime=a_prime,
        a_prime_composite=float(a_prime_composite),
        m=m,
        dd=dd,
        closed_loop_poles=eigs,
        x0=x0,
        xu=xu,
    )


def determinant_terms(mp: MachineParams, k) -> tuple[float, float, float]:
    """Closed-form ``(Delta, Delta_1, Delta_2)`` built from the gain entries.

    With these, ``det(A - Bk) = Delta / (l_s l_r - l_m^2)^2``,
    ``q1 = r_s l_m^2 (Delta_1^2 + Delta_2^2) / Delta^2`` and
    ``q1 q3 - q2^2 = r_s^2 l_m^4 / Delta^2``.
    """
    k = np.asarray(k, dtype=float)
    rs, rr, ls, lr, lm = mp.r_s, mp.r_r, mp.l_s, mp.l_r, mp.l_m
    k11, k12, k13, k14 = k[0]
    k21, k22, k23, k24 = k[1]
    e = ls * lr - lm**2
    d1 = rs * lm * k21 + rs * lr * k23 + e * k24 + rr * ls + rs * lr
    d2 = rs * lm * k22 - e * k23 + rs * lr * k24 + rs * rr - e
    delta = (-rs * lm * k12 + e * k13 - rs * lr * k14 + rr * ls + rs * lr) * d1 + (
        rs * lm * k11 + rs * lr * k13 + e * k14 + rs * rr - e
    ) * d2
    return delta, d1, d2


def feedback_linearize(x, omega_r: float, u1: float, u2: float, g: SynthesizedGains) -> tuple[float, float]:
    """Rotor voltages that cancel the speed-dependent terms and add ``-k x``."""
    x = np.asarray(x, dtype=float)
    kx = g.k @ x
    v_dr = omega_r * x[3] - kx[0] + u1
    v_qr = -omega_r * x[2] - kx[1] + u2
    return float(v_dr), float(v_qr)


def equilibrium_fluxes(u1: float, u2: float, g: SynthesizedGains, mp: MachineParams | None = None) -> np.ndarray:
    """Quasi-static fluxes ``-(A - Bk)^-1 [v_ds, v_qs, u1, u2]``."""
    if mp is None or mp == g.machine:
        return g.x0 + g.xu @ np.array([u1, u2], dtype=float)
    return -g.d @ np.array([mp.v_ds, mp.v_qs, u1, u2], dtype=float)


def torque_from_u(u1: float, u2: float, g: SynthesizedGains) -> float:
    u = np.array([u1, u2], dtype=float)
    return float(u @ g.hessian @ u + g.b @ u + g.a)


def u_from_polar(r: float, theta: float, g: SynthesizedGains) -> tuple[float, float]:
    """Map polar torque coordinates back to ``(u1, u2)``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    (s11, s12, s21, s22), (v1, v2) = g._fast[0], g._fast[1]
    z1, z2 = r * math.cos(theta), r * math.sin(theta)
    return s11 * z1 + s12 * z2 + v1, s21 * z1 + s22 * z2 + v2


def polar_from_u(u1: float, u2: float, g: SynthesizedGains) -> tuple[float, float]:
    """Forward map ``(u1, u2) -> (r, theta)`` with ``theta`` in ``[0, 2 pi)``."""
    lam = np.diag(g.dd)
    mt = g.m.T
    z = np.sqrt(lam) * (mt @ np.array([u1, u2])) + 0.5 * (mt @ g.b) / np.sqrt(lam)
    r = float(math.hypot(z[0], z[1]))
    theta = math.atan2(z[1], z[0]) % (2.0 * math.pi)
    return r, theta


@dataclass(frozen=True)
class ObjectiveWeights:
    w_p: float = 10.0
    w_q: float = 1.0
    w_pq: float = 0.0

    def __post_init__(self):
        if not (self.w_p > 0 and self.w_p * self.w_q - self.w_pq**2 > 0):
            raise ValueError("objective weight matrix must be positive definite")


@dataclass(frozen=True)
class GradientGains:
    alpha: float = 10.0
    eps1: float = 4e-3
    eps2: float = 1e-4
    eps3: float = 2.0

    def __post_init__(self):
        if not all(v > 0 for v in (self.alpha, self.eps1, self.eps2, self.eps3)):
            raise ValueError("alpha and eps1..eps3 must be positive")


@dataclass(frozen=True)
class ControllerState:
    omega_rd: float
    theta: float
    beta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.omega_rd, self.theta, self.beta])


def g_function(omega_r: float, beta: float, v_w: float, g: SynthesizedGains, belief: PlantParams) -> float:
    """Speed-loop headroom ``T_m - a' - C_f omega_r``."""
    t_m = mechanical_torque(omega_r, beta, v_w, belief.aero)
    return t_m - g.a_prime - belief.drive.c_f * omega_r


def speed_control_r2(
    omega_r: float,
    omega_rd: float,
    beta: float,
    v_w: float,
    gg: GradientGains,
    g: SynthesizedGains,
    belief: PlantParams,
) -> float:
    """Clamped torque command ``r**2``."""
    return max(g_function(omega_r, beta, v_w, g, belief) + gg.alpha * (omega_r - omega_rd), 0.0)


def reduced_speed_derivative(
    omega_r: float,
    omega_rd: float,
    beta: float,
    v_w: float,
    gg: GradientGains,
    g: SynthesizedGains,
    belief: PlantParams,
) -> float:
    """Rotor acceleration of the first-order model with fluxes at equilibrium."""
    r2 = speed_control_r2(omega_r, omega_rd, beta, v_w, gg, g, belief)
    t_m = mechanical_torque(omega_r, beta, v_w, belief.aero)
    return (t_m - r2 - g.a_prime - belief.drive.c_f * omega_r) / belief.drive.j


def critical_root(
    beta: float,
    v_w: float,
    g: SynthesizedGains,
    belief: PlantParams,
    *,
    start: float = 1e-3,
    scan_max: float = 2.0**24,
    rtol: float = 1e-10,
) -> float:
    """First positive root of :func:`g_function` in the rotor speed.

    Scans ``start * 2**k`` for the first sign change, then bisects.
    """
    lo = start
    g_lo = g_function(lo, beta, v_w, g, belief)
    if not g_lo > 0:
        raise ArithmeticError(f"g is not positive at omega_r={lo}")
    hi = lo
    while True:
        hi = 2.0 * lo
        if hi > scan_max:
            raise ArithmeticError(f"no sign change of g below omega_r={scan_max}")
        g_hi = g_function(hi, beta, v_w, g, belief)
        if g_hi <= 0:
            break
        lo = hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        g_mid = g_function(mid, beta, v_w, g, belief)
        if g_mid > 0:
            lo = mid
        else:
            hi = mid
        if abs(g_mid) < 1e-12:
            return mid
    return 0.5 * (lo + hi)


class OperatingPoint(NamedTuple):
    u1: float
    u2: float
    x: np.ndarray
    v_dr: float
    v_qr: float
    p: float
    q: float


def operating_point(omega_r: float, r2: float, theta: float, g: SynthesizedGains) -> OperatingPoint:
    """Quasi-static electrical operating point for a torque command ``(r**2, theta)``."""
    mp = g.machine
    u1, u2 = u_from_polar(math.sqrt(r2), theta, g)
    _, _, x0, xu, k, c = g._fast
    x = [x0[n] + xu[n][0] * u1 + xu[n][1] * u2 for n in range(4)]
    kx0 = k[0][0] * x[0] + k[0][1] * x[1] + k[0][2] * x[2] + k[0][3] * x[3]
    kx1 = k[1][0] * x[0] + k[1][1] * x[1] + k[1][2] * x[2] + k[1][3] * x[3]
    v_dr = omega_r * x[3] - kx0 + u1
    v_qr = -omega_r * x[2] - kx1 + u2
    i = [c[n][0] * x[0] + c[n][1] * x[1] + c[n][2] * x[2] + c[n][3] * x[3] for n in range(4)]
    pw = powers((mp.v_ds, mp.v_qs, v_dr, v_qr), i)
    return OperatingPoint(u1, u2, np.array(x), v_dr, v_qr, pw.p, pw.q)


def objective_V(p: float, q: float, p_d: float, q_d: float, w: ObjectiveWeights) -> float:
    ep = p - p_d
    eq = q - q_d
    return 0.5 * (w.w_p * ep * ep + 2.0 * w.w_pq * ep * eq + w.w_q * eq * eq)


def f_composite(
    cs,
    v_w: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains,
    belief: PlantParams,
    w: ObjectiveWeights,
) -> float:
    """Tracking error ``V`` predicted for setpoints ``cs = (omega_rd, theta, beta)``.

    The rotor speed is assumed to have settled at ``omega_rd``, so the speed
    loop reduces to ``r**2 = max(g(omega_rd), 0)``.
    """
    omega_rd, theta, beta = (float(v) for v in (cs.as_array() if isinstance(cs, ControllerState) else cs))
    r2 = max(g_function(omega_rd, beta, v_w, g, belief), 0.0)
    op = operating_point(omega_rd, r2, theta, g)
    return objective_V(op.p, op.q, p_d, q_d, w)


def gradient_f(
    cs,
    v_w: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains,
    belief: PlantParams,
    w: ObjectiveWeights,
    *,
    rel_step: float = 1e-6,
) -> np.ndarray:
    """Finite-difference gradient of :func:`f_composite` in ``(omega_rd, theta, beta)``.

    Central differences with step ``max(rel_step, rel_step*|x_i|)``; one-sided
    in ``beta`` when the stencil would leave the pitch range.
    """
    x = np.array(cs.as_array() if isinstance(cs, ControllerState) else cs, dtype=float)
    lo = np.array([0.0, -np.inf, belief.aero.beta_min])
    hi = np.array([np.inf, np.inf, belief.aero.beta_max])

    def f(y):
        return f_composite(y, v_w, p_d, q_d, g, belief, w)

    grad = np.empty(3)
    f0 = None
    for i in range(3):
        h = max(rel_step, rel_step * abs(x[i]))
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        if dn[i] < lo[i]:
            f0 = f(x) if f0 is None else f0
            grad[i] = (f(up) - f0) / h
        elif up[i] > hi[i]:
            f0 = f(x) if f0 is None else f0
            grad[i] = (f0 - f(dn)) / h
        else:
            grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def setpoint_derivatives(cs, grad, gg: GradientGains, beta_bounds=(0.0, 30.0)) -> np.ndarray:
    """Projected gradient flow for ``(omega_rd, theta, beta)``."""
    beta = float(cs.beta if isinstance(cs, ControllerState) else cs[2])
    out = np.array([-gg.eps1 * grad[0], -gg.eps2 * grad[1], -gg.eps3 * grad[2]])
    if (beta <= beta_bounds[0] and out[2] < 0) or (beta >= beta_bounds[1] and out[2] > 0):
        out[2] = 0.0
    return out


def best_theta(
    omega_rd: float,
    beta: float,
    v_w: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains,
    belief: PlantParams,
    w: ObjectiveWeights,
    n_grid: int = 720,
) -> float:
    """Minimizer of ``f`` over ``theta`` at fixed speed and pitch (grid + golden section)."""
    grid = np.linspace(0.0, 2.0 * math.pi, n_grid, endpoint=False)

    def f(th):
        return f_composite((omega_rd, th, beta), v_w, p_d, q_d, g, belief, w)

    vals = [f(th) for th in grid]
    k = int(np.argmin(vals))
    step = grid[1] - grid[0]
    return golden_section(f, grid[k] - step, grid[k] + step) % (2.0 * math.pi)


class ControllerOutput(NamedTuple):
    v_dr: float
    v_qr: float
    beta: float
    r2: float
    u1: float
    u2: float
    setpoint_rates: np.ndarray
    objective: float


def controller_output(
    cs,
    omega_r: float,
    fluxes,
    v_w_meas: float,
    p_d: float,
    q_d: float,
    g: SynthesizedGains,
    gg: GradientGains,
    belief: PlantParams,
    w: ObjectiveWeights,
) -> ControllerOutput:
    """One evaluation of the full controller from measured signals."""
    x = np.asarray(fluxes, dtype=float)
    if not (np.all(np.isfinite(x)) and math.isfinite(omega_r) and math.isfinite(v_w_meas)):
        raise ValueError("non-finite measurement")
    c = cs.as_array() if isinstance(cs, ControllerState) else np.asarray(cs, dtype=float)
    omega_rd, theta, beta = (float(v) for v in c)
    r2 = speed_control_r2(omega_r, omega_rd, beta, v_w_meas, gg, g, belief)
    u1, u2 = u_from_polar(math.sqrt(r2), theta, g)
    v_dr, v_qr = feedback_linearize(x, omega_r, u1, u2, g)
    grad = gradient_f(c, v_w_meas, p_d, q_d, g, belief, w)
    rates = setpoint_derivatives(c, grad, gg, (belief.aero.beta_min, belief.aero.beta_max))
    obj = f_composite(c, v_w_meas, p_d, q_d, g, belief, w)
    return ControllerOutput(v_dr, v_qr, beta, r2, u1, u2, rates, obj)
