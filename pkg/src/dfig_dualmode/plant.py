"""Per-unit DFIG wind turbine model.

State vector is ``[phi_ds, phi_qs, phi_dr, phi_qr, omega_r]``; controls are
the rotor voltages ``(v_dr, v_qr)`` and the pitch angle ``beta`` in degrees.
Positive power flows into the grid, positive torque means generating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "NOMINAL_CP_COEFFS",
    "MachineParams",
    "DriveTrainParams",
    "AeroParams",
    "PlantParams",
    "Currents",
    "Powers",
    "state_matrix",
    "current_matrix",
    "torque_matrix",
    "currents_from_fluxes",
    "fluxes_from_currents",
    "electrical_derivatives",
    "electrical_derivatives_scalar",
    "powers",
    "electromagnetic_torque",
    "electromagnetic_torque_quadratic",
    "performance_coefficient",
    "tip_speed_ratio",
    "mechanical_power_pu",
    "mechanical_torque",
    "plant_derivatives",
]

NOMINAL_CP_COEFFS = (0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068)


class DomainError(ValueError):
    """An argument lies outside the domain where the model is defined."""


@dataclass(frozen=True)
class MachineParams:
    r_s: float = 0.00706
    r_r: float = 0.005
    l_s: float = 3.071
    l_r: float = 3.056
    l_m: float = 2.9
    omega_s: float = 1.0
    v_ds: float = 1.0
    v_qs: float = 0.0

    def __post_init__(self):
        vals = (self.r_s, self.r_r, self.l_s, self.l_r, self.l_m, self.omega_s, self.v_ds, self.v_qs)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("machine parameters must be finite")
        if not (self.r_s > 0 and self.r_r > 0 and self.omega_s > 0):
            raise ValueError("r_s, r_r and omega_s must be positive")
        if not (self.l_m > 0 and self.l_s > self.l_m and self.l_r > self.l_m):
            raise ValueError("inductances must satisfy l_s > l_m > 0 and l_r > l_m > 0")

    @property
    def sigma(self) -> float:
        """Leak coefficient ``1 - l_m**2 / (l_s * l_r)``."""
        return 1.0 - self.l_m**2 / (self.l_s * self.l_r)


@dataclass(frozen=True)
class DriveTrainParams:
    j: float = 10.08
    c_f: float = 0.01

    def __post_init__(self):
        if not (self.j > 0 and self.c_f >= 0):
            raise ValueError("drive train needs j > 0 and c_f >= 0")


@dataclass(frozen=True)
class AeroParams:
    cp_coeffs: tuple = NOMINAL_CP_COEFFS
    beta_min: float = 0.0
    beta_max: float = 30.0
    lambda_nom: float = 8.1
    cp_nom: float = 0.48
    p_wind_base: float = 1.5e6
    p_elec_base: float = 1.5e6 / 0.9
    p_nom: float = 0.73
    v_w_base: float = 12.0

    def __post_init__(self):
        object.__setattr__(self, "cp_coeffs", tuple(float(c) for c in self.cp_coeffs))
        if len(self.cp_coeffs) != 6:
            raise ValueError("cp_coeffs needs exactly six coefficients")
        if not self.beta_min < self.beta_max:
            raise ValueError("beta_min must be below beta_max")
        if not (self.cp_nom > 0 and self.lambda_nom > 0):
            raise ValueError("cp_nom and lambda_nom must be positive")
        if not (self.p_wind_base > 0 and self.p_elec_base > 0 and self.p_nom > 0 and self.v_w_base > 0):
            raise ValueError("base quantities must be positive")

    @property
    def power_constant(self) -> float:
        """Per-unit mechanical power at ``Cp = cp_nom`` and rated wind (0.657)."""
        return self.p_wind_base * self.p_nom / self.p_elec_base


@dataclass(frozen=True)
class PlantParams:
    """Everything the turbine model needs, as one bundle."""

    machine: MachineParams = field(default_factory=MachineParams)
    drive: DriveTrainParams = field(default_factory=DriveTrainParams)
    aero: AeroParams = field(default_factory=AeroParams)
    time_base_scale: float = 1.0

    def with_friction(self, c_f: float) -> "PlantParams":
        return replace(self, drive=replace(self.drive, c_f=c_f))

    def with_cp_coeffs(self, coeffs) -> "PlantParams":
        return replace(self, aero=replace(self.aero, cp_coeffs=tuple(coeffs)))


class Currents(NamedTuple):
    i_ds: float
    i_qs: float
    i_dr: float
    i_qr: float


class Powers(NamedTuple):
    p_s: float
    q_s: float
    p_r: float
    q_r: float
    p: float
    q: float
    pf: float


def state_matrix(mp: MachineParams) -> np.ndarray:
    """Constant part ``A`` of the flux dynamics (rotor speed terms excluded)."""
    s = mp.sigma
    ws = mp.omega_s
    a11 = -mp.r_s / (s * mp.l_s)
    a13 = mp.r_s * mp.l_m / (s * mp.l_s * mp.l_r)
    a31 = mp.r_r * mp.l_m / (s * mp.l_s * mp.l_r)
    a33 = -mp.r_r / (s * mp.l_r)
    return np.array(
        [
            [a11, ws, a13, 0.0],
            [-ws, a11, 0.0, a13],
            [a31, 0.0, a33, ws],
            [0.0, a31, -ws, a33],
        ]
    )


def current_matrix(mp: MachineParams) -> np.ndarray:
    """Matrix mapping fluxes to currents (inverse inductance matrix)."""
    s = mp.sigma
    c = mp.l_m / (s * mp.l_s * mp.l_r)
    gs = 1.0 / (s * mp.l_s)
    gr = 1.0 / (s * mp.l_r)
    return np.array(
        [
            [gs, 0.0, -c, 0.0],
            [0.0, gs, 0.0, -c],
            [-c, 0.0, gr, 0.0],
            [0.0, -c, 0.0, gr],
        ]
    )


def torque_matrix(mp: MachineParams) -> np.ndarray:
    """``N`` such that the electromagnetic torque equals ``x @ N @ x``."""
    s = mp.sigma
    c = mp.l_m / (s * mp.l_s * mp.l_r)
    gs = 1.0 / (s * mp.l_s)
    return np.array(
        [
            [0.0, -gs, 0.0, c],
            [gs, 0.0, -c, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )


def currents_from_fluxes(x, mp: MachineParams) -> Currents:
    x1, x2, x3, x4 = (float(v) for v in x)
    s = mp.sigma
    c = mp.l_m / (s * mp.l_s * mp.l_r)
    gs = 1.0 / (s * mp.l_s)
    gr = 1.0 / (s * mp.l_r)
    return Currents(gs * x1 - c * x3, gs * x2 - c * x4, -c * x1 + gr * x3, -c * x2 + gr * x4)


def fluxes_from_currents(i, mp: MachineParams) -> np.ndarray:
    i_ds, i_qs, i_dr, i_qr = (float(v) for v in i)
    return np.array(
        [
            mp.l_s * i_ds + mp.l_m * i_dr,
            mp.l_s * i_qs + mp.l_m * i_qr,
            mp.l_m * i_ds + mp.l_r * i_dr,
            mp.l_m * i_qs + mp.l_r * i_qr,
        ]
    )


def electrical_derivatives(x, omega_r: float, v, mp: MachineParams) -> np.ndarray:
    """Flux derivatives in matrix form.

    ``v`` is the full voltage vector ``(v_ds, v_qs, v_dr, v_qr)``.
    """
    x = np.asarray(x, dtype=float)
    v_ds, v_qs, v_dr, v_qr = (float(e) for e in v)
    drive = np.array([v_ds, v_qs, v_dr - omega_r * x[3], v_qr + omega_r * x[2]])
    return state_matrix(mp) @ x + drive


def electrical_derivatives_scalar(x, omega_r: float, v, mp: MachineParams) -> np.ndarray:
    """Same as :func:`electrical_derivatives`, written out equation by equation."""
    x1, x2, x3, x4 = (float(e) for e in x)
    v_ds, v_qs, v_dr, v_qr = (float(e) for e in v)
    s = mp.sigma
    ls, lr, lm, ws = mp.l_s, mp.l_r, mp.l_m, mp.omega_s
    slip = ws - omega_r
    return np.array(
        [
            -mp.r_s / (s * ls) * x1 + ws * x2 + mp.r_s * lm / (s * ls * lr) * x3 + v_ds,
            -ws * x1 - mp.r_s / (s * ls) * x2 + mp.r_s * lm / (s * ls * lr) * x4 + v_qs,
            mp.r_r * lm / (s * ls * lr) * x1 - mp.r_r / (s * lr) * x3 + slip * x4 + v_dr,
            mp.r_r * lm / (s * ls * lr) * x2 - slip * x3 - mp.r_r / (s * lr) * x4 + v_qr,
        ]
    )


def powers(v, i) -> Powers:
    """Stator, rotor and total active/reactive powers plus power factor.

    ``pf`` is ``nan`` when both total powers vanish.
    """
    v_ds, v_qs, v_dr, v_qr = (float(e) for e in v)
    i_ds, i_qs, i_dr, i_qr = (float(e) for e in i)
    p_s = -v_ds * i_ds - v_qs * i_qs
    q_s = -v_qs * i_ds + v_ds * i_qs
    p_r = -v_dr * i_dr - v_qr * i_qr
    q_r = -v_qr * i_dr + v_dr * i_qr
    p = p_s + p_r
    q = q_s + q_r
    mag = math.hypot(p, q)
    pf = p / mag if mag > 0 else math.nan
    return Powers(p_s, q_s, p_r, q_r, p, q, pf)


def electromagnetic_torque(x, mp: MachineParams) -> float:
    i = currents_from_fluxes(x, mp)
    return float(x[1]) * i.i_ds - float(x[0]) * i.i_qs


def electromagnetic_torque_quadratic(x, mp: MachineParams) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ torque_matrix(mp) @ x)


def performance_coefficient(lam, beta, coeffs=NOMINAL_CP_COEFFS, beta_bounds=None):
    """Aerodynamic power coefficient ``Cp(lambda, beta)``, ``beta`` in degrees.

    Works on scalars or broadcastable arrays. ``beta_bounds`` optionally
    enforces the mechanical pitch range.
    """
    c1, c2, c3, c4, c5, c6 = coeffs
    if (isinstance(lam, (float, int)) and isinstance(beta, (float, int))) or (np.ndim(lam) == 0 and np.ndim(beta) == 0):
        lam = float(lam)
        beta = float(beta)
        if not lam > 0:
            raise DomainError(f"tip-speed ratio must be positive, got {lam}")
        if beta_bounds is not None and not beta_bounds[0] <= beta <= beta_bounds[1]:
            raise DomainError(f"pitch {beta} outside {beta_bounds}")
        den = lam + 0.08 * beta
        if den == 0.0:
            raise DomainError("lambda + 0.08 beta vanishes")
        inv_li = 1.0 / den - 0.035 / (beta**3 + 1.0)
        return c1 * (c2 * inv_li - c3 * beta - c4) * math.exp(-c5 * inv_li) + c6 * lam

    lam = np.asarray(lam, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("tip-speed ratio must be positive")
    if beta_bounds is not None and np.any((beta < beta_bounds[0]) | (beta > beta_bounds[1])):
        raise DomainError(f"pitch outside {beta_bounds}")
    den = lam + 0.08 * beta
    if np.any(den == 0.0):
        raise DomainError("lambda + 0.08 beta vanishes")
    inv_li = 1.0 / den - 0.035 / (beta**3 + 1.0)
    return c1 * (c2 * inv_li - c3 * beta - c4) * np.exp(-c5 * inv_li) + c6 * lam


def tip_speed_ratio(omega_r_pu: float, v_w_pu: float, ap: AeroParams) -> float:
    if not v_w_pu > 0:
        raise DomainError(f"wind speed must be positive, got {v_w_pu}")
    return ap.lambda_nom * omega_r_pu / v_w_pu


def mechanical_power_pu(cp: float, v_w_pu: float, ap: AeroParams) -> float:
    return ap.power_constant * (cp / ap.cp_nom) * v_w_pu**3


def mechanical_torque(omega_r: float, beta: float, v_w_pu: float, ap: AeroParams, eps: float = 1e-6) -> float:
    if not omega_r > eps:
        raise DomainError(f"rotor speed {omega_r} too close to zero")
    lam = tip_speed_ratio(omega_r, v_w_pu, ap)
    cp = performance_coefficient(lam, beta, ap.cp_coeffs)
    return mechanical_power_pu(cp, v_w_pu, ap) / omega_r


def plant_derivatives(state, v_dr: float, v_qr: float, beta: float, v_w: float, params: PlantParams) -> np.ndarray:
    """Time derivative of the full five-state model."""
    state = np.asarray(state, dtype=float)
    x = state[:4]
    omega_r = float(state[4])
    mp = params.machine
    dx = electrical_derivatives(x, omega_r, (mp.v_ds, mp.v_qs, v_dr, v_qr), mp) * params.time_base_scale
    t_m = mechanical_torque(omega_r, beta, v_w, params.aero)
    t_e = electromagnetic_torque(x, mp)
    dw = (t_m - t_e - params.drive.c_f * omega_r) / params.drive.j
    return np.append(dx, dw)
