"""Built-in scenarios at desk scale (600 s) or full scale (3600 s).

All schedules are written for a 600 s horizon and stretched by
``scale = duration / 600`` when a longer horizon is requested.
"""

from __future__ import annotations

import math

from .plant import PlantParams
from .sim import DemandSchedule, NoiseSpec, ScenarioSpec, StepSchedule, Synthetic, mw_to_pu

__all__ = [
    "DESK_DURATION",
    "PAPER_DURATION",
    "DEGRADED_CP_COEFFS",
    "TARGET_PF",
    "scenario1",
    "scenario2",
    "scenario3",
    "scenario4",
    "BUILTIN",
    "builtin",
    "steady_windows",
]

DESK_DURATION = 600.0
PAPER_DURATION = 3600.0
TARGET_PF = 0.995
# plant truth for the robustness run (aged blades)
DEGRADED_CP_COEFFS = (0.45, 115.0, 0.5, 4.5, 22.0, 0.003)
MPT_DEMAND_MW = 1.5


def _scaled(times, duration):
    k = duration / DESK_DURATION
    return [t * k for t in times]


def scenario1(duration: float = DESK_DURATION, **overrides) -> ScenarioSpec:
    """MPT under wind steps 12 -> 7.2 -> 12 m/s with constant 1.5 MW / 0.15 MVAr demand."""
    t = _scaled([0.0, 200.0, 400.0], duration)
    wind = StepSchedule(((t[0], 1.0), (t[1], 7.2 / 12.0), (t[2], 1.0)))
    demand = DemandSchedule(((0.0, mw_to_pu(MPT_DEMAND_MW), mw_to_pu(0.15)),))
    return ScenarioSpec(name="scenario1", duration=duration, wind=wind, demand=demand, **overrides)


def scenario2(duration: float = DESK_DURATION, **overrides) -> ScenarioSpec:
    """Power regulation at rated wind with demand steps 0.45 -> 0.3 -> 0.6 MW."""
    t = _scaled([0.0, 200.0, 400.0], duration)
    demand = DemandSchedule.from_power_factor(
        ((t[0], mw_to_pu(0.45)), (t[1], mw_to_pu(0.3)), (t[2], mw_to_pu(0.6))), TARGET_PF
    )
    wind = StepSchedule(((0.0, 1.0),))
    return ScenarioSpec(name="scenario2", duration=duration, wind=wind, demand=demand, **overrides)


def _synthetic_wind(duration: float) -> Synthetic:
    # gusty but below the MPT/PR threshold early, a plateau through the start of
    # the regulation window, then a lull too weak to meet the reduced demand
    k = duration / DESK_DURATION
    periods = (1300.0, 180.0, 112.0)
    amps = (0.13, 0.035, 0.013)
    phases = (2.43, 4.33, 3.31)
    return Synthetic(
        mean=1.0,
        sinusoids=tuple((a, 2.0 * math.pi / (p * k), ph) for a, p, ph in zip(amps, periods, phases)),
        noise_std=0.005,
        noise_band=(0.02 / k, 0.1 / k),
        v_min=0.6,
        v_max=1.15,
    )


def scenario3(duration: float = DESK_DURATION, **overrides) -> ScenarioSpec:
    """MPT -> PR -> MPT demand steps (1.5 / 0.75 / 1.5 MW) under a fluctuating wind."""
    t = _scaled([0.0, 200.0, 400.0], duration)
    demand = DemandSchedule.from_power_factor(
        ((t[0], mw_to_pu(1.5)), (t[1], mw_to_pu(0.75)), (t[2], mw_to_pu(1.5))), TARGET_PF
    )
    return ScenarioSpec(name="scenario3", duration=duration, wind=_synthetic_wind(duration), demand=demand, **overrides)


def scenario4(duration: float = DESK_DURATION, **overrides) -> ScenarioSpec:
    """Scenario 3 with 20% friction error, degraded Cp and a noisy, biased anemometer.

    The anemometer error ``0.5 + 0.5 sin(0.5 t) + 0.25 cos(t)`` is in m/s.
    """
    base = scenario3(duration)
    belief = PlantParams()
    truth = PlantParams().with_friction(0.012).with_cp_coeffs(DEGRADED_CP_COEFFS)
    noise = NoiseSpec.scaled(
        belief.aero.v_w_base, 0.5, ((0.5, 0.5, 0.0, "sin"), (0.25, 1.0, 0.0, "cos"))
    )
    fields = dict(name="scenario4", plant=truth, belief=belief, noise=noise)
    fields.update(overrides)
    return base.scaled(**fields)


BUILTIN = {
    "scenario1": scenario1,
    "scenario2": scenario2,
    "scenario3": scenario3,
    "scenario4": scenario4,
}


def builtin(name: str, paper_scale: bool = False, **overrides) -> ScenarioSpec:
    try:
        factory = BUILTIN[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(BUILTIN)}") from None
    return factory(PAPER_DURATION if paper_scale else DESK_DURATION, **overrides)


def steady_windows(spec: ScenarioSpec, settle_fraction: float = 0.75) -> list[tuple[float, float]]:
    """Tail of each constant-input segment, after the transient has died out."""
    edges = set(spec.demand.boundaries())
    if isinstance(spec.wind, StepSchedule):
        edges.update(t for t, _ in spec.wind.steps)
    edges = sorted(e for e in edges if e < spec.duration) + [spec.duration]
    return [(a + settle_fraction * (b - a), b) for a, b in zip(edges, edges[1:])]
