"""Dual-mode (maximum power tracking / power regulation) DFIG turbine control.

Modules
-------
numerics    small dense linear algebra, pole placement, RK4
plant       per-unit flux model, drive train and aerodynamics
controller  feedback linearization, speed loop and setpoint gradient flow
sim         closed-loop simulation, wind/demand profiles, metrics
scenarios   the four built-in scenarios
analysis    sweeps and brute-force oracles
config, io, cli
"""

from .controller import synthesize
from .plant import PlantParams
from .scenarios import builtin
from .sim import ScenarioSpec, TimeSeries, run_closed_loop

__all__ = ["PlantParams", "ScenarioSpec", "TimeSeries", "builtin", "run_closed_loop", "synthesize"]
__version__ = "0.1.0"
