"""
Setpoints by gradient flow, checked against brute force
========================================================

The outer loop moves the speed setpoint, the polar angle and the pitch
downhill on the power-tracking error. Here the flow runs on its own
(speed loop assumed settled) and is compared with a dense grid search.
"""

import numpy as np

from dfig_dualmode.analysis import gradient_flow, grid_argmin
from dfig_dualmode.controller import GradientGains, ObjectiveWeights, best_theta, synthesize
from dfig_dualmode.plant import PlantParams

belief = PlantParams()
g = synthesize(belief.machine)
w, gg = ObjectiveWeights(), GradientGains()

# %%
# Maximum-power regime: demand above what the wind can give, so the
# pitch rests on its lower bound and the speed heads for the best tip-speed ratio.
print(f"{'v_w':>5} {'P_d':>5} | {'flow w_rd':>9} {'grid w_rd':>9} | {'flow f':>10} {'grid f':>10}")
for v_w, p_d in ((0.6, 0.9), (0.8, 0.9), (1.0, 1.0)):
    q_d = 0.1 * p_d
    th0 = best_theta(1.0, 0.0, v_w, p_d, q_d, g, belief, w)
    flow = gradient_flow((1.0, th0, 0.0), v_w, p_d, q_d, g, belief, w, gg)
    grid = grid_argmin(v_w, p_d, q_d, g, belief, w)
    print(f"{v_w:5.2f} {p_d:5.2f} | {flow.state[0]:9.4f} {grid.omega_rd:9.4f} | {flow.f:10.3e} {grid.f:10.3e}")

# %%
# Power-regulation regime: plenty of wind, small demand. The error can be
# driven to zero, and the flow trades pitch against speed to get there.
v_w, p_d = 1.0, 0.3
th0 = best_theta(1.0, 0.0, v_w, p_d, 0.1 * p_d, g, belief, w)
flow = gradient_flow((1.0, th0, 0.0), v_w, p_d, 0.1 * p_d, g, belief, w, gg)
print("regulation end point (w_rd, theta, beta):", np.round(flow.state, 4), "f =", f"{flow.f:.2e}")
