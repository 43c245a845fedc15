import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfig_dualmode.analysis import gradient_flow, grid_argmin, hessian_sweep, random_machine, random_stable_spectrum
from dfig_dualmode.controller import (
    INPUT_MATRIX,
    REFERENCE_GAIN,
    ControllerState,
    GradientGains,
    ObjectiveWeights,
    UnstableGainError,
    best_theta,
    closed_loop_matrix,
    controller_output,
    critical_root,
    design_gain,
    determinant_terms,
    equilibrium_fluxes,
    f_composite,
    feedback_linearize,
    g_function,
    gradient_f,
    objective_V,
    operating_point,
    polar_from_u,
    reduced_speed_derivative,
    setpoint_derivatives,
    speed_control_r2,
    synthesize,
    torque_from_u,
    u_from_polar,
)
from dfig_dualmode.plant import (
    MachineParams,
    PlantParams,
    electrical_derivatives,
    electromagnetic_torque,
    electromagnetic_torque_quadratic,
    state_matrix,
)

BELIEF = PlantParams()
MP = BELIEF.machine
W = ObjectiveWeights()
GG = GradientGains()


@pytest.fixture(scope="module")
def g():
    return synthesize(MP)


@pytest.fixture(scope="module")
def g_ref():
    return synthesize(MP, REFERENCE_GAIN)


# ---------------------------------------------------------------- synthesis


def test_a_prime_closed_form(g, g_ref):
    expected = -1.0 / (4 * 1.0 * 0.00706)
    assert expected == pytest.approx(-35.4108, abs=1e-4)
    for gains in (g, g_ref):
        assert gains.a_prime == pytest.approx(expected, rel=1e-15)
        assert gains.a_prime_composite == pytest.approx(expected, rel=1e-9)


def test_a_prime_identity_random_gains():
    rng = np.random.default_rng(3)
    for _ in range(50):
        k = design_gain(MP, random_stable_spectrum(rng), method="direct")
        gains = synthesize(MP, k)
        assert gains.a_prime_composite == pytest.approx(gains.a_prime, rel=1e-9)


def test_synthesized_invariants(g):
    assert np.all(g.closed_loop_poles.real < 0)
    assert g.q1 > 0 and g.q1 * g.q3 - g.q2**2 > 0
    assert g.a_prime < 0
    assert np.allclose(g.m.T @ g.m, np.eye(2), atol=1e-12)
    assert np.allclose(g.m.T @ g.hessian @ g.m, g.dd, rtol=0, atol=1e-10 * np.max(np.abs(g.hessian)))


def test_unstable_gain_rejected():
    with pytest.raises(UnstableGainError):
        synthesize(MP, -REFERENCE_GAIN)
    with pytest.raises(ValueError):
        synthesize(MP, np.zeros((2, 3)))


@pytest.mark.parametrize("gain", ["designed", "reference"])
def test_determinant_identities(gain, g, g_ref):
    gains = g if gain == "designed" else g_ref
    delta, d1, d2 = determinant_terms(MP, gains.k)
    e = MP.l_s * MP.l_r - MP.l_m**2
    det = np.linalg.det(closed_loop_matrix(MP, gains.k))
    assert det == pytest.approx(delta / e**2, rel=1e-8)
    assert gains.q1 * gains.q3 - gains.q2**2 == pytest.approx(MP.r_s**2 * MP.l_m**4 / delta**2, rel=1e-9)
    assert gains.q1 == pytest.approx(MP.r_s * MP.l_m**2 * (d1**2 + d2**2) / delta**2, rel=1e-9)


def test_hessian_positive_definite_for_random_machines():
    checks = hessian_sweep(200, seed=11)
    assert len(checks) == 200
    assert all(c.positive_definite for c in checks)
    assert len({c.machine for c in checks}) == 200


def test_random_machine_keeps_inductance_order():
    rng = np.random.default_rng(5)
    for _ in range(500):
        mp = random_machine(rng)
        assert mp.l_s > mp.l_m and mp.l_r > mp.l_m


# ---------------------------------------------------------------- feedback linearization


def test_feedback_linearize_trivial_cases(g):
    assert feedback_linearize(np.zeros(4), 0.37, 0.0, 0.0, g) == (0.0, 0.0)
    g0 = synthesize(MP, np.zeros((2, 4))) if np.all(np.linalg.eigvals(state_matrix(MP)).real < 0) else None
    assert g0 is not None
    assert feedback_linearize([0, 0, 0, 1], 1.0, 0.0, 0.0, g0) == (1.0, 0.0)


def test_feedback_linearize_yields_linear_loop(g):
    rng = np.random.default_rng(2)
    acl = closed_loop_matrix(MP, g.k)
    for _ in range(500):
        x = rng.normal(size=4)
        wr = rng.uniform(0.2, 2.0)
        u1, u2 = rng.normal(size=2)
        v_dr, v_qr = feedback_linearize(x, wr, u1, u2, g)
        lhs = electrical_derivatives(x, wr, (1.0, 0.0, v_dr, v_qr), MP)
        rhs = acl @ x + [1.0, 0.0, u1, u2]
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(g.k @ x))))


# ---------------------------------------------------------------- equilibrium and torque


def test_equilibrium_residual(g):
    rng = np.random.default_rng(4)
    acl = closed_loop_matrix(MP, g.k)
    for _ in range(100):
        u = rng.normal(size=2) * 2
        x = equilibrium_fluxes(*u, g)
        assert np.max(np.abs(acl @ x + [1.0, 0.0, *u])) < 1e-9


def test_equilibrium_at_zero_input_is_nonzero(g):
    x = equilibrium_fluxes(0.0, 0.0, g)
    oracle = np.linalg.solve(closed_loop_matrix(MP, g.k), [-1.0, 0.0, 0.0, 0.0])
    assert np.allclose(x, oracle, rtol=1e-10)
    assert np.linalg.norm(x) > 0.1


def test_torque_at_equilibrium_is_quadratic_in_u(g):
    rng = np.random.default_rng(8)
    for _ in range(200):
        u = rng.normal(size=2) * 3
        t_direct = electromagnetic_torque(equilibrium_fluxes(*u, g), MP)
        assert t_direct == pytest.approx(torque_from_u(*u, g), rel=1e-10, abs=1e-10)


def test_torque_chain(g):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        r = rng.uniform(0, 10)
        th = rng.uniform(0, 2 * math.pi)
        u = u_from_polar(r, th, g)
        x = equilibrium_fluxes(*u, g)
        expected = r * r + g.a_prime
        for t_e in (electromagnetic_torque(x, MP), electromagnetic_torque_quadratic(x, MP), torque_from_u(*u, g)):
            worst = max(worst, abs(t_e - expected) / abs(expected))
    assert worst < 1e-9


def test_polar_vertex(g):
    u = u_from_polar(0.0, 1.234, g)
    assert np.allclose(u, g.u_vertex, rtol=0, atol=1e-14)
    assert torque_from_u(*u, g) == pytest.approx(g.a_prime, rel=1e-10)
    with pytest.raises(ValueError):
        u_from_polar(-1.0, 0.0, g)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 50.0), st.floats(0.0, 2 * math.pi, exclude_max=True))
def test_polar_round_trip(r, theta):
    gains = _G
    r2, th2 = polar_from_u(*u_from_polar(r, theta, gains), gains)
    assert r2 == pytest.approx(r, rel=1e-10)
    diff = (th2 - theta + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 1e-10 * max(1.0, 1.0 / r)


def test_theta_and_theta_plus_pi(g):
    ua = u_from_polar(3.0, 0.4, g)
    ub = u_from_polar(3.0, 0.4 + math.pi, g)
    assert not np.allclose(ua, ub)
    assert torque_from_u(*ua, g) == pytest.approx(torque_from_u(*ub, g), rel=1e-12)


def test_theta_does_not_move_torque(g):
    rng = np.random.default_rng(12)
    r = 5.7
    vals = [torque_from_u(*u_from_polar(r, th, g), g) for th in rng.uniform(0, 2 * math.pi, 200)]
    assert np.ptp(vals) <= 1e-12 * abs(np.mean(vals))


# ---------------------------------------------------------------- speed loop


def test_speed_loop_at_setpoint_equals_g(g):
    r2 = speed_control_r2(1.1, 1.1, 0.0, 1.0, GG, g, BELIEF)
    assert r2 == g_function(1.1, 0.0, 1.0, g, BELIEF)
    assert r2 > 0


def test_speed_loop_clamp(g):
    assert speed_control_r2(0.5, 100.0, 0.0, 1.0, GG, g, BELIEF) == 0.0


def test_speed_loop_linear_error_dynamics(g):
    rng = np.random.default_rng(13)
    for _ in range(100):
        wr, wd = rng.uniform(0.3, 2.0, 2)
        beta, vw = rng.uniform(0, 10), rng.uniform(0.6, 1.1)
        dw = reduced_speed_derivative(wr, wd, beta, vw, GG, g, BELIEF)
        assert dw * BELIEF.drive.j == pytest.approx(-GG.alpha * (wr - wd), rel=1e-9, abs=1e-12)


def _reduced_run(g, w0, wd, beta, vw, t_end, h=1e-3):
    w = w0
    n = int(round(t_end / h))
    traj = [w]

    def f(x):
        return reduced_speed_derivative(x, wd, beta, vw, GG, g, BELIEF)

    for _ in range(n):
        k1 = f(w)
        k2 = f(w + 0.5 * h * k1)
        k3 = f(w + 0.5 * h * k2)
        k4 = f(w + h * k3)
        w += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        traj.append(w)
    return np.array(traj)


@pytest.mark.parametrize("w0", [0.2, 0.5, 2.0])
def test_reduced_loop_converges(g, w0):
    traj = _reduced_run(g, w0, 1.0, 0.0, 1.0, 10 * BELIEF.drive.j / GG.alpha)
    assert abs(traj[-1] - 1.0) < 1e-4
    lyap = 0.5 * (traj - 1.0) ** 2
    assert np.all(np.diff(lyap) <= 1e-15)


def test_critical_root_values(g):
    root = critical_root(0.0, 1.0, g, BELIEF)
    assert root > 3500
    assert abs(g_function(root, 0.0, 1.0, g, BELIEF)) < 1e-8
    below = root * np.geomspace(1e-6, 0.999, 60)
    assert all(g_function(w, 0.0, 1.0, g, BELIEF) > 0 for w in below)
    assert g_function(2 * root, 0.0, 1.0, g, BELIEF) < 0


def test_critical_root_trends(g):
    roots = [critical_root(0.0, v, g, BELIEF) for v in (0.6, 0.8, 1.0)]
    assert roots[0] < roots[1] < roots[2]
    by_beta = [critical_root(b, 1.0, g, BELIEF) for b in (0.0, 10.0)]
    assert abs(by_beta[0] - by_beta[1]) / by_beta[0] < 0.2


def test_g_positive_at_small_speed(g):
    assert g_function(1e-3, 0.0, 1.0, g, BELIEF) > 0


# ---------------------------------------------------------------- objective


def test_objective_values():
    assert objective_V(0.4, 0.1, 0.4, 0.1, W) == 0
    assert objective_V(0.5, 0.1, 0.4, 0.1, W) == pytest.approx(0.05)
    assert objective_V(0.3, 0.1, 0.4, 0.1, W) == pytest.approx(objective_V(0.5, 0.1, 0.4, 0.1, W))
    assert objective_V(0.3, -0.2, 0.4, 0.1, W) > 0
    with pytest.raises(ValueError):
        ObjectiveWeights(w_p=1.0, w_q=1.0, w_pq=2.0)


def test_gradient_gains_validation():
    with pytest.raises(ValueError):
        GradientGains(eps2=0.0)


def test_f_theta_periodic(g):
    cs = (1.05, 2.1, 3.0)
    a = f_composite(cs, 0.95, 0.3, 0.03, g, BELIEF, W)
    b = f_composite((1.05, 2.1 + 2 * math.pi, 3.0), 0.95, 0.3, 0.03, g, BELIEF, W)
    assert a == pytest.approx(b, rel=1e-12)
    assert f_composite(ControllerState(*cs), 0.95, 0.3, 0.03, g, BELIEF, W) == a


def test_f_matches_operating_point(g):
    cs = (0.9, 4.0, 2.0)
    r2 = max(g_function(0.9, 2.0, 0.8, g, BELIEF), 0.0)
    op = operating_point(0.9, r2, 4.0, g)
    assert f_composite(cs, 0.8, 0.3, 0.03, g, BELIEF, W) == objective_V(op.p, op.q, 0.3, 0.03, W)


def test_mpt_minimizer_sits_at_aerodynamic_optimum(g):
    m = grid_argmin(1.0, 0.9, 0.09, g, BELIEF, W)
    lam = BELIEF.aero.lambda_nom * m.omega_rd / 1.0
    assert abs(lam - 8.1) / 8.1 < 0.05
    assert m.beta == BELIEF.aero.beta_min
    assert m.f <= m.grid_f


# ---------------------------------------------------------------- gradient and flow


def test_gradient_richardson(g):
    rng = np.random.default_rng(14)
    for _ in range(10):
        cs = np.array([rng.uniform(0.6, 1.3), rng.uniform(0, 2 * math.pi), rng.uniform(1, 10)])
        vw, pd = rng.uniform(0.7, 1.1), rng.uniform(0.2, 0.6)
        a = gradient_f(cs, vw, pd, 0.1 * pd, g, BELIEF, W)
        b = gradient_f(cs, vw, pd, 0.1 * pd, g, BELIEF, W, rel_step=5e-7)
        assert np.linalg.norm(a - b) < 1e-4 * np.linalg.norm(a)


def test_gradient_one_sided_at_pitch_bounds(g):
    lo = gradient_f((1.0, 1.0, 0.0), 0.9, 0.4, 0.04, g, BELIEF, W)
    in_ = gradient_f((1.0, 1.0, 1e-3), 0.9, 0.4, 0.04, g, BELIEF, W)
    assert np.all(np.isfinite(lo))
    assert lo[2] == pytest.approx(in_[2], rel=1e-2)
    hi = gradient_f((1.0, 1.0, 30.0), 0.9, 0.4, 0.04, g, BELIEF, W)
    assert np.all(np.isfinite(hi))


def test_theta_gradient_integrates_to_zero(g):
    th = np.linspace(0, 2 * math.pi, 400, endpoint=False)
    d = [gradient_f((1.0, t, 2.0), 0.9, 0.4, 0.04, g, BELIEF, W)[1] for t in th]
    assert abs(np.mean(d)) < 1e-6 * np.max(np.abs(d))


def test_gradient_small_at_minimizer(g):
    m = grid_argmin(1.0, 0.9, 0.09, g, BELIEF, W)
    grad = gradient_f((m.omega_rd, m.theta, m.beta), 1.0, 0.9, 0.09, g, BELIEF, W)
    # pitch rests on its lower bound, so only the interior coordinates vanish
    assert np.linalg.norm(grad[:2]) < 1e-3
    assert grad[2] > 0


def test_setpoint_derivative_projection():
    assert np.array_equal(setpoint_derivatives((1, 0, 5), np.zeros(3), GG), np.zeros(3))
    out = setpoint_derivatives((1, 0, 0.0), np.array([1.0, 2.0, 3.0]), GG)
    assert np.allclose(out, [-GG.eps1, -2 * GG.eps2, 0.0])
    out = setpoint_derivatives((1, 0, 30.0), np.array([0.0, 0.0, -3.0]), GG)
    assert out[2] == 0.0
    out = setpoint_derivatives((1, 0, 0.0), np.array([0.0, 0.0, -3.0]), GG)
    assert out[2] == pytest.approx(6.0)


def test_flow_descends(g):
    vw, pd, qd = 0.9, 0.35, 0.035
    y = np.array([0.9, best_theta(0.9, 0.0, vw, pd, qd, g, BELIEF, W), 2.0])
    last = f_composite(y, vw, pd, qd, g, BELIEF, W)
    dt = 0.02
    for _ in range(200):
        grad = gradient_f(y, vw, pd, qd, g, BELIEF, W)
        y = y + dt * setpoint_derivatives(y, grad, GG)
        y[2] = min(max(y[2], 0.0), 30.0)
        f = f_composite(y, vw, pd, qd, g, BELIEF, W)
        assert f <= last + 1e-6
        last = f


def test_flow_matches_grid_oracle(g):
    vw, pd = 0.8, 0.9
    oracle = grid_argmin(vw, pd, 0.1 * pd, g, BELIEF, W)
    th0 = best_theta(1.0, 0.0, vw, pd, 0.1 * pd, g, BELIEF, W)
    res = gradient_flow((1.0, th0, 0.0), vw, pd, 0.1 * pd, g, BELIEF, W, GG)
    assert abs(res.state[0] - oracle.omega_rd) / oracle.omega_rd < 0.01
    assert abs(res.state[2] - oracle.beta) <= 0.5
    assert abs(res.f - oracle.f) < 1e-4


# ---------------------------------------------------------------- one controller evaluation


def test_controller_output_wiring(g):
    cs = ControllerState(1.0, 2.5, 1.0)
    x = equilibrium_fluxes(0.3, -0.2, g)
    out = controller_output(cs, 1.02, x, 0.95, 0.4, 0.04, g, GG, BELIEF, W)
    r2 = speed_control_r2(1.02, 1.0, 1.0, 0.95, GG, g, BELIEF)
    assert out.r2 == r2
    assert (out.u1, out.u2) == u_from_polar(math.sqrt(r2), 2.5, g)
    assert (out.v_dr, out.v_qr) == feedback_linearize(x, 1.02, out.u1, out.u2, g)
    assert out.beta == 1.0
    grad = gradient_f(cs.as_array(), 0.95, 0.4, 0.04, g, BELIEF, W)
    assert np.array_equal(out.setpoint_rates, setpoint_derivatives(cs, grad, GG))
    assert out.objective == f_composite(cs, 0.95, 0.4, 0.04, g, BELIEF, W)


def test_controller_output_rejects_nan(g):
    with pytest.raises(ValueError):
        controller_output((1, 0, 0), 1.0, [np.nan, 0, 0, 0], 1.0, 0.4, 0.0, g, GG, BELIEF, W)


def test_controller_output_at_flow_fixed_point(g):
    vw, pd = 0.8, 0.9
    th0 = best_theta(1.0, 0.0, vw, pd, 0.1 * pd, g, BELIEF, W)
    res = gradient_flow((1.0, th0, 0.0), vw, pd, 0.1 * pd, g, BELIEF, W, GG)
    wr = float(res.state[0])
    r2 = speed_control_r2(wr, wr, res.state[2], vw, GG, g, BELIEF)
    x = equilibrium_fluxes(*u_from_polar(math.sqrt(r2), res.state[1], g), g)
    a = controller_output(res.state, wr, x, vw, pd, 0.1 * pd, g, GG, BELIEF, W)
    assert np.linalg.norm(a.setpoint_rates) < 1e-6
    # the plant sits still under these voltages
    from dfig_dualmode.plant import plant_derivatives

    d = plant_derivatives(np.append(x, wr), a.v_dr, a.v_qr, a.beta, vw, BELIEF)
    assert np.linalg.norm(d) < 1e-9


_G = synthesize(MP)
