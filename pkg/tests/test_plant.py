import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motorlab import (MotorParams, PlantState, VoltageInput, clamp_voltage,
                      dc_motor_derivative, electrical_torque, omega_e_to_rpm,
                      pmsm_derivative, pmsm_jacobian, power_balance_residual,
                      power_quantities, rpm_to_omega_e)
from motorlab.configfile import ConfigError
from motorlab.plant import magnetic_energy, pmsm_input_jacobian
from motorlab.rollout import SimConfig, rk4_step, simulate
from motorlab.references import OperatingPoint

from helpers import ConstantController, assert_rel


def test_derivative_zero_equilibrium(params):
    rate = pmsm_derivative(params, PlantState(0, 0, 0), VoltageInput(0, 0), 0.0)
    assert rate == (0.0, 0.0, 0.0)


def test_derivative_hand_values(params):
    rate = pmsm_derivative(params, PlantState(0.0, 1.0, 0.0), VoltageInput(0, 0), 0.0)
    assert_rel(rate[0], 0.0, 0.0) if rate[0] == 0 else pytest.fail("d-axis rate nonzero")
    assert_rel(rate[1], -0.38 / 0.019, 1e-12)
    assert_rel(rate[2], (4 / 1e-3) * 0.107, 1e-12)


def test_derivative_load_torque_only(params):
    rate = pmsm_derivative(params, PlantState(0, 0, 0), VoltageInput(0, 0), 1.0)
    assert rate[0] == 0.0 and rate[1] == 0.0
    assert_rel(rate[2], -2000.0, 1e-12)


def test_derivative_rejects_non_finite(params):
    with pytest.raises(ValueError):
        pmsm_derivative(params, PlantState(math.nan, 0, 0), VoltageInput(0, 0), 0.0)
    with pytest.raises(ValueError):
        pmsm_derivative(params, PlantState(0, 0, 0), VoltageInput(math.inf, 0), 0.0)


def test_derivative_linear_in_voltage(params):
    state = PlantState(1.2, -3.4, 250.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = VoltageInput(*rng.uniform(-200, 200, 2))
        alpha = float(rng.uniform(-3, 3))
        f0 = np.array(pmsm_derivative(params, state, VoltageInput(0, 0), 0.5))
        fv = np.array(pmsm_derivative(params, state, v, 0.5))
        fav = np.array(pmsm_derivative(params, state,
                                       VoltageInput(alpha * v.v_d, alpha * v.v_q), 0.5))
        np.testing.assert_allclose(fav - f0, alpha * (fv - f0), rtol=1e-9, atol=1e-9)


def test_jacobians_match_finite_differences(params):
    state = PlantState(2.0, -1.5, 300.0)
    v = VoltageInput(12.0, -30.0)
    h = 1e-6
    jac = pmsm_jacobian(params, state)
    for col in range(3):
        bump = np.zeros(3)
        bump[col] = h
        up = pmsm_derivative(params, PlantState(*(np.array(state) + bump)), v, 0.3)
        dn = pmsm_derivative(params, PlantState(*(np.array(state) - bump)), v, 0.3)
        fd = (np.array(up) - np.array(dn)) / (2 * h)
        np.testing.assert_allclose(jac[:, col], fd, rtol=1e-6, atol=1e-6)
    jv = pmsm_input_jacobian(params)
    assert jv[0, 0] == 1.0 / params.L_d and jv[1, 1] == 1.0 / params.L_q


def test_electrical_torque_values(params):
    assert_rel(electrical_torque(params, PlantState(0, 1, 0)), 0.214, 1e-12)
    assert electrical_torque(params, PlantState(7.7, 0, 0)) == 0.0
    assert_rel(electrical_torque(params, PlantState(-5, 1, 0)), 0.292, 1e-12)


def test_spmsm_degeneration_removes_saliency(params):
    import dataclasses
    spm = dataclasses.replace(params, L_d=params.L_q)
    for i_d in (-7.0, 0.0, 4.0):
        assert electrical_torque(spm, PlantState(i_d, 2.0, 0)) == \
            electrical_torque(spm, PlantState(0.0, 2.0, 0))


def test_power_quantities(params):
    assert power_quantities(params, PlantState(0, 0, 123.0), VoltageInput(50, 50)) == (0, 0, 0)
    p_elec, p_cu, p_mech = power_quantities(params, PlantState(0, 1, 0),
                                            VoltageInput(0, 0.38))
    assert_rel(p_elec, 0.38, 1e-12)
    assert_rel(p_cu, 0.38, 1e-12)
    assert p_mech == 0.0
    _, p_cu, _ = power_quantities(params, PlantState(3, 4, 0), VoltageInput(0, 0))
    assert_rel(p_cu, 9.5, 1e-12)


def test_power_balance_on_fine_trajectory(params):
    sim = SimConfig(dt=2e-5, n_steps=5000)  # 0.1 s at a fine step
    op = OperatingPoint(rpm_to_omega_e(2000, params.P), 0.4, t_ramp=0.05)
    traj = simulate(ConstantController(30.0, 60.0), params, op, None, sim)
    res = power_balance_residual(params, traj.dt, traj.i_d, traj.i_q, traj.omega_e,
                                 traj.v_d, traj.v_q)
    assert res < 1e-3


def test_fixed_point_under_simulation(params):
    # steady spin: pick (i_d, i_q, omega) and solve the voltages/load that hold it
    i_d, i_q, w = -3.0, 2.0, 400.0
    v_d = params.R * i_d - params.L_q * w * i_q
    v_q = params.R * i_q + params.L_d * w * i_d + params.Phi * w
    t_load = (params.P * (params.Phi + (params.L_d - params.L_q) * i_d) * i_q
              - params.D * w / params.P)
    state = PlantState(i_d, i_q, w)
    rate = pmsm_derivative(params, state, VoltageInput(v_d, v_q), t_load)
    assert max(abs(r) for r in rate) < 1e-9
    from motorlab.references import TorqueProfile
    op = OperatingPoint(w, t_load, t_ramp=1.0)
    sim = SimConfig(dt=2e-4, n_steps=500)
    traj = simulate(ConstantController(v_d, v_q), params, op,
                    TorqueProfile(t_load), sim, initial_state=state)
    assert abs(traj.i_d[-1] - i_d) < 1e-8
    assert abs(traj.i_q[-1] - i_q) < 1e-8
    assert abs(traj.omega_e[-1] - w) < 1e-6


def test_dc_motor_derivative():
    assert dc_motor_derivative(1, 1, 1, 1, (0, 0), 0, 0) == (0.0, 0.0)
    assert dc_motor_derivative(1, 1, 1, 1, (1, 0), 0, 0) == (-1.0, 1.0)


def test_dc_motor_time_constant():
    # electrically fast regime: speed step response ~ 1 - exp(-t Phi^2/(R J))
    R, L, Phi, J = 2.0, 1e-4, 0.8, 0.05
    tau = R * J / Phi ** 2
    dt = tau / 2000
    y = np.array([0.0, 0.0])
    times = np.arange(4000) * dt
    speeds = np.empty(4000)
    for i in range(4000):
        speeds[i] = y[1]
        y = rk4_step(lambda s: np.array(dc_motor_derivative(R, L, Phi, J,
                                                            (s[0], s[1]), 1.0, 0.0)),
                     y, dt)
    w_inf = 1.0 / Phi
    mask = (speeds > 0.05 * w_inf) & (speeds < 0.95 * w_inf)
    slope = np.polyfit(times[mask], np.log(1.0 - speeds[mask] / w_inf), 1)[0]
    fitted_tau = -1.0 / slope
    assert_rel(fitted_tau, tau, 0.02)


def test_magnetic_energy_and_rpm_conversions(params):
    assert magnetic_energy(params, 2.0, 0.0) == 0.5 * params.L_d * 4.0
    w = rpm_to_omega_e(3000.0, params.P)
    assert_rel(w, 3000 * 2 * 2 * math.pi / 60, 1e-12)
    assert_rel(omega_e_to_rpm(w, params.P), 3000.0, 1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        MotorParams(R=-1, L_d=1, L_q=1, Phi=1, P=2, J=1, D=0, V_max=1, I_max=1,
                    P_max=1, f_min=0, f_max=10, T_Lmin=0, T_Lmax=1)
    with pytest.raises(ValueError):
        MotorParams(R=1, L_d=1, L_q=1, Phi=1, P=2, J=1, D=0, V_max=1, I_max=1,
                    P_max=1, f_min=10, f_max=5, T_Lmin=0, T_Lmax=1)


def test_params_from_config(tmp_path, params):
    path = tmp_path / "motor.cfg"
    lines = [f"{key} = {value}" for key, value in params.to_mapping().items()]
    path.write_text("\n".join(lines) + "\n")
    assert MotorParams.from_config(path) == params

    bad = tmp_path / "missing.cfg"
    bad.write_text("\n".join(line for line in lines if not line.startswith("Vmax")) + "\n")
    with pytest.raises(ConfigError, match="Vmax"):
        MotorParams.from_config(bad)


@settings(max_examples=80, deadline=None)
@given(v_d=st.floats(-1e4, 1e4), v_q=st.floats(-1e4, 1e4),
       v_max=st.floats(1e-3, 1e3))
def test_clamp_voltage_never_exceeds(v_d, v_q, v_max):
    out = clamp_voltage((v_d, v_q), v_max)
    assert math.hypot(out.v_d, out.v_q) <= v_max * (1 + 1e-12)


def test_clamp_voltage_examples():
    assert clamp_voltage((3, 4), 10) == (3, 4)
    out = clamp_voltage((30, 40), 10)
    assert_rel(out.v_d, 6.0, 1e-12)
    assert_rel(out.v_q, 8.0, 1e-12)
    assert clamp_voltage((0, 0), 5.0) == (0.0, 0.0)
