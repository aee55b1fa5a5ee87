import math

import numpy as np
import pytest

from vsiharm import analytic
from vsiharm.control import spwm_duties
from vsiharm.params import DeviceHealth, default_health, default_params, operating_point
from vsiharm.plant import (Conducting, GridModel, PlantState, SwitchedBridge, averaged_pole_voltages,
                           health_array, leg_output_voltage, step_averaged, step_switched)

V_DC = 800.0


def _leg(health=None, phase="a"):
    return (health or default_health()).leg(phase)


def test_top_switch_conducts():
    v, c = leg_output_voltage(True, 10.0, _leg(), V_DC)
    assert v == pytest.approx(799.025, abs=1e-12)
    assert c.conducting_device is Conducting.S_TOP
    assert c.v_drop == pytest.approx(0.975)


def test_bottom_diode_conducts():
    v, c = leg_output_voltage(False, 10.0, _leg(), V_DC)
    assert v == pytest.approx(-0.975, abs=1e-12)
    assert c.conducting_device is Conducting.D_BOTTOM


def test_negative_current_paths():
    v, c = leg_output_voltage(True, -10.0, _leg(), V_DC)
    assert v == pytest.approx(800.975) and c.conducting_device is Conducting.D_TOP
    v, c = leg_output_voltage(False, -10.0, _leg(), V_DC)
    assert v == pytest.approx(0.975) and c.conducting_device is Conducting.S_BOTTOM


@pytest.mark.parametrize("gate", [True, False])
@pytest.mark.parametrize("i", [-20.0, -0.1, 0.0, 0.1, 20.0])
def test_ideal_devices_give_two_levels(gate, i):
    v, _ = leg_output_voltage(gate, i, _leg(DeviceHealth.ideal()), V_DC)
    assert v == (V_DC if gate else 0.0)


def test_zero_current_has_no_drop():
    for gate in (True, False):
        v, c = leg_output_voltage(gate, 0.0, _leg(), V_DC)
        assert v == (V_DC if gate else 0.0)
        assert c.v_drop == 0.0


def test_leg_uses_its_own_devices():
    h = default_health().degrade("S3", 10e-3)
    v_b, c = leg_output_voltage(True, 10.0, _leg(h, "b"), V_DC, phase="b")
    v_a, _ = leg_output_voltage(True, 10.0, _leg(h, "a"), V_DC)
    assert v_a - v_b == pytest.approx(0.1)
    assert c.phase == "b"


def test_health_array_layout():
    h = default_health().degrade("D4", 1e-3)
    arr = health_array(h)
    assert arr.shape == (3, 4, 2)
    assert arr[1, 3, 1] == pytest.approx(23.5e-3)
    assert arr[0, 0, 0] == 0.75


def _steady_duty(params, t, health_drop=0.0):
    """Duties whose averaged pole voltages sustain the unity-power-factor current."""
    op = operating_point(params)
    z = complex(params.r_l, params.omega * params.l_g)
    v = params.v_g_amp + z * op.i_a_amp
    ang = params.omega * t + params.theta_g0
    shifts = np.array([0.0, -2 * math.pi / 3, 2 * math.pi / 3])
    v_abc = abs(v) * np.sin(ang + math.atan2(v.imag, v.real) + shifts)
    return spwm_duties(v_abc, params.v_dc)


def _initial_current(params):
    op = operating_point(params)
    shifts = np.array([0.0, -2 * math.pi / 3, 2 * math.pi / 3])
    return op.i_a_amp * np.sin(params.theta_g0 + shifts)


def _open_loop(params, health, cycles):
    spc = params.samples_per_cycle
    dt = params.t_sa
    grid = GridModel(params)
    state = PlantState(_initial_current(params), 0.0)
    currents, duties = [], []
    for n in range(cycles * spc):
        # mid-step sample keeps the held duty in phase with the sinusoid
        duty = _steady_duty(params, (n + 0.5) * dt)
        currents.append(state.i_abc)
        duties.append(duty)
        state = step_averaged(state, duty, params, health, dt, grid)
    return np.array(currents), np.array(duties)


def test_averaged_open_loop_reaches_operating_current():
    p = default_params()
    i, _ = _open_loop(p, DeviceHealth.ideal(), 10)
    amp = np.max(np.abs(i[-p.samples_per_cycle:, 0]))
    assert amp == pytest.approx(operating_point(p).i_a_amp, rel=0.005)


def test_averaged_uniform_health_stays_balanced():
    p = default_params()
    i, _ = _open_loop(p, default_health(), 5)
    assert np.max(np.abs(i.sum(axis=1))) < 1e-9


def test_single_device_error_is_gated_half_wave():
    p = default_params()
    op = operating_point(p)
    h0, h1 = default_health(), default_health().degrade("S1", 1e-3)
    i, d = _open_loop(p, DeviceHealth.ideal(), 3)
    diff = np.array([averaged_pole_voltages(ii, dd, health_array(h1), p.v_dc)
                     - averaged_pole_voltages(ii, dd, health_array(h0), p.v_dc) for ii, dd in zip(i, d)])
    expected = -1e-3 * i[:, 0] * (i[:, 0] > 0) * d[:, 0]
    assert np.allclose(diff[:, 0], expected, atol=1e-15)
    assert np.all(diff[:, 1:] == 0.0)
    assert -diff[:, 0].min() == pytest.approx(1e-3 * op.i_a_amp * d[:, 0].max(), rel=0.01)


def test_superposition_matches_error_waveform():
    # small filter inductance keeps the duty in phase with the current, as the model assumes
    p = default_params().replace(l_g=0.6e-3)
    op = operating_point(p)
    h0, h1 = DeviceHealth.ideal(), DeviceHealth.ideal().degrade("S1", 1e-3)
    i, d = _open_loop(p, h0, 3)
    t = np.arange(len(i)) * p.t_sa
    v0 = np.array([averaged_pole_voltages(ii, dd, health_array(h0), p.v_dc)[0] for ii, dd in zip(i, d)])
    v1 = np.array([averaged_pole_voltages(ii, dd, health_array(h1), p.v_dc)[0] for ii, dd in zip(i, d)])
    model = analytic.error_waveform(t, 1e-3, op, p.theta_g0)
    peak = np.max(np.abs(model))
    assert np.max(np.abs((v0 - v1) - model)) < 0.01 * peak


def test_energy_balance_averaged():
    from vsiharm.simulate import SimOptions, simulate
    p = default_params()
    tr = simulate(p, DeviceHealth.ideal(), SimOptions())
    sl = tr.analysis_slice
    grid = GridModel(p)
    t = np.arange(len(tr))[sl] * p.t_sa
    i = np.column_stack([tr["i_a"], tr["i_b"], tr["i_c"]])[sl]
    power = np.mean([grid.voltage(tt) @ ii for tt, ii in zip(t, i)])
    assert power == pytest.approx(p.p_out, rel=0.01)


def test_grid_forced_current_solves_rl_branch():
    p = default_params()
    g = GridModel(p)
    t = 1.234e-3
    h = 1e-7
    i = g.forced_current(t)
    di = (g.forced_current(t + h) - g.forced_current(t - h)) / (2 * h)
    # zero bridge voltage: L di/dt = -e - R i
    assert np.allclose(p.l_g * di, -g.voltage(t) - p.r_l * i, atol=1e-5)


def test_grid_harmonic_validation():
    with pytest.raises(ValueError):
        GridModel(default_params(), {0: (1.0, 0.0)})


# ---------------------------------------------------------------------------
# switched bridge

def _switched_period(params, health, duty, i0, n_over, t_dead):
    br = SwitchedBridge(params, health, n_over=n_over, t_deadtime=t_dead)
    rec = np.empty((br.micro_steps_per_control, 6))
    state = PlantState(np.asarray(i0, dtype=float), 0.0)
    # first period settles the edge memory, the second is recorded
    state = br.step(state, duty)
    br.step(state, duty, rec)
    return rec, state


I0 = np.array([10.0, -4.0, -6.0])
DUTY = np.array([0.73, 0.41, 0.36])


def test_switched_zero_deadtime_matches_averaged():
    p = default_params()
    h = default_health()
    rec, state = _switched_period(p, h, DUTY, I0, 200, 0.0)
    v_sw = rec[:, :3].mean(axis=0)
    v_av = averaged_pole_voltages(state.i_abc, DUTY, health_array(h), p.v_dc)
    assert np.max(np.abs(v_sw - v_av)) < 0.002 * p.v_dc


def test_switched_ideal_levels_are_two():
    p = default_params()
    rec, _ = _switched_period(p, DeviceHealth.ideal(), DUTY, I0, 200, 0.0)
    assert set(np.unique(rec[:, 3:])) <= {0.0, p.v_dc}


def test_deadtime_holds_bottom_diode_for_positive_current():
    p = default_params()
    h = default_health()
    rec0, _ = _switched_period(p, h, DUTY, I0, 200, 0.0)
    rec1, state = _switched_period(p, h, DUTY, I0, 200, 1e-6)
    i_a = state.i_abc[0]
    assert i_a > 0
    low = rec1[:, 3][rec1[:, 3] < 100]
    high = rec1[:, 3][rec1[:, 3] >= 100]
    # current ripple moves the drop slightly within the period
    # the current decays during the period, so the drops lie between V_on0 and the start-of-period drop
    assert np.all((low >= -h["D2"].drop(i_a) - 1e-12) & (low <= -h["D2"].v_on0))
    assert np.all((high >= p.v_dc - h["S1"].drop(i_a) - 1e-12) & (high <= p.v_dc - h["S1"].v_on0))
    n_low0 = np.sum(rec0[:, 3] < 100)
    n_low1 = np.sum(rec1[:, 3] < 100)
    assert n_low1 - n_low0 == 4  # 1 us at 250 ns micro-steps
    # mean pole voltage drops by v_dc * t_dead / T_sw
    shift = rec0[:, 0].mean() - rec1[:, 0].mean()
    assert shift == pytest.approx(p.v_dc * 1e-6 * p.f_sw, rel=0.02)


def test_deadtime_raises_pole_for_negative_current():
    p = default_params()
    i0 = -I0
    rec0, _ = _switched_period(p, default_health(), DUTY, i0, 200, 0.0)
    rec1, _ = _switched_period(p, default_health(), DUTY, i0, 200, 1e-6)
    assert rec1[:, 0].mean() - rec0[:, 0].mean() == pytest.approx(p.v_dc * 1e-6 * p.f_sw, rel=0.02)


def test_switched_converges_to_averaged_with_oversampling():
    p = default_params()
    h = default_health()
    errs = []
    for n_over in (50, 200):
        rec, state = _switched_period(p, h, DUTY, I0, n_over, 0.0)
        v_inst = rec[:, 3:].mean(axis=0)
        v_av = averaged_pole_voltages(state.i_abc, DUTY, health_array(h), p.v_dc)
        errs.append(np.max(np.abs(v_inst - v_av)))
    assert errs[1] < errs[0]
    assert errs[1] < 0.002 * p.v_dc


def test_step_switched_rejects_non_dividing_step():
    p = default_params()
    with pytest.raises(ValueError):
        step_switched(PlantState(I0, 0.0), DUTY, p, default_health(), 1.0 / p.f_sw / 200.5)


def test_step_switched_advances_one_period():
    p = default_params()
    s = step_switched(PlantState(I0, 0.0), DUTY, p, default_health(), 1.0 / p.f_sw / 100)
    assert s.t == pytest.approx(p.t_sa)
    assert abs(s.i_abc.sum()) < 1e-9


def test_switched_bridge_validation():
    p = default_params()
    with pytest.raises(ValueError):
        SwitchedBridge(p, default_health(), n_over=1)
    with pytest.raises(ValueError):
        SwitchedBridge(p, default_health(), t_deadtime=30e-6)
