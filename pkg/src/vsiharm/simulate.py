"""Closed-loop time-domain runs at the controller sampling rate.

At each sampling instant the phase currents are sampled, the PI controller
updates ``v_dq*`` and the resulting duties are applied during the *next*
period (one-sample computation delay).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import control, plant
from .params import DeviceHealth, SystemParams, dump_config, operating_point
from .spectrum import SimTrace, Spectrum, delta_spectrum, digest, samples_per_cycle, sync_dft

log = logging.getLogger(__name__)

AVERAGED = "averaged"
SWITCHED = "switched"
FIDELITIES = (AVERAGED, SWITCHED)


class ConvergenceError(RuntimeError):
    """The closed loop did not reach periodic steady state."""


@dataclass(frozen=True)
class SimOptions:
    fidelity: str = AVERAGED
    n_cycles: int = 10
    settle_cycles: int = 20
    max_settle_cycles: int = 200
    settle_tol: float = 1e-6
    settle_v_tol: float = 1e-8
    n_over: int = 200
    warm_start: bool = True
    t_deadtime: float | None = None
    grid_harmonics: tuple = ()

    def __post_init__(self):
        if self.fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}")
        if self.n_cycles < 1 or self.settle_cycles < 0:
            raise ValueError("n_cycles >= 1 and settle_cycles >= 0 required")
        if self.max_settle_cycles < self.settle_cycles:
            raise ValueError("max_settle_cycles < settle_cycles")


def _cycle_rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def simulate(params: SystemParams, health: DeviceHealth, options: SimOptions = SimOptions()) -> SimTrace:
    """Run the closed loop and return the full trace (settling prefix included).

    Settling runs at least ``settle_cycles`` and is extended one cycle at a
    time until the cycle-to-cycle RMS change of every phase current is below
    ``settle_tol`` and the cycle means of ``v_d*``/``v_q*`` move by less than
    ``settle_v_tol``. The second test catches the slow integrator mode, which
    barely shows in the currents. The trace is flagged ``converged=False`` if
    ``max_settle_cycles`` is reached first.
    """
    op = operating_point(params)
    spc = samples_per_cycle(params.f_sa, params.f_g)
    t_sa = params.t_sa
    omega = params.omega
    theta0 = params.theta_g0 - math.pi / 2
    v_limit = params.v_dc / 2.0
    i_ref = control.Dq0Vector(op.i_a_amp, 0.0, 0.0)

    grid = plant.GridModel(params, dict(options.grid_harmonics))
    harr = plant.health_array(health)
    a_rl, b_rl = plant._rl_coeffs(params, t_sa)
    bridge = None
    if options.fidelity == SWITCHED:
        bridge = plant.SwitchedBridge(params, health, options.n_over, grid=grid,
                                      t_deadtime=options.t_deadtime)

    r_tot = params.r_l + params.r_s
    l_tot = params.l_g + params.l_s
    if options.warm_start:
        # phasor steady state: grid + RL drop + fundamental of the device drops
        # (square wave of v_on0 plus r_on*i, opposing the current), advanced by
        # the 1.5-sample lag from controller sample to applied duty
        v_on0 = float(np.mean(harr[:, :, 0]))
        r_on = float(np.mean(harr[:, :, 1]))
        drop = 4.0 / math.pi * v_on0 + r_on * op.i_a_amp if op.i_a_amp > 0 else 0.0
        v0 = complex(params.v_g_amp + r_tot * op.i_a_amp + drop, omega * l_tot * op.i_a_amp)
        v0 *= complex(math.cos(1.5 * omega * t_sa), math.sin(1.5 * omega * t_sa))
        v_d0, v_q0 = v0.real, v0.imag
        i_abc = control.inv_park(theta0, (op.i_a_amp, 0.0, 0.0))
    else:
        v_d0 = v_q0 = 0.0
        i_abc = np.zeros(3)
    ctrl = control.ControllerState(v_d0, v_q0, control.Dq0Vector(v_d0, v_q0, 0.0))
    pending = control.spwm_duties(control.inv_park(theta0 - omega * t_sa, (v_d0, v_q0, 0.0)), params.v_dc)
    state = plant.PlantState(np.asarray(i_abc, dtype=float), 0.0)

    rows: list[np.ndarray] = []
    n = 0
    settle = 0
    converged = False
    prev_rms = prev_v = None

    def run_cycle():
        nonlocal n, state, ctrl, pending
        block = np.empty((spc, 9))
        for j in range(spc):
            t = n * t_sa
            th = omega * t + theta0
            i_dq = control.park(th, state.i_abc)
            err = control.Dq0Vector(i_ref.d - i_dq.d, i_ref.q - i_dq.q, 0.0)
            ctrl, v_dq = control.pi_step(ctrl, err, t_sa, params.k_pc, params.k_ic, v_limit)
            v_abc = control.inv_park(th, v_dq)
            block[j, 0:3] = state.i_abc
            block[j, 3] = v_dq.d
            block[j, 4] = v_dq.q
            block[j, 5:8] = v_abc
            block[j, 8] = th % (2.0 * math.pi)
            duty = pending
            pending = control.spwm_duties(v_abc, params.v_dc)
            if bridge is None:
                v_pole = plant.averaged_pole_voltages(state.i_abc, duty, harr, params.v_dc)
                state = plant.PlantState(plant._advance_rl(state.i_abc, v_pole, state.t, t_sa, grid, a_rl, b_rl),
                                         (n + 1) * t_sa)
            else:
                nxt = bridge.step(state, duty)
                state = plant.PlantState(nxt.i_abc, (n + 1) * t_sa)
            n += 1
        return block

    while True:
        block = run_cycle()
        rows.append(block)
        settle += 1
        rms = np.array([_cycle_rms(block[:, p]) for p in range(3)])
        v_mean = block[:, 3:5].mean(axis=0)
        if settle >= options.settle_cycles and prev_rms is not None:
            if (np.max(np.abs(rms - prev_rms)) < options.settle_tol
                    and np.max(np.abs(v_mean - prev_v)) < options.settle_v_tol):
                converged = True
                break
        if settle >= options.max_settle_cycles:
            break
        prev_rms, prev_v = rms, v_mean
    if not converged:
        log.warning("no periodic steady state after %d cycles", settle)
    for _ in range(options.n_cycles):
        rows.append(run_cycle())

    data = np.concatenate(rows)
    names = ("i_a", "i_b", "i_c", "v_d*", "v_q*", "v_a*", "v_b*", "v_c*", "theta")
    channels = {name: data[:, k].copy() for k, name in enumerate(names)}
    meta = {
        "fidelity": options.fidelity,
        "converged": converged,
        "saturated": ctrl.saturated,
        "config_digest": digest(dump_config(params, health)),
    }
    return SimTrace(dt=t_sa, samples_per_cycle=spc, settle_cycles=settle,
                    n_cycles=options.n_cycles, channels=channels, meta=meta)


REF_CHANNELS = ("v_d*", "v_q*", "v_a*", "v_b*", "v_c*")


@dataclass
class PairedRun:
    baseline: SimTrace
    degraded: SimTrace
    baseline_spectra: dict[str, Spectrum]
    degraded_spectra: dict[str, Spectrum]
    delta: dict[str, Spectrum]

    @property
    def converged(self) -> bool:
        return bool(self.baseline.meta["converged"] and self.degraded.meta["converged"])

    @property
    def saturated(self) -> bool:
        return bool(self.baseline.meta["saturated"] or self.degraded.meta["saturated"])


def extract_spectra(trace: SimTrace, orders, channels=REF_CHANNELS) -> dict[str, Spectrum]:
    return {ch: sync_dft(trace, ch, orders) for ch in channels}


def run_paired(params: SystemParams, health: DeviceHealth, device_id: str, delta_r_on: float,
               options: SimOptions = SimOptions(), orders=range(11),
               baseline: SimTrace | None = None) -> PairedRun:
    """Healthy baseline and degraded run from identical initial conditions, plus their difference spectra."""
    orders = tuple(orders)
    if baseline is None:
        baseline = simulate(params, health, options)
    degraded = simulate(params, health.degrade(device_id, delta_r_on), options)
    s0 = extract_spectra(baseline, orders)
    s1 = extract_spectra(degraded, orders)
    delta = {ch: delta_spectrum(s0[ch], s1[ch]) for ch in REF_CHANNELS}
    return PairedRun(baseline, degraded, s0, s1, delta)
