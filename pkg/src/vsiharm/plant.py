"""Inverter bridge, on-state voltage injection and the RL filter into a stiff grid.

Two fidelities share the same conduction rule and the same exact RL update:

* duty-averaged, one step per control period;
* switched, triangular carrier with deadtime, ``n_over`` micro-steps per
  carrier period (numba kernel).

The grid is a sum of sinusoids, so the inductor current is advanced exactly:
the forced sinusoidal response is tracked in closed form and only the
piecewise-constant bridge voltage goes through the zero-order-hold update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np

from .params import PHASES, DeviceHealth, SystemParams

TWO_PI_3 = 2.0 * math.pi / 3.0


class Conducting(str, Enum):
    S_TOP = "S_top"
    D_TOP = "D_top"
    S_BOTTOM = "S_bottom"
    D_BOTTOM = "D_bottom"
    NONE = "none"


@dataclass(frozen=True)
class LegConduction:
    phase: str
    conducting_device: Conducting
    v_drop: float


@dataclass(frozen=True)
class PlantState:
    i_abc: np.ndarray
    t: float = 0.0


def leg_output_voltage(gate_high: bool, i_phase: float, leg, v_dc: float,
                       phase: str = "a") -> tuple[float, LegConduction]:
    """Pole voltage to the negative rail for one leg.

    ``leg`` holds the (top switch, top diode, bottom switch, bottom diode)
    device models. Positive current flows out of the leg into the filter.
    """
    s_top, d_top, s_bot, d_bot = leg
    if i_phase == 0.0:
        dev = Conducting.S_TOP if gate_high else Conducting.S_BOTTOM
        return (v_dc if gate_high else 0.0), LegConduction(phase, dev, 0.0)
    if gate_high:
        if i_phase > 0:
            drop = s_top.drop(i_phase)
            return v_dc - drop, LegConduction(phase, Conducting.S_TOP, drop)
        drop = d_top.drop(i_phase)
        return v_dc + drop, LegConduction(phase, Conducting.D_TOP, drop)
    if i_phase > 0:
        drop = d_bot.drop(i_phase)
        return -drop, LegConduction(phase, Conducting.D_BOTTOM, drop)
    drop = s_bot.drop(i_phase)
    return drop, LegConduction(phase, Conducting.S_BOTTOM, drop)


def health_array(health: DeviceHealth) -> np.ndarray:
    """(3 phases, 4 devices, [v_on0, r_on]) array in leg order."""
    arr = np.empty((3, 4, 2))
    for p, phase in enumerate(PHASES):
        for k, dev in enumerate(health.leg(phase)):
            arr[p, k] = dev.v_on0, dev.r_on
    return arr


class GridModel:
    """Stiff three-phase source, phase a = ``v_g_amp*sin(omega*t + theta_g0)``.

    ``harmonics`` maps a harmonic order to ``(amplitude, phase_rad)`` added on
    top of the fundamental as a balanced set rotating with the fundamental's
    order-scaled phase sequence.
    """

    def __init__(self, params: SystemParams, harmonics: dict | None = None):
        self.omega = params.omega
        comps = [(1, params.v_g_amp, params.theta_g0)]
        for h, (amp, ph) in sorted((harmonics or {}).items()):
            if h < 1 or int(h) != h:
                raise ValueError(f"grid harmonic order must be a positive integer, got {h}")
            comps.append((int(h), float(amp), float(ph)))
        self.orders = np.array([c[0] for c in comps], dtype=float)
        self.amps = np.array([c[1] for c in comps])
        self.phases = np.array([c[2] for c in comps])
        r = params.r_l + params.r_s
        l_tot = params.l_g + params.l_s
        z = r + 1j * self.orders * self.omega * l_tot
        # steady-state current forced by -e(t) through the RL branch
        self.i_amps = self.amps / np.abs(z)
        self.i_phases = self.phases - np.angle(z) + math.pi

    def voltage(self, t: float) -> np.ndarray:
        return _sum_sines(t, self.omega, self.orders, self.amps, self.phases)

    def forced_current(self, t: float) -> np.ndarray:
        return _sum_sines(t, self.omega, self.orders, self.i_amps, self.i_phases)


@numba.njit(cache=True)
def _sum_sines(t, omega, orders, amps, phases):
    out = np.zeros(3)
    for n in range(orders.shape[0]):
        h = orders[n]
        base = h * omega * t + phases[n]
        # order h of a positive-sequence set has sequence shift h*120 deg
        out[0] += amps[n] * math.sin(base)
        out[1] += amps[n] * math.sin(base - h * TWO_PI_3)
        out[2] += amps[n] * math.sin(base + h * TWO_PI_3)
    # remove any zero-sequence part, it cannot drive current in a three-wire system
    m = (out[0] + out[1] + out[2]) / 3.0
    out[0] -= m
    out[1] -= m
    out[2] -= m
    return out


@numba.njit(cache=True)
def _pole_voltage(gate_high, i, hp, v_dc):
    # hp: (4, 2) rows top switch, top diode, bottom switch, bottom diode
    if i == 0.0:
        return v_dc if gate_high else 0.0
    a = abs(i)
    if gate_high:
        if i > 0:
            return v_dc - (hp[0, 0] + hp[0, 1] * a)
        return v_dc + (hp[1, 0] + hp[1, 1] * a)
    if i > 0:
        return -(hp[3, 0] + hp[3, 1] * a)
    return hp[2, 0] + hp[2, 1] * a


def _rl_coeffs(params: SystemParams, dt: float) -> tuple[float, float]:
    r = params.r_l + params.r_s
    l_tot = params.l_g + params.l_s
    a = math.exp(-r * dt / l_tot)
    return a, (1.0 - a) / r


def averaged_pole_voltages(i_abc, duty_abc, harr: np.ndarray, v_dc: float) -> np.ndarray:
    out = np.empty(3)
    for p in range(3):
        v_hi = _pole_voltage(True, i_abc[p], harr[p], v_dc)
        v_lo = _pole_voltage(False, i_abc[p], harr[p], v_dc)
        out[p] = duty_abc[p] * v_hi + (1.0 - duty_abc[p]) * v_lo
    return out


def _advance_rl(i_abc, v_pole, t, dt, grid: GridModel, a, b):
    v_n = v_pole - v_pole.mean()
    i_f0 = grid.forced_current(t)
    i_f1 = grid.forced_current(t + dt)
    return i_f1 + a * (i_abc - i_f0) + b * v_n


def step_averaged(state: PlantState, duty_abc, params: SystemParams, health: DeviceHealth,
                  dt: float, grid: GridModel | None = None) -> PlantState:
    """Advance one control period with duty-averaged pole voltages.

    The conducting device of each leg is picked from the current sign at the
    start of the step.
    """
    grid = grid or GridModel(params)
    a, b = _rl_coeffs(params, dt)
    i = np.asarray(state.i_abc, dtype=float)
    v_pole = averaged_pole_voltages(i, np.asarray(duty_abc, dtype=float), health_array(health), params.v_dc)
    return PlantState(_advance_rl(i, v_pole, state.t, dt, grid, a, b), state.t + dt)


# ---------------------------------------------------------------------------
# switched bridge

_BOT, _TOP, _BLANK = 0, 1, 2


@dataclass
class SwitchState:
    """Per-leg commanded gate level and time since its last edge, carried across periods."""
    cmd_prev: np.ndarray
    since_edge: np.ndarray

    @classmethod
    def initial(cls) -> "SwitchState":
        return cls(np.zeros(3, dtype=np.bool_), np.full(3, 1.0))


class SwitchedBridge:
    """Triangular-carrier bridge with deadtime, stepped one control period at a time.

    Switching instants are the exact carrier crossings; the RL branch is
    advanced in ``n_over`` micro-steps per carrier period using the
    time-weighted pole voltage of each micro-step. The conducting device is
    chosen from the current sign at the start of each micro-step.
    """

    def __init__(self, params: SystemParams, health: DeviceHealth, n_over: int = 200,
                 grid: GridModel | None = None, t_deadtime: float | None = None):
        ratio = params.f_sw / params.f_sa
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("f_sw must be an integer multiple of f_sa for the switched bridge")
        if n_over < 2 or int(n_over) != n_over:
            raise ValueError("n_over must be an integer >= 2")
        self.params = params
        self.carriers_per_step = int(round(ratio))
        self.n_over = int(n_over)
        self.t_sw = 1.0 / params.f_sw
        self.dt = self.t_sw / self.n_over
        self.grid = grid or GridModel(params)
        self.harr = health_array(health)
        self.t_dead = params.t_deadtime if t_deadtime is None else t_deadtime
        if not 0.0 <= self.t_dead < self.t_sw / 2:
            raise ValueError("deadtime must be in [0, T_sw/2)")
        self.a, self.b = _rl_coeffs(params, self.dt)
        self.state = SwitchState.initial()

    @property
    def micro_steps_per_control(self) -> int:
        return self.carriers_per_step * self.n_over

    def step(self, state: PlantState, duty_abc, record: np.ndarray | None = None) -> PlantState:
        """Advance one control period.

        ``record`` (shape ``(micro_steps, 6)``) receives the micro-step mean
        pole voltages in columns 0-2 and the instantaneous pole voltage at
        each micro-step midpoint in columns 3-5.
        """
        if record is None:
            record = np.empty((0, 6))
        g = self.grid
        i_new = _switched_kernel(
            np.asarray(state.i_abc, dtype=float).copy(), state.t, np.clip(np.asarray(duty_abc, dtype=float), 0.0, 1.0),
            self.harr, self.params.v_dc, self.t_dead, self.t_sw, self.n_over, self.carriers_per_step,
            self.state.cmd_prev, self.state.since_edge, self.a, self.b,
            g.omega, g.orders, g.i_amps, g.i_phases, record,
        )
        return PlantState(i_new, state.t + self.micro_steps_per_control * self.dt)


@numba.njit(cache=True)
def _leg_segments(d, T, t_dead, cmd_prev, since_edge, seg_t, seg_type):
    """Split one carrier period into bottom/top/blanked segments.

    Returns (n_segments, cmd level at period end, time since last edge at period end).
    """
    e_t = np.empty(3)
    e_l = np.empty(3, dtype=np.bool_)
    ne = 0
    start_level = d >= 1.0
    if start_level != cmd_prev:
        e_t[ne] = 0.0
        e_l[ne] = start_level
        ne += 1
    if 0.0 < d < 1.0:
        e_t[ne] = 0.5 * (1.0 - d) * T
        e_l[ne] = True
        ne += 1
        e_t[ne] = 0.5 * (1.0 + d) * T
        e_l[ne] = False
        ne += 1
    bp = np.empty(9)
    nb = 0
    bp[nb] = 0.0
    nb += 1
    bp[nb] = T
    nb += 1
    for j in range(ne):
        for x in (e_t[j], e_t[j] + t_dead):
            if 0.0 < x < T:
                bp[nb] = x
                nb += 1
    x = t_dead - since_edge
    if 0.0 < x < T:
        bp[nb] = x
        nb += 1
    bp = np.sort(bp[:nb])
    n_seg = 0
    for j in range(nb - 1):
        if bp[j + 1] - bp[j] <= 0.0:
            continue
        mid = 0.5 * (bp[j] + bp[j + 1])
        t_last = -since_edge
        level = cmd_prev
        for m in range(ne):
            if e_t[m] <= mid:
                t_last = e_t[m]
                level = e_l[m]
        seg_t[n_seg, 0] = bp[j]
        seg_t[n_seg, 1] = bp[j + 1]
        if mid - t_last < t_dead:
            seg_type[n_seg] = _BLANK
        elif level:
            seg_type[n_seg] = _TOP
        else:
            seg_type[n_seg] = _BOT
        n_seg += 1
    if ne > 0:
        return n_seg, e_l[ne - 1], T - e_t[ne - 1]
    return n_seg, cmd_prev, since_edge + T


@numba.njit(cache=True)
def _segment_voltage(kind, i, hp, v_dc):
    if kind == _TOP:
        return _pole_voltage(True, i, hp, v_dc)
    if kind == _BOT:
        return _pole_voltage(False, i, hp, v_dc)
    # both gates off: the diode picked by current sign conducts
    if i == 0.0:
        return 0.0
    return _pole_voltage(i < 0.0, i, hp, v_dc)


@numba.njit(cache=True)
def _switched_kernel(i, t0, duty, harr, v_dc, t_dead, T, n_over, n_carriers,
                     cmd_prev, since_edge, a, b, omega, orders, i_amps, i_phases, rec):
    dt = T / n_over
    seg_t = np.empty((3, 8, 2))
    seg_type = np.empty((3, 8), dtype=np.int64)
    n_seg = np.empty(3, dtype=np.int64)
    v = np.empty(3)
    record = rec.shape[0] >= n_over * n_carriers
    kk = 0
    for c in range(n_carriers):
        for p in range(3):
            ns, lvl, since = _leg_segments(duty[p], T, t_dead, cmd_prev[p], since_edge[p],
                                           seg_t[p], seg_type[p])
            n_seg[p] = ns
            cmd_prev[p] = lvl
            since_edge[p] = since
        for k in range(n_over):
            lo = k * dt
            hi = lo + dt
            mid = lo + 0.5 * dt
            for p in range(3):
                acc = 0.0
                inst = 0.0
                for j in range(n_seg[p]):
                    s0 = seg_t[p, j, 0]
                    s1 = seg_t[p, j, 1]
                    ov = min(hi, s1) - max(lo, s0)
                    if ov > 0.0:
                        acc += ov * _segment_voltage(seg_type[p, j], i[p], harr[p], v_dc)
                    if s0 <= mid < s1:
                        inst = _segment_voltage(seg_type[p, j], i[p], harr[p], v_dc)
                v[p] = acc / dt
                if record:
                    rec[kk, 3 + p] = inst
            if record:
                rec[kk, 0] = v[0]
                rec[kk, 1] = v[1]
                rec[kk, 2] = v[2]
            t = t0 + (c * n_over + k) * dt
            mean = (v[0] + v[1] + v[2]) / 3.0
            f0 = _sum_sines(t, omega, orders, i_amps, i_phases)
            f1 = _sum_sines(t + dt, omega, orders, i_amps, i_phases)
            for p in range(3):
                i[p] = f1[p] + a * (i[p] - f0[p]) + b * (v[p] - mean)
            kk += 1
    return i


def step_switched(state: PlantState, duty_abc, params: SystemParams, health: DeviceHealth,
                  dt_micro: float, bridge: SwitchedBridge | None = None) -> PlantState:
    """Advance one control period through the switched bridge.

    ``dt_micro`` must divide the carrier period; a persistent ``bridge`` keeps
    the deadtime edge memory across calls.
    """
    t_sw = 1.0 / params.f_sw
    n_over = t_sw / dt_micro
    if abs(n_over - round(n_over)) > 1e-6:
        raise ValueError("dt_micro does not divide the carrier period")
    if bridge is None:
        bridge = SwitchedBridge(params, health, n_over=int(round(n_over)))
    return bridge.step(state, duty_abc)
