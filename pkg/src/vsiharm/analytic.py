"""Model chain from a device resistance increase to reference-voltage harmonics.

Pipeline: phase-A error waveform -> dq error (Park) -> controller response
(ideal unity or closed-loop corrected) -> abc references (inverse Park).

Angles: the phase-A current is ``I*sin(omega*t + theta_g0)``. The Park angle
is ``omega*t + theta_g0 - pi/2``, which puts the d axis on the current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .control import inv_park_arrays, park_arrays
from .params import LEG_DEVICES, PHASES, OperatingPoint, SystemParams, device_phase
from .spectrum import Spectrum

IDEAL = "ideal"
LOOP_CORRECTED = "loop_corrected"
MODES = (IDEAL, LOOP_CORRECTED)

# samples per fundamental period for the dense model spectra
N_DENSE = 1 << 14

REF_CHANNELS = ("v_d*", "v_q*", "v_a*", "v_b*", "v_c*")


@dataclass(frozen=True)
class LoopResponse:
    freq: float
    gain: float
    phase: float

    @property
    def phase_deg(self) -> float:
        return math.degrees(self.phase)

    @property
    def complex(self) -> complex:
        return self.gain * complex(math.cos(self.phase), math.sin(self.phase))


def closed_loop_gain(params: SystemParams, f) -> np.ndarray:
    """Complex transfer from dq voltage error to dq voltage reference.

    PI * filter * ADC / (1 + PWM * PI * filter * ADC), written over a common
    denominator so ``f = 0`` gives the exact unity limit of the integrator.
    """
    f = np.asarray(f, dtype=float)
    s = 2j * math.pi * f
    t = params.t_sa
    pi_num = params.k_pc * s + params.k_ic          # PI = pi_num / s
    filt_den = s * params.l_g + params.r_l
    adc_den = 0.5 * t * s + 1.0
    pwm_den = 0.25 * t * s + 1.0
    num = pi_num * pwm_den
    den = s * filt_den * adc_den * pwm_den + pi_num
    return num / den


def loop_response(params: SystemParams, f: float) -> LoopResponse:
    if f < 0:
        raise ValueError("frequency must be >= 0")
    g = complex(closed_loop_gain(params, f))
    return LoopResponse(float(f), abs(g), math.atan2(g.imag, g.real))


def suppression_error(params: SystemParams, order: int) -> float:
    """Percent deviation ``|1 - G|`` of the loop response from unity at a harmonic order."""
    if order < 0:
        raise ValueError("order must be >= 0")
    g = complex(closed_loop_gain(params, order * params.f_g))
    return 100.0 * abs(1.0 - g)


# ---------------------------------------------------------------------------
# error waveform

def current_angle(t, omega: float, theta_g0: float):
    return omega * np.asarray(t, dtype=float) + theta_g0


def park_angle(t, omega: float, theta_g0: float):
    return current_angle(t, omega, theta_g0) - math.pi / 2


def error_waveform(t, delta_r_on: float, op: OperatingPoint, theta_g0: float) -> np.ndarray:
    """Extra phase-A voltage drop from ``delta_r_on`` on the top switch.

    Conducts only while the phase current is positive, weighted by the top
    switch duty ``1/2 + m_d/2*sin(omega*t + theta_g0)``.
    """
    if delta_r_on < 0:
        raise ValueError("delta_r_on must be >= 0")
    phi = current_angle(t, op.omega, theta_g0)
    s = np.sin(phi)
    gate = 0.5 + 0.5 * op.m_d * s
    return delta_r_on * op.i_a_amp * s * (s > 0) * gate


def error_waveform_series(t, delta_r_on: float, op: OperatingPoint, theta_g0: float,
                          n_terms: int = 200) -> np.ndarray:
    """Same waveform with the current-sign indicator as a truncated square-wave series."""
    phi = current_angle(t, op.omega, theta_g0)
    k = np.arange(1, n_terms + 1)[:, None]
    indicator = 0.5 + 2.0 / math.pi * np.sum(np.sin((2 * k - 1) * phi) / (2 * k - 1), axis=0)
    s = np.sin(phi)
    return delta_r_on * op.i_a_amp * s * indicator * (0.5 + 0.5 * op.m_d * s)


def _dense_grid(op: OperatingPoint, theta_g0: float, n: int = N_DENSE):
    """Park angles 0..2pi (exclusive) and the matching times."""
    theta = 2.0 * math.pi * np.arange(n) / n
    t = (theta - theta_g0 + math.pi / 2) / op.omega
    return theta, t


def device_error_waveform(t, device_id: str, delta_r_on: float, op: OperatingPoint,
                          theta_g0: float) -> np.ndarray:
    """Voltage deficit at the pole of the device's leg caused by ``delta_r_on``.

    Positive values mean the pole sits below its ideal level, as for the top
    switch. The device conducts while its current direction and gate state
    both hold; the conduction weight is the duty of its gate.
    """
    if delta_r_on < 0:
        raise ValueError("delta_r_on must be >= 0")
    phase = device_phase(device_id)
    top_switch, top_diode, bot_switch, bot_diode = LEG_DEVICES[phase]
    shift = PHASES.index(phase) * 2.0 * math.pi / 3.0
    s = np.sin(current_angle(t, op.omega, theta_g0) - shift)
    duty = 0.5 + 0.5 * op.m_d * s
    mag = delta_r_on * op.i_a_amp * np.abs(s)
    if device_id == top_switch:
        return mag * (s > 0) * duty
    if device_id == bot_diode:
        return mag * (s > 0) * (1.0 - duty)
    if device_id == top_diode:
        return -mag * (s < 0) * duty
    return -mag * (s < 0) * (1.0 - duty)


def _rfft_phasors(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    X = np.fft.rfft(x) * (2.0 / n)
    X[0] *= 0.5
    return X


def _spectrum_from_samples(channel: str, x: np.ndarray, k_max: int) -> Spectrum:
    X = _rfft_phasors(x)
    return Spectrum(channel, tuple(range(k_max + 1)), X[: k_max + 1])


def _check_k_max(k_max: int, n: int):
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if k_max >= n // 2:
        raise ValueError(f"k_max must be below {n // 2}")


def error_spectrum_abc(delta_r_on: float, op: OperatingPoint, theta_g0: float, k_max: int) -> Spectrum:
    _check_k_max(k_max, N_DENSE)
    _, t = _dense_grid(op, theta_g0)
    return _spectrum_from_samples("dv_an", error_waveform(t, delta_r_on, op, theta_g0), k_max)


def _dq_error_samples(delta_r_on, op, theta_g0, device_id="S1"):
    theta, t = _dense_grid(op, theta_g0)
    abc = [np.zeros_like(theta) for _ in PHASES]
    if device_id == "S1":
        abc[0] = error_waveform(t, delta_r_on, op, theta_g0)
    else:
        abc[PHASES.index(device_phase(device_id))] = device_error_waveform(t, device_id, delta_r_on, op, theta_g0)
    d, q, z = park_arrays(theta, *abc)
    return theta, d, q, z


def error_spectrum_dq(delta_r_on: float, op: OperatingPoint, theta_g0: float,
                      k_max: int) -> tuple[Spectrum, Spectrum]:
    _check_k_max(k_max, N_DENSE)
    _, d, q, _ = _dq_error_samples(delta_r_on, op, theta_g0)
    return _spectrum_from_samples("dv_d", d, k_max), _spectrum_from_samples("dv_q", q, k_max)


def _apply_loop(x: np.ndarray, params: SystemParams) -> np.ndarray:
    """Filter a one-period dq signal through the closed loop, bin by bin."""
    X = np.fft.rfft(x)
    k = np.arange(X.shape[0])
    G = closed_loop_gain(params, k * params.f_g)
    return np.fft.irfft(X * G, n=x.shape[0])


def predicted_ref_samples(delta_r_on: float, op: OperatingPoint, params: SystemParams,
                          mode: str = IDEAL, device_id: str = "S1") -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """One period of predicted reference-voltage increments on the dense Park-angle grid."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    theta, d, q, _ = _dq_error_samples(delta_r_on, op, params.theta_g0, device_id)
    if mode == LOOP_CORRECTED:
        d = _apply_loop(d, params)
        q = _apply_loop(q, params)
    # zero sequence has no current path, so the controller never sees it
    a, b, c = inv_park_arrays(theta, d, q, 0.0)
    return theta, {"v_d*": d, "v_q*": q, "v_a*": a, "v_b*": b, "v_c*": c}


def predicted_ref_harmonics(delta_r_on: float, op: OperatingPoint, params: SystemParams,
                            k_max: int, mode: str = IDEAL, device_id: str = "S1") -> dict[str, Spectrum]:
    _check_k_max(k_max, N_DENSE)
    _, samples = predicted_ref_samples(delta_r_on, op, params, mode, device_id)
    return {ch: _spectrum_from_samples(ch, x, k_max) for ch, x in samples.items()}


def normalized_operating_point(params: SystemParams, i_a_amp: float = 1.0,
                               m_d: float = 0.775) -> OperatingPoint:
    return OperatingPoint(i_a_amp=i_a_amp, m_d=m_d, omega=params.omega)


def sensitivity_table(params: SystemParams, op_normalized: OperatingPoint | None = None,
                      orders: Iterable[int] = range(7), mode: str = IDEAL) -> list[tuple[int, float, float]]:
    """Rows of (order, |dv_d*| per ohm, |dv_q*| per ohm)."""
    op = op_normalized or normalized_operating_point(params)
    orders = list(orders)
    spectra = predicted_ref_harmonics(1.0, op, params, max(orders), mode)
    d, q = spectra["v_d*"], spectra["v_q*"]
    return [(k, abs(d[k]), abs(q[k])) for k in orders]
