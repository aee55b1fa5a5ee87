"""dq-frame current control: Park transforms, PI step and SPWM duties."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI_3 = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class Dq0Vector:
    d: float
    q: float
    zero: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.q) and math.isfinite(self.zero)):
            raise ValueError(f"non-finite dq0 vector ({self.d}, {self.q}, {self.zero})")

    def __iter__(self):
        return iter((self.d, self.q, self.zero))

    def scaled(self, alpha: float) -> "Dq0Vector":
        return Dq0Vector(alpha * self.d, alpha * self.q, alpha * self.zero)


def park_matrix(theta: float) -> np.ndarray:
    """Amplitude-invariant abc -> dq0 matrix for the cosine-referenced angle ``theta``."""
    c0, c1, c2 = math.cos(theta), math.cos(theta - TWO_PI_3), math.cos(theta + TWO_PI_3)
    s0, s1, s2 = math.sin(theta), math.sin(theta - TWO_PI_3), math.sin(theta + TWO_PI_3)
    return np.array([
        [2 / 3 * c0, 2 / 3 * c1, 2 / 3 * c2],
        [-2 / 3 * s0, -2 / 3 * s1, -2 / 3 * s2],
        [1 / 3, 1 / 3, 1 / 3],
    ])


def park(theta: float, abc) -> Dq0Vector:
    a, b, c = abc
    c0, c1, c2 = math.cos(theta), math.cos(theta - TWO_PI_3), math.cos(theta + TWO_PI_3)
    s0, s1, s2 = math.sin(theta), math.sin(theta - TWO_PI_3), math.sin(theta + TWO_PI_3)
    d = 2.0 / 3.0 * (a * c0 + b * c1 + c * c2)
    q = -2.0 / 3.0 * (a * s0 + b * s1 + c * s2)
    return Dq0Vector(d, q, (a + b + c) / 3.0)


def inv_park(theta: float, dq0) -> np.ndarray:
    d, q, z = dq0
    return np.array([
        d * math.cos(theta) - q * math.sin(theta) + z,
        d * math.cos(theta - TWO_PI_3) - q * math.sin(theta - TWO_PI_3) + z,
        d * math.cos(theta + TWO_PI_3) - q * math.sin(theta + TWO_PI_3) + z,
    ])


def park_arrays(theta: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Vectorized ``park`` over sample arrays; returns (d, q, zero)."""
    d = 2.0 / 3.0 * (a * np.cos(theta) + b * np.cos(theta - TWO_PI_3) + c * np.cos(theta + TWO_PI_3))
    q = -2.0 / 3.0 * (a * np.sin(theta) + b * np.sin(theta - TWO_PI_3) + c * np.sin(theta + TWO_PI_3))
    return d, q, (a + b + c) / 3.0


def inv_park_arrays(theta: np.ndarray, d: np.ndarray, q: np.ndarray, z=0.0):
    a = d * np.cos(theta) - q * np.sin(theta) + z
    b = d * np.cos(theta - TWO_PI_3) - q * np.sin(theta - TWO_PI_3) + z
    c = d * np.cos(theta + TWO_PI_3) - q * np.sin(theta + TWO_PI_3) + z
    return a, b, c


@dataclass(frozen=True)
class ControllerState:
    integrator_d: float = 0.0
    integrator_q: float = 0.0
    last_v_ref_dq: Dq0Vector = Dq0Vector(0.0, 0.0, 0.0)
    saturated: bool = False


def pi_step(state: ControllerState, err_dq: Dq0Vector, t_sa: float, k_pc: float, k_ic: float,
            v_limit: float = math.inf) -> tuple[ControllerState, Dq0Vector]:
    """One backward-Euler PI update per axis.

    The output is clamped to ``[-v_limit, v_limit]`` per axis; clamping sets
    ``saturated`` on the returned state and leaves the integrators alone.
    """
    if t_sa <= 0:
        raise ValueError("t_sa must be > 0")
    integ_d = state.integrator_d + k_ic * err_dq.d * t_sa
    integ_q = state.integrator_q + k_ic * err_dq.q * t_sa
    v_d = k_pc * err_dq.d + integ_d
    v_q = k_pc * err_dq.q + integ_q
    sat = abs(v_d) > v_limit or abs(v_q) > v_limit
    if sat:
        v_d = min(max(v_d, -v_limit), v_limit)
        v_q = min(max(v_q, -v_limit), v_limit)
    v_ref = Dq0Vector(v_d, v_q, 0.0)
    return ControllerState(integ_d, integ_q, v_ref, state.saturated or sat), v_ref


def spwm_duties(v_ref_abc, v_dc: float) -> np.ndarray:
    if v_dc <= 0:
        raise ValueError("v_dc must be > 0")
    return np.clip(0.5 + np.asarray(v_ref_abc, dtype=float) / v_dc, 0.0, 1.0)
