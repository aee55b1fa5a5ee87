"""Resistance-increase estimation and degraded-phase localization from difference spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import analytic
from .params import EOL_FRACTION, LEG_DEVICES, DeviceHealth, OperatingPoint, SystemParams
from .spectrum import Spectrum

DEFAULT_ORDERS = (0, 1, 2)
NOISE_FLOOR = 10e-6

# correlation patterns of a single-phase error after zero-sequence removal
PHASE_PATTERNS = {
    "A": np.array([2.0, -1.0, -1.0]),
    "B": np.array([-1.0, 2.0, -1.0]),
    "C": np.array([-1.0, -1.0, 2.0]),
}


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class HealthEstimate:
    delta_r_on_hat: float
    phase_hat: str
    eol_fraction: float
    residual: float
    orders_used: tuple[int, ...]
    clamped: bool = False
    confidence: float = 0.0
    device_model: str = "S1"


@dataclass(frozen=True)
class EolReport:
    delta_r_on_hat: float
    r_on0: float
    eol_fraction: float
    status: str
    phase_hat: str
    confidence: float
    residual: float
    orders_used: tuple[int, ...]
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "delta_r_on_hat": self.delta_r_on_hat,
            "r_on0": self.r_on0,
            "eol_fraction": self.eol_fraction,
            "status": self.status,
            "phase_hat": self.phase_hat,
            "confidence": self.confidence,
            "residual": self.residual,
            "orders_used": " ".join(str(k) for k in self.orders_used),
        }
        out.update(self.extra)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.as_dict().items())


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def model_sensitivities(op: OperatingPoint, params: SystemParams, orders: Sequence[int],
                        mode: str = analytic.LOOP_CORRECTED, channel: str = "v_d*",
                        device_id: str = "S1") -> np.ndarray:
    """Complex predicted increments per ohm at the given operating point."""
    spectra = analytic.predicted_ref_harmonics(1.0, op, params, max(orders), mode, device_id)
    s = spectra[channel]
    return np.array([s[k] for k in orders])


def estimate_delta_ron(delta: Mapping[str, Spectrum], op: OperatingPoint, params: SystemParams,
                       orders: Sequence[int] = DEFAULT_ORDERS, mode: str = analytic.LOOP_CORRECTED,
                       channels: Sequence[str] = ("v_d*",), device_id: str = "S1",
                       r_on0: float = 22.5e-3, use_phase: bool = True) -> HealthEstimate:
    """Weighted least-squares fit of one resistance increase to measured increments.

    Minimizes ``sum_k w_k |dV_k - dR*s_k|^2`` with ``w_k = |s_k|^2``. With
    ``use_phase=False`` only magnitudes are fitted. Negative solutions are
    clamped to zero and flagged.
    """
    orders = tuple(orders)
    if not orders:
        raise EstimationError("no orders requested")
    if op.i_a_amp <= 0:
        raise EstimationError("operating point has zero current")
    meas, sens = [], []
    for ch in channels:
        if ch not in delta:
            raise EstimationError(f"missing spectrum {ch!r}")
        spec = delta[ch]
        missing = [k for k in orders if k not in spec]
        if missing:
            raise EstimationError(f"spectrum {ch!r} lacks orders {missing}")
        meas.extend(spec[k] for k in orders)
        sens.extend(model_sensitivities(op, params, orders, mode, ch, device_id))
    v = np.array(meas, dtype=complex)
    s = np.array(sens, dtype=complex)
    if not use_phase:
        v, s = np.abs(v).astype(complex), np.abs(s).astype(complex)
    w = np.abs(s) ** 2
    denom = float(np.sum(w * np.abs(s) ** 2))
    if denom <= 0.0 or not math.isfinite(denom):
        raise EstimationError("model sensitivities are all zero for the chosen orders")
    dr = float(np.sum(w * (np.conj(s) * v).real) / denom)
    clamped = dr < 0.0
    if clamped:
        dr = 0.0
    signal = float(np.sum(w * np.abs(v) ** 2))
    resid = float(np.sum(w * np.abs(v - dr * s) ** 2))
    residual = math.sqrt(resid / signal) if signal > 0 else 0.0
    return HealthEstimate(
        delta_r_on_hat=dr,
        phase_hat="none",
        eol_fraction=dr / (EOL_FRACTION * r_on0) if r_on0 > 0 else math.inf,
        residual=residual,
        orders_used=orders,
        clamped=clamped,
        device_model=device_id,
    )


def locate_phase(delta_abc: Mapping[str, Spectrum], orders: Sequence[int] = (0, 1),
                 noise_floor: float = NOISE_FLOOR) -> tuple[str, float]:
    """Match per-order abc increments against the three single-phase patterns.

    The normalized correlation of pattern ``p`` is the fraction of increment
    energy lying along ``p``; confidence is ``(c_best - c_second) / (1 - c_second)``,
    so an exact pattern gives 1. Returns ``("none", 0.0)`` below ``noise_floor``.
    """
    x = np.array([[delta_abc[ch][k] for ch in ("v_a*", "v_b*", "v_c*")] for k in orders])
    if np.max(np.abs(x)) < noise_floor:
        return "none", 0.0
    energy = float(np.sum(np.abs(x) ** 2))
    corr = {}
    for label, p in PHASE_PATTERNS.items():
        proj = x @ p
        corr[label] = float(np.sum(np.abs(proj) ** 2) / (p @ p) / energy)
    ranked = sorted(corr.items(), key=lambda kv: kv[1], reverse=True)
    (best, c1), (_, c2) = ranked[0], ranked[1]
    confidence = (c1 - c2) / (1.0 - c2) if c2 < 1.0 else 0.0
    return best, float(min(max(confidence, 0.0), 1.0))


def estimate_health(delta: Mapping[str, Spectrum], op: OperatingPoint, params: SystemParams,
                    orders: Sequence[int] = DEFAULT_ORDERS, mode: str = analytic.LOOP_CORRECTED,
                    r_on0: float = 22.5e-3, noise_floor: float = NOISE_FLOOR) -> HealthEstimate:
    """Locate the phase, then fit each device model of that leg and keep the best.

    Models whose fit clamps at zero are skipped unless all of them clamp; ties
    in residual go to the earlier device (top switch first).
    """
    phase, conf = locate_phase(delta, noise_floor=noise_floor)
    if phase == "none":
        est = estimate_delta_ron(delta, op, params, orders, mode, device_id="S1", r_on0=r_on0)
        return HealthEstimate(est.delta_r_on_hat, phase, est.eol_fraction, est.residual,
                              est.orders_used, est.clamped, 0.0, est.device_model)
    fits = [estimate_delta_ron(delta, op, params, orders, mode, device_id=dev, r_on0=r_on0)
            for dev in LEG_DEVICES[phase.lower()]]
    valid = [f for f in fits if not f.clamped] or fits
    est = min(valid, key=lambda f: f.residual)
    return HealthEstimate(est.delta_r_on_hat, phase, est.eol_fraction, est.residual,
                          est.orders_used, est.clamped, conf, est.device_model)


def eol_status(fraction: float) -> str:
    if fraction >= 1.0:
        return "end-of-life"
    if fraction >= 0.5:
        return "watch"
    return "healthy"


def eol_report(est: HealthEstimate, health0: DeviceHealth, device_id: str | None = None,
               criterion: float = EOL_FRACTION) -> EolReport:
    device_id = device_id or est.device_model
    r_on0 = health0[device_id].r_on
    if r_on0 <= 0:
        raise EstimationError("initial on-state resistance must be > 0")
    fraction = est.delta_r_on_hat / (criterion * r_on0)
    # guard against float noise right at the threshold, e.g. 1.125e-3 / (0.05*22.5e-3)
    fraction = round(fraction, 12)
    return EolReport(est.delta_r_on_hat, r_on0, fraction, eol_status(fraction), est.phase_hat,
                     est.confidence, est.residual, est.orders_used,
                     extra={"device_model": device_id, "clamped": est.clamped})
