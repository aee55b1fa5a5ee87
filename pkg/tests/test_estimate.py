import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import runcache
from vsiharm import analytic
from vsiharm.estimate import (EstimationError, HealthEstimate, eol_report, eol_status, estimate_delta_ron,
                              estimate_health, locate_phase)
from vsiharm.params import DeviceModel, OperatingPoint, default_health, default_params, operating_point
from vsiharm.spectrum import Spectrum

P = default_params()
OP = operating_point(P)


def _analytic_delta(dr, op=OP, mode=analytic.LOOP_CORRECTED, device="S1"):
    return analytic.predicted_ref_harmonics(dr, op, P, 10, mode, device)


def _zero_delta():
    return {ch: Spectrum(ch, tuple(range(11)), np.zeros(11)) for ch in analytic.REF_CHANNELS}


def test_exact_round_trip():
    est = estimate_delta_ron(_analytic_delta(1e-3), OP, P)
    assert est.delta_r_on_hat == pytest.approx(1e-3, rel=1e-10)
    assert est.residual < 1e-10
    assert not est.clamped
    assert est.orders_used == (0, 1, 2)


def test_zero_input():
    est = estimate_delta_ron(_zero_delta(), OP, P)
    assert est.delta_r_on_hat == 0.0
    assert est.eol_fraction == 0.0


def test_negative_solution_clamped():
    neg = {ch: s.scaled(-1.0) for ch, s in _analytic_delta(1e-3).items()}
    est = estimate_delta_ron(neg, OP, P)
    assert est.delta_r_on_hat == 0.0
    assert est.clamped


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 10e-3), st.floats(0.1, 50.0), st.sampled_from(analytic.MODES))
def test_consistency_noise_free(dr, i_a, mode):
    op = OperatingPoint(i_a, OP.m_d, OP.omega)
    est = estimate_delta_ron(_analytic_delta(dr, op, mode), op, P, mode=mode)
    assert est.delta_r_on_hat == pytest.approx(dr, rel=1e-10, abs=1e-18)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-2, 1e2))
def test_scale_equivariance(alpha):
    base = runcache.paired("S1", 1e-3).delta if runcache._paired else _analytic_delta(1e-3)
    e1 = estimate_delta_ron(base, OP, P)
    e2 = estimate_delta_ron({ch: s.scaled(alpha) for ch, s in base.items()}, OP, P)
    assert e2.delta_r_on_hat == pytest.approx(alpha * e1.delta_r_on_hat, rel=1e-12)


def test_single_order_is_ratio():
    d = _analytic_delta(0.7e-3)
    est = estimate_delta_ron(d, OP, P, orders=(0,))
    assert est.delta_r_on_hat == pytest.approx(0.7e-3, rel=1e-12)


def test_magnitude_only_fit():
    # a common phase error on the AC orders (DC phasors are real by construction)
    d = {ch: s.select((1, 2)).scaled(cmath.exp(0.3j)) for ch, s in _analytic_delta(1e-3).items()}
    assert estimate_delta_ron(d, OP, P, orders=(1, 2), use_phase=False).delta_r_on_hat == \
        pytest.approx(1e-3, rel=1e-10)
    assert estimate_delta_ron(d, OP, P, orders=(1, 2)).delta_r_on_hat == pytest.approx(1e-3 * math.cos(0.3), rel=1e-10)


def test_estimation_errors():
    with pytest.raises(EstimationError):
        estimate_delta_ron(_analytic_delta(1e-3), OP, P, orders=())
    with pytest.raises(EstimationError):
        estimate_delta_ron(_analytic_delta(1e-3), OperatingPoint(0.0, 0.7, OP.omega), P)
    short = {ch: s.select((0, 1)) for ch, s in _analytic_delta(1e-3).items()}
    with pytest.raises(EstimationError):
        estimate_delta_ron(short, OP, P, orders=(0, 1, 2))
    with pytest.raises(EstimationError):
        estimate_delta_ron({}, OP, P)


# ---------------------------------------------------------------------------
# phase localization

def _pattern(weights, orders=(0, 1)):
    base = np.array([1.0, 0.8 * cmath.exp(0.4j)])
    return {ch: Spectrum(ch, orders, w * base) for ch, w in zip(("v_a*", "v_b*", "v_c*"), weights)}


@pytest.mark.parametrize("weights,label", [((2, -1, -1), "A"), ((-1, 2, -1), "B"), ((-1, -1, 2), "C")])
def test_exact_pattern(weights, label):
    ph, conf = locate_phase(_pattern(weights))
    assert ph == label
    assert conf == pytest.approx(1.0, abs=1e-12)


def test_zero_input_is_none():
    assert locate_phase(_zero_delta()) == ("none", 0.0)


def test_below_noise_floor_is_none():
    assert locate_phase(_pattern((2e-7, -1e-7, -1e-7)))[0] == "none"


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-math.pi, math.pi), st.sampled_from(["S1", "S4", "S5", "D2", "D3"]))
def test_localization_invariant_to_common_factor(mag, ang, dev):
    d = _analytic_delta(1e-3, mode=analytic.IDEAL, device=dev)
    k = mag * cmath.exp(1j * ang)
    a = locate_phase(d)
    b = locate_phase({ch: s.scaled(k) for ch, s in d.items()}, noise_floor=0.0)
    assert a[0] == b[0]
    assert a[1] == pytest.approx(b[1], abs=1e-9)


@pytest.mark.parametrize("dev,label", [("S4", "B"), ("S5", "C"), ("S3", "B")])
def test_sim_localization(dev, label):
    run = runcache.paired(dev, 1e-3)
    est = estimate_health(run.delta, OP, P)
    assert est.phase_hat == label
    assert est.confidence > 0.9
    assert est.delta_r_on_hat == pytest.approx(1e-3, rel=0.05)
    assert est.device_model == dev


def test_sim_estimate_s1():
    run = runcache.paired("S1", 1e-3)
    est = estimate_delta_ron(run.delta, OP, P)
    assert est.delta_r_on_hat == pytest.approx(1e-3, rel=0.05)
    dc = estimate_delta_ron(run.delta, OP, P, orders=(0,))
    assert dc.delta_r_on_hat == pytest.approx(1e-3, rel=0.02)


def test_monotonic_sweep():
    estimates = [estimate_delta_ron(runcache.paired("S1", round(0.1e-3 * n, 12)).delta, OP, P).delta_r_on_hat
                 for n in range(11)]
    assert all(b > a for a, b in zip(estimates, estimates[1:]))


# ---------------------------------------------------------------------------
# end-of-life report

def _est(dr):
    return HealthEstimate(dr, "A", 0.0, 0.0, (0, 1, 2), device_model="S1")


def test_eol_threshold():
    r = eol_report(_est(1.125e-3), default_health())
    assert r.eol_fraction == 1.0
    assert r.status == "end-of-life"


def test_eol_zero_and_watch():
    assert eol_report(_est(0.0), default_health()).status == "healthy"
    r = eol_report(_est(0.5625e-3), default_health())
    assert r.eol_fraction == pytest.approx(0.5)
    assert r.status == "watch"


def test_eol_configurable_criterion():
    r = eol_report(_est(1.125e-3), default_health(), criterion=0.10)
    assert r.eol_fraction == pytest.approx(0.5)


def test_eol_status_bands():
    assert [eol_status(x) for x in (0.0, 0.49, 0.5, 0.99, 1.0, 3.0)] == \
        ["healthy", "healthy", "watch", "watch", "end-of-life", "end-of-life"]


def test_eol_requires_positive_r_on():
    h = default_health().with_device("S1", DeviceModel(0.75, 0.0))
    with pytest.raises(EstimationError):
        eol_report(_est(1e-3), h)


def test_report_text_and_dict():
    r = eol_report(_est(1e-3), default_health())
    d = r.as_dict()
    assert d["status"] == "watch" and d["device_model"] == "S1"
    text = r.to_text()
    assert "delta_r_on_hat = 0.001\n" in text
    assert all(" = " in line for line in text.splitlines())
