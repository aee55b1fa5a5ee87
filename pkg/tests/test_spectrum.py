import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsiharm.spectrum import (SimTrace, Spectrum, SpectrumError, delta_spectrum, dft_phasors, digest,
                              samples_per_cycle, spectra_from_csv, spectra_to_csv, sync_dft)

SPC = 400


def _trace(x_of_theta, n_cycles=4, settle=1, offset=0.3):
    n = SPC * (settle + n_cycles)
    theta = offset + 2 * math.pi * np.arange(n) / SPC
    return SimTrace(5e-5, SPC, settle, n_cycles, {"x": x_of_theta(theta), "theta": np.mod(theta, 2 * math.pi)})


def test_pure_cosine():
    s = sync_dft(_trace(lambda th: 3 * np.cos(th)), "x", range(8))
    assert abs(s[1]) == pytest.approx(3.0, rel=1e-12)
    assert abs(s[1] - 3.0) < 1e-12
    others = [abs(s[k]) for k in s.orders if k != 1]
    assert max(others) < 1e-10


def test_dc_channel():
    s = sync_dft(_trace(lambda th: np.full_like(th, 2.5)), "x", range(5))
    assert s[0] == pytest.approx(2.5, rel=1e-14)
    assert max(abs(s[k]) for k in range(1, 5)) < 1e-12


def test_construct_then_extract():
    truth = Spectrum("x", (0, 1, 2, 5), np.array([0.7, 1.2 * np.exp(0.4j), 0.05 * np.exp(-2.1j), 3e-4j]))
    s = sync_dft(_trace(truth.synthesize), "x", truth.orders)
    assert np.allclose(s.phasors, truth.phasors, atol=1e-10, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False), min_size=6, max_size=6),
       st.floats(0, 2 * math.pi))
def test_leakage_free_recovery(phasors, offset):
    orders = (0, 1, 3, 4, 7, 11)
    truth = Spectrum("x", orders, np.array(phasors))
    s = sync_dft(_trace(truth.synthesize, offset=offset), "x", orders)
    scale = max(1.0, float(np.max(np.abs(truth.phasors))))
    assert np.allclose(s.phasors, truth.phasors, rtol=0, atol=1e-9 * scale)


def test_window_shift_by_whole_cycles():
    truth = Spectrum("x", (0, 2), np.array([1.0, 0.5j]))
    tr = _trace(truth.synthesize, n_cycles=6, settle=0)
    a = sync_dft(tr, "x", (0, 2), n_cycles=3, settle_cycles=0)
    b = sync_dft(tr, "x", (0, 2), n_cycles=3, settle_cycles=3)
    assert np.allclose(a.phasors, b.phasors, atol=1e-12)


def test_sync_dft_errors():
    tr = _trace(np.cos)
    with pytest.raises(SpectrumError):
        sync_dft(tr, "nope", (1,))
    with pytest.raises(SpectrumError):
        sync_dft(tr, "x", (1,), n_cycles=10)
    with pytest.raises(SpectrumError):
        sync_dft(tr, "x", ())
    with pytest.raises(SpectrumError):
        samples_per_cycle(20e3, 47.0)
    assert samples_per_cycle(20e3, 50.0) == 400


def test_dft_phasors_direct():
    theta = 2 * math.pi * np.arange(100) / 100
    x = 1.0 + 2.0 * np.cos(3 * theta - 0.5)
    ph = dft_phasors(x, theta, (0, 3))
    assert ph[0] == pytest.approx(1.0)
    assert ph[1] == pytest.approx(2.0 * np.exp(-0.5j))


def test_spectrum_dc_forced_real():
    s = Spectrum("x", (0, 1), np.array([1 + 1e-3j, 1j]))
    assert s[0] == 1.0
    assert s[1] == 1j
    with pytest.raises(KeyError):
        s[2]
    assert 1 in s and 2 not in s
    assert s.k_max == 1


def test_spectrum_validation():
    with pytest.raises(SpectrumError):
        Spectrum("x", (0, 0), np.zeros(2))
    with pytest.raises(SpectrumError):
        Spectrum("x", (-1,), np.zeros(1))
    with pytest.raises(SpectrumError):
        Spectrum("x", (0, 1), np.zeros(3))


def test_delta_identical_is_zero():
    s = Spectrum("v_d*", (0, 1, 2), np.array([1.0, 2 + 1j, -3j]))
    d = delta_spectrum(s, s)
    assert np.all(d.phasors == 0)


def test_delta_recovers_increment():
    h = Spectrum("v_d*", (0, 1, 2), np.array([310.0, 2 + 1j, -3j]))
    inc = Spectrum("v_d*", (0, 1, 2), np.array([1.5e-3, 2e-3j, 1e-3]))
    assert np.allclose(delta_spectrum(h, h + inc).phasors, inc.phasors, atol=1e-15 * 310)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), min_size=4, max_size=4),
       st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), min_size=4, max_size=4))
def test_delta_inverts_addition(hv, dv):
    h = Spectrum("c", (1, 2, 3, 4), np.array(hv))
    d = Spectrum("c", (1, 2, 3, 4), np.array(dv))
    assert np.allclose(delta_spectrum(h, h + d).phasors, d.phasors, rtol=0, atol=1e-12 * 1e3)


def test_delta_mismatch_errors():
    a = Spectrum("v_d*", (0, 1), np.zeros(2))
    with pytest.raises(SpectrumError):
        delta_spectrum(a, Spectrum("v_d*", (0, 2), np.zeros(2)))
    with pytest.raises(SpectrumError):
        delta_spectrum(a, Spectrum("v_q*", (0, 1), np.zeros(2)))


def test_spectra_csv_roundtrip(tmp_path):
    specs = [Spectrum("v_d*", (0, 1, 2), np.array([-1.5e-3, 2e-3 * np.exp(1j), 1e-4j])),
             Spectrum("v_a*", (0, 1), np.array([0.0, 1 + 1j]))]
    path = tmp_path / "s.csv"
    spectra_to_csv(specs, path)
    assert path.read_text().splitlines()[0] == "channel,order,magnitude,phase_deg"
    back = spectra_from_csv(path)
    for s in specs:
        assert np.allclose(back[s.channel].phasors, s.phasors, rtol=1e-14, atol=1e-18)


def test_spectra_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SpectrumError):
        spectra_from_csv(path)
    path.write_text("channel,order,magnitude,phase_deg\nv_d*,x,1,0\n")
    with pytest.raises(SpectrumError):
        spectra_from_csv(path)


def test_trace_csv_roundtrip(tmp_path):
    tr = _trace(np.sin)
    tr.meta.update({"fidelity": "averaged", "converged": True})
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,theta"
    assert lines[1].startswith("# ") and "fidelity=averaged" in lines[1]
    back = SimTrace.from_csv(path)
    assert back.dt == tr.dt and back.samples_per_cycle == SPC
    assert np.array_equal(back["x"], tr["x"])
    assert back.meta["converged"] == "True"


def test_trace_validation():
    with pytest.raises(SpectrumError):
        SimTrace(1e-4, 200, 0, 1, {"a": np.zeros(3), "b": np.zeros(4)})
    tr = _trace(np.sin, n_cycles=2, settle=1)
    assert tr.analysis_slice == slice(SPC, 3 * SPC)
    assert len(tr) == 3 * SPC


def test_digest_stable():
    assert digest("abc") == digest("abc")
    assert len(digest("abc")) == 16
    assert digest("abc") != digest("abd")
