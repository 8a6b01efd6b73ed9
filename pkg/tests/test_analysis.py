import math

import numpy as np
import pytest

from koopman_fcs import analysis
from koopman_fcs.log import LogBuilder

FS = 20e3
F1 = 50.0


def sine(n_periods=5, harmonics=(), fs=FS):
    t = np.arange(int(round(n_periods * fs / F1))) / fs
    x = np.sin(2 * math.pi * F1 * t)
    for order, amp in harmonics:
        x += amp * np.sin(2 * math.pi * order * F1 * t + 0.3)
    return x


def make_log(i_d, i_q, id_ref, iq_ref, switch=None, omega_el=2 * math.pi * 50):
    n = len(i_d)
    b = LogBuilder(50e-6, keep_fine=False)
    for k in range(n):
        b.add(
            time=k * 50e-6, i_d=i_d[k], i_q=i_q[k], eps=0.0, vector=0,
            switch=(1, 1, 1) if switch is None else tuple(switch[k]), cmd_vector=0,
            id_ref=id_ref[k], iq_ref=iq_ref[k], u_dc=300.0, best_cost=0.0, toggles=0,
            duty=(math.nan,) * 3, overmodulated=False,
        )
    return b.build({"omega_el": omega_el, "substeps": 50})


def test_dft_bins_and_amplitudes():
    spec = analysis.dft(sine(harmonics=[(5, 0.1)]), FS, F1)
    i1 = np.flatnonzero(np.isclose(spec.freqs, 50.0))[0]
    i5 = np.flatnonzero(np.isclose(spec.freqs, 250.0))[0]
    assert spec.fundamental_index == i1
    assert spec.amplitude[i1] == pytest.approx(1.0, rel=1e-9)
    assert spec.amplitude[i1] / spec.amplitude[i5] == pytest.approx(10.0, rel=1e-9)


def test_dft_requires_whole_periods():
    with pytest.raises(analysis.WindowError):
        analysis.dft(sine()[:-7], FS, F1)


def test_parseval():
    x = sine(harmonics=[(5, 0.1), (7, 0.05)]) + 0.2 + np.random.default_rng(0).normal(0, 0.03, 2000)
    spec = analysis.dft(x, FS, F1)
    assert spec.mean_square() == pytest.approx(np.mean(x**2), rel=1e-6)


def test_thd_pure_sine_is_zero():
    assert analysis.thd(sine(), F1, FS) == pytest.approx(0.0, abs=1e-9)


def test_thd_constructed_harmonic():
    assert analysis.thd(sine(harmonics=[(5, 0.1)]), F1, FS) == pytest.approx(10.0, abs=0.1)


def test_thd_of_white_residue():
    noise = np.random.default_rng(1).normal(0, 0.05, 2000)
    noise -= noise.mean()
    x = sine() + noise
    r = np.sqrt(np.mean(noise**2))
    expected = 100 * r / (1 / math.sqrt(2))
    assert analysis.thd(x, F1, FS) == pytest.approx(expected, rel=0.02)


def test_thd_needs_fundamental():
    with pytest.raises(analysis.ZeroFundamental):
        analysis.thd(np.zeros(400), F1, FS)


def test_carrier_energy_fraction():
    fs = 1e6
    n = int(fs / F1) * 2
    t = np.arange(n) / fs
    x = np.sin(2 * math.pi * F1 * t) + 0.1 * np.sin(2 * math.pi * 4000 * t) + 0.1 * np.sin(2 * math.pi * 2500 * t)
    spec = analysis.dft(x, fs, F1)
    assert analysis.carrier_energy_fraction(spec, 4000.0) == pytest.approx(0.5, rel=1e-6)


def test_switching_frequency_single_leg_every_period():
    n = 200
    sw = np.ones((n, 3), dtype=int)
    sw[1::2, 0] = -1
    log = make_log(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), switch=sw)
    # leg a makes one transition per period: 20000 changes/s = 10 kHz for that leg
    assert analysis.avg_switching_frequency(log) == pytest.approx(10e3 / 3, rel=0.01)


def test_switching_frequency_symmetric_pwm():
    n_carrier, periods = 300, 20
    k = np.arange(n_carrier * periods)
    tri = 1 - np.abs(2 * ((k + 0.5) / n_carrier % 1) - 1)
    duty = np.array([0.3, 0.5, 0.8])
    fine = np.where(tri[:, None] < duty, 1, -1)
    n_ctrl = len(k) // 50
    log = make_log(*(np.zeros(n_ctrl),) * 4)
    log.fine_switch = fine
    assert analysis.avg_switching_frequency(log) == pytest.approx(1e6 / n_carrier, rel=0.01)


def test_first_order_settling_is_three_time_constants():
    tau = 2e-3
    n = 400
    t = np.arange(n) * 50e-6
    ref = np.where(t >= 1e-3, 100.0, 0.0)
    y = np.where(t >= 1e-3, 100.0 * (1 - np.exp(-(t - 1e-3) / tau)), 0.0)
    log = make_log(np.zeros(n), y, np.zeros(n), ref)
    sm = analysis.step_metrics(log, 1e-3)
    assert sm["d"] is None
    assert sm["q"]["settle"] == pytest.approx(3 * tau, abs=50e-6)
    assert sm["q"]["settled"]


def test_step_metrics_final_target_tracks_offset_response():
    n = 400
    t = np.arange(n) * 50e-6
    ref = np.where(t >= 1e-3, 100.0, 0.0)
    y = np.where(t >= 1e-3, 80.0 * (1 - np.exp(-(t - 1e-3) / 1e-3)), 0.0)
    log = make_log(np.zeros(n), y, np.zeros(n), ref)
    assert not analysis.step_metrics(log, 1e-3)["q"]["settled"]
    assert analysis.step_metrics(log, 1e-3, target="final")["q"]["settled"]


def test_step_not_found():
    n = 100
    log = make_log(*(np.zeros(n),) * 4)
    with pytest.raises(analysis.StepNotFound):
        analysis.step_metrics(log, 1e-3)


def test_setpoint_deviation_invariants():
    n = 2000
    ref_d, ref_q = np.full(n, -50.0), np.full(n, 80.0)
    exact = make_log(ref_d, ref_q, ref_d, ref_q)
    assert analysis.setpoint_deviation(exact) == 0.0
    ripple = np.sin(2 * math.pi * np.arange(n) / 400)  # one electrical period
    offset = make_log(ref_d + 3.0 + ripple, ref_q - 4.0, ref_d, ref_q)
    assert analysis.setpoint_deviation(offset) == pytest.approx(5.0, abs=1e-9)


def test_setpoint_deviation_segment_too_short():
    n = 100
    log = make_log(*(np.zeros(n),) * 4)
    with pytest.raises(analysis.SegmentTooShort):
        analysis.setpoint_deviation(log)


def test_sliding_and_centered_means():
    x = np.arange(10.0)
    np.testing.assert_allclose(analysis.sliding_mean(x, 3), np.arange(1.0, 9.0))
    np.testing.assert_allclose(analysis.centered_mean(x, 3)[1:-1], x[1:-1])
    np.testing.assert_array_equal(analysis.centered_mean(x, 1), x)
