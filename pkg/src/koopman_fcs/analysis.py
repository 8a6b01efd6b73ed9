"""Steady-state and transient metrics on simulation logs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .log import TrajectoryLog

BAND = 0.05


class WindowError(ValueError):
    pass


class ZeroFundamental(ValueError):
    pass


class SegmentTooShort(ValueError):
    pass


class StepNotFound(ValueError):
    pass


@dataclass
class Spectrum:
    freqs: np.ndarray
    amplitude: np.ndarray  # peak values; bin 0 holds the DC value
    fundamental_freq: float
    fundamental_index: int
    n_samples: int

    @property
    def fundamental_amplitude(self) -> float:
        return float(self.amplitude[self.fundamental_index])

    @property
    def dc(self) -> float:
        return float(self.amplitude[0])

    def bin_power(self) -> np.ndarray:
        """Mean-square contribution of each bin."""
        p = self.amplitude**2 / 2.0
        p[0] = self.amplitude[0] ** 2
        if self.n_samples % 2 == 0:
            p[-1] = self.amplitude[-1] ** 2
        return p

    def mean_square(self) -> float:
        return float(self.bin_power().sum())


def dft(signal, fs: float, f_fund: float, rtol: float = 1e-6) -> Spectrum:
    """Rectangular-window DFT of a record spanning whole fundamental periods."""
    x = np.asarray(signal, dtype=float)
    n = len(x)
    if f_fund <= 0 or fs <= 0:
        raise WindowError("fs and f_fund must be positive")
    periods = n * f_fund / fs
    n_per = int(round(periods))
    if n_per < 1 or abs(periods - n_per) > rtol * max(1.0, periods):
        raise WindowError(f"record holds {periods:.6g} fundamental periods, need a whole number >= 1")
    X = np.fft.rfft(x)
    amp = np.abs(X) * 2.0 / n
    amp[0] = X[0].real / n
    if n % 2 == 0:
        amp[-1] = np.abs(X[-1]) / n
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    return Spectrum(freqs, amp, f_fund, n_per, n)


def whole_periods(signal, fs: float, f_fund: float, n_periods: int | None = None):
    """Trailing slice of ``signal`` holding an integer number of periods."""
    x = np.asarray(signal)
    per = fs / f_fund
    if abs(per - round(per)) > 1e-6:
        raise WindowError("sampling rate is not an integer multiple of the fundamental")
    per = int(round(per))
    avail = len(x) // per
    if n_periods is None:
        n_periods = avail
    if n_periods < 1 or n_periods > avail:
        raise WindowError(f"need {n_periods} periods, record holds {avail}")
    return x[len(x) - n_periods * per :]


def thd(data, f_fund: float | None = None, fs: float | None = None) -> float:
    """Total harmonic distortion in percent, all non-DC non-fundamental content."""
    spec = data if isinstance(data, Spectrum) else dft(data, fs, f_fund)
    fund = spec.fundamental_amplitude
    if not fund > 0:
        raise ZeroFundamental("fundamental amplitude is zero")
    p = spec.bin_power()
    rest = p.sum() - p[0] - p[spec.fundamental_index]
    return 100.0 * math.sqrt(max(rest, 0.0)) / (fund / math.sqrt(2.0))


def harmonic_thd(spec: Spectrum, max_freq: float | None = None) -> float:
    """THD over integer multiples of the fundamental only (for comparison)."""
    p = spec.bin_power()
    idx = np.arange(2 * spec.fundamental_index, len(p), spec.fundamental_index)
    if max_freq is not None:
        idx = idx[spec.freqs[idx] <= max_freq]
    return 100.0 * math.sqrt(p[idx].sum()) / (spec.fundamental_amplitude / math.sqrt(2.0))


def carrier_energy_fraction(spec: Spectrum, carrier_freq: float, half_width: float = 100.0) -> float:
    """Share of non-fundamental, non-DC energy within ``half_width`` of carrier multiples."""
    p = spec.bin_power().copy()
    p[0] = 0.0
    p[spec.fundamental_index] = 0.0
    total = p.sum()
    if total <= 0:
        return 0.0
    f = spec.freqs
    m = np.round(f / carrier_freq)
    near = (m >= 1) & (np.abs(f - m * carrier_freq) <= half_width + 1e-9)
    return float(p[near].sum() / total)


def sliding_mean(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[n:] - c[:-n]) / n


def electrical_period_samples(log: TrajectoryLog) -> int:
    w = abs(log.omega_el)
    if w == 0:
        raise SegmentTooShort("no electrical period at standstill; pass window explicitly")
    return int(round(2 * math.pi / w / log.t_s))


def constant_reference_intervals(log: TrajectoryLog):
    """``(start, stop)`` index ranges over which both references are constant."""
    ref = np.stack([log.id_ref, log.iq_ref], axis=1)
    change = np.flatnonzero(np.any(np.diff(ref, axis=0) != 0, axis=1)) + 1
    edges = [0, *change.tolist(), len(ref)]
    return list(zip(edges[:-1], edges[1:]))


def steady_segment(log: TrajectoryLog, interval=None, fraction: float = 0.6):
    """Last ``fraction`` of a constant-reference interval (default: the final one)."""
    start, stop = interval if interval is not None else constant_reference_intervals(log)[-1]
    first = stop - int(math.floor(fraction * (stop - start)))
    return first, stop


def setpoint_deviation(log: TrajectoryLog, window: int | None = None, segment=None) -> float:
    """Mean geometric distance between sliding-mean dq current and reference.

    ``window`` is in controller periods (default: one electrical period).
    """
    start, stop = segment if segment is not None else steady_segment(log)
    n = window if window is not None else electrical_period_samples(log)
    if n < 1 or stop - start < n:
        raise SegmentTooShort(f"segment of {stop - start} samples, window {n}")
    i_d_ref = log.id_ref[start:stop]
    i_q_ref = log.iq_ref[start:stop]
    if np.ptp(i_d_ref) or np.ptp(i_q_ref):
        raise SegmentTooShort("references change inside the segment")
    md = sliding_mean(log.i_d[start:stop], n)
    mq = sliding_mean(log.i_q[start:stop], n)
    return float(np.mean(np.hypot(md - i_d_ref[0], mq - i_q_ref[0])))


def avg_switching_frequency(log: TrajectoryLog, segment=None) -> float:
    """Leg transitions / (2 * 3 * duration): one on-off cycle is one period."""
    start, stop = segment if segment is not None else (0, len(log))
    duration = (stop - start) * log.t_s
    if duration <= 0:
        return 0.0
    if log.fine_switch is not None and len(log.fine_switch):
        n = int(log.meta.get("substeps", 50))
        sw = np.asarray(log.fine_switch[start * n : stop * n])
    else:
        sw = np.asarray(log.switch[start:stop])
    changes = int(np.count_nonzero(np.diff(sw, axis=0)))
    return changes / (2.0 * 3.0 * duration)


def max_leg_changes_per_period(log: TrajectoryLog) -> int:
    """Largest number of transitions of any leg within one controller period."""
    if log.fine_switch is None or not len(log.fine_switch):
        return int(np.max(np.abs(np.diff(log.switch, axis=0)) // 2, initial=0))
    n = int(log.meta.get("substeps", 50))
    sw = np.asarray(log.fine_switch, dtype=int)
    prev = np.vstack([sw[:1], sw[:-1]])
    ch = (sw != prev).astype(int).reshape(-1, n, 3).sum(axis=1)
    return int(ch.max(initial=0))


def centered_mean(x, n: int) -> np.ndarray:
    """Moving average over ``n`` samples centred on each sample, shrinking at the edges."""
    x = np.asarray(x, dtype=float)
    if n <= 1:
        return x.copy()
    lo, hi = (n - 1) // 2, n // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    a = np.clip(idx - lo, 0, len(x))
    b = np.clip(idx + hi + 1, 0, len(x))
    return (c[b] - c[a]) / (b - a)


def step_metrics(log: TrajectoryLog, step_time: float, band: float = BAND, smooth: int = 1,
                 target: str = "reference"):
    """Rise (first entry) and settling (final entry) into a +-band after a reference step.

    The band is ``band`` times the step magnitude, centred on the new
    reference (``target="reference"``) or on the mean of the steady part of
    the interval (``target="final"``). ``smooth`` > 1 applies a centred
    moving average first, e.g. one PWM carrier period to remove
    carrier-synchronous ripple from oversampled currents. Times are seconds
    after ``step_time``, judged up to the next reference change; axes whose
    reference does not change are ``None``.
    """
    if target not in ("reference", "final"):
        raise ValueError("target must be 'reference' or 'final'")
    k = int(round(step_time / log.t_s))
    if k <= 0 or k >= len(log):
        raise StepNotFound(f"no samples around t={step_time}")
    out = {}
    found = False
    for axis, ref, meas in (("d", log.id_ref, log.i_d), ("q", log.iq_ref, log.i_q)):
        before, after = ref[k - 1], ref[k]
        if before == after:
            out[axis] = None
            continue
        found = True
        nxt = np.flatnonzero(ref[k:] != after)
        stop = k + (int(nxt[0]) if len(nxt) else len(ref) - k)
        y = centered_mean(meas[k:stop], smooth)
        goal = after
        if target == "final":
            a, b = steady_segment(log, (k, stop))
            goal = float(np.mean(meas[a:b]))
        tol = band * abs(after - before)
        inside = np.abs(y - goal) <= tol
        if not inside.any():
            out[axis] = {"rise": math.nan, "settle": math.nan, "settled": False}
            continue
        first = int(np.argmax(inside))
        outside = np.flatnonzero(~inside)
        settled = not (len(outside) and outside[-1] == len(inside) - 1)
        last = int(outside[-1]) + 1 if len(outside) else 0
        out[axis] = {
            "rise": first * log.t_s,
            "settle": last * log.t_s if settled else math.nan,
            "settled": settled,
        }
    if not found:
        raise StepNotFound(f"no reference change at t={step_time}")
    return out


@dataclass
class SteadyStateMetrics:
    thd: float
    setpoint_deviation: float
    avg_switching_freq: float


def phase_current_spectrum(log: TrajectoryLog, segment=None, phase: int = 0) -> Spectrum:
    """DFT of one phase current over whole electrical periods at the fine rate."""
    if log.fine_iabc is None:
        raise WindowError("log has no fine-rate phase currents")
    start, stop = segment if segment is not None else steady_segment(log)
    n = int(log.meta.get("substeps", 50))
    fs = 1.0 / log.fine_dt
    f_fund = abs(log.omega_el) / (2 * math.pi)
    if f_fund == 0:
        raise ZeroFundamental("standstill has no fundamental")
    x = log.fine_iabc[start * n : stop * n, phase]
    x = _whole_periods_fine(x, fs, f_fund)
    return dft(x, fs, f_fund, rtol=1e-3)


def _whole_periods_fine(x, fs, f_fund):
    per = fs / f_fund
    n_per = int(len(x) // per)
    if n_per < 1:
        raise WindowError("segment shorter than one electrical period")
    n = int(round(n_per * per))
    return x[len(x) - n :]


def steady_state_metrics(log: TrajectoryLog, segment=None) -> SteadyStateMetrics:
    seg = segment if segment is not None else steady_segment(log)
    spec = phase_current_spectrum(log, seg)
    return SteadyStateMetrics(
        thd=thd(spec),
        setpoint_deviation=setpoint_deviation(log, segment=seg),
        avg_switching_freq=avg_switching_frequency(log, seg),
    )
